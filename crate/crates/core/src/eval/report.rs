//! Per-bucket nDCG reports in the seven-column bucket layout.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

use super::buckets::{ratios, BucketAssignment, BucketId};
use super::judgments::Judgments;
use super::metrics::Gain;
use crate::encoder::{dot, Side, TowerModel};
use crate::error::{Error, Result};
use crate::text::normalize;

/// Scores for every judged (query, product) combination, row-major by query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub num_queries: usize,
    pub num_products: usize,
    pub scores: Vec<f64>,
}

impl ScoreMatrix {
    pub fn get(&self, q: u32, p: u32) -> f64 {
        self.scores[q as usize * self.num_products + p as usize]
    }

    pub fn row(&self, q: u32) -> &[f64] {
        let start = q as usize * self.num_products;
        &self.scores[start..start + self.num_products]
    }

    /// Cosine between every judged query and product under `m`.
    pub fn from_model(m: &TowerModel, j: &Judgments) -> Result<Self> {
        let q_emb = j
            .queries()
            .par_iter()
            .map(|t| m.embed_text(Side::Query, t).map(|e| e.0))
            .collect::<Result<Vec<_>>>()?;
        let p_emb = j
            .products()
            .par_iter()
            .map(|t| m.embed_text(Side::Product, t).map(|e| e.0))
            .collect::<Result<Vec<_>>>()?;
        let np = p_emb.len();
        let mut scores = vec![0.0; q_emb.len() * np];
        if np > 0 {
            scores.par_chunks_mut(np).zip(&q_emb).for_each(|(row, qe)| {
                for (s, pe) in row.iter_mut().zip(&p_emb) {
                    *s = dot(qe, pe).clamp(-1.0, 1.0);
                }
            });
        }
        Ok(ScoreMatrix {
            num_queries: q_emb.len(),
            num_products: np,
            scores,
        })
    }

    /// Reads `query \t product \t score` lines. Judged pairs missing from the
    /// file get `-inf` and rank last; lines naming texts outside the judgment
    /// set are skipped.
    pub fn load_score_file(path: &Path, j: &Judgments) -> Result<Self> {
        let (nq, np) = (j.num_queries(), j.num_products());
        let mut scores = vec![f64::NEG_INFINITY; nq * np];
        let reader = BufReader::new(File::open(path)?);
        let (mut used, mut skipped) = (0usize, 0usize);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(path, i + 1, format!("expected 3 fields, found {}", f.len())));
            }
            let s: f64 = f[2]
                .trim()
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| Error::parse(path, i + 1, format!("bad score {:?}", f[2])))?;
            match (j.query_id(f[0]), j.product_id(f[1])) {
                (Some(q), Some(p)) => {
                    scores[q as usize * np + p as usize] = s;
                    used += 1;
                }
                _ => skipped += 1,
            }
        }
        if skipped > 0 {
            log::warn!("{skipped} score lines name unjudged texts and were skipped");
        }
        let missing = (nq * np).saturating_sub(used);
        if missing > 0 {
            log::warn!("{missing} judged pairs have no score and rank last");
        }
        Ok(ScoreMatrix {
            num_queries: nq,
            num_products: np,
            scores,
        })
    }
}

/// Products of `q` by descending score, ties by ascending product id.
pub fn ranking(scores: &ScoreMatrix, q: u32) -> Vec<u32> {
    let row = scores.row(q);
    let mut order: Vec<u32> = (0..scores.num_products as u32).collect();
    order.sort_by(|&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
    order
}

fn dcg_prefix(grades: &[f64], k: usize, gain: Gain) -> f64 {
    let mut s = 0.0;
    for (i, &g) in grades.iter().take(k).enumerate() {
        let gain_v = match gain {
            Gain::Linear => g,
            Gain::Exponential => g.exp2() - 1.0,
        };
        s += gain_v / ((i + 2) as f64).log2();
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct KRow {
    pub k: usize,
    /// Mean per-query nDCG per bucket; `None` when no query qualifies.
    pub mean: [Option<f64>; 7],
    /// Queries contributing to each mean.
    pub queries: [usize; 7],
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryNdcg {
    pub k: usize,
    pub bucket: BucketId,
    pub query: u32,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub model: String,
    pub counts: [u64; 7],
    pub ratios: [f64; 7],
    pub rows: Vec<KRow>,
    /// Every per-query value behind the means, for external significance tests.
    pub per_query: Vec<QueryNdcg>,
}

/// Mean per-query nDCG@k for every bucket and every k.
///
/// Each query's products are ranked once by score; a bucket's list is the
/// subsequence of that ranking whose pairs fall in the bucket. Queries whose
/// bucket list has no positive grade are left out of that bucket's mean.
pub fn bucketed_ndcg_report(
    model: &str,
    scores: &ScoreMatrix,
    j: &Judgments,
    asg: &BucketAssignment,
    ks: &[usize],
    gain: Gain,
) -> Result<BucketReport> {
    if !j.is_exhaustive() {
        return Err(Error::Config("bucketed report needs exhaustively expanded judgments".into()));
    }
    if ks.contains(&0) {
        return Err(Error::Config("nDCG cutoff k must be >= 1".into()));
    }
    if scores.num_queries != j.num_queries() || scores.num_products != j.num_products() {
        return Err(Error::Shape(format!(
            "score matrix {}x{} for {}x{} judgments",
            scores.num_queries,
            scores.num_products,
            j.num_queries(),
            j.num_products()
        )));
    }

    let per_query: Vec<Vec<QueryNdcg>> = (0..j.num_queries() as u32)
        .into_par_iter()
        .map(|q| {
            let grades = j.grade_row(q);
            let mut lists: [Vec<f64>; 7] = Default::default();
            for p in ranking(scores, q) {
                let g = grades[p as usize];
                for b in asg.buckets(q, p).iter() {
                    lists[b.index() - 1].push(g);
                }
            }
            let mut out = Vec::new();
            for (bi, list) in lists.iter().enumerate() {
                let mut ideal = list.clone();
                ideal.sort_by(|a, b| b.total_cmp(a));
                for &k in ks {
                    let idcg = dcg_prefix(&ideal, k, gain);
                    if idcg > 0.0 {
                        out.push(QueryNdcg {
                            k,
                            bucket: BucketId::ALL[bi],
                            query: q,
                            ndcg: dcg_prefix(list, k, gain) / idcg,
                        });
                    }
                }
            }
            out
        })
        .collect();
    let per_query: Vec<QueryNdcg> = per_query.into_iter().flatten().collect();

    let rows = ks
        .iter()
        .map(|&k| {
            let mut sum = [0.0; 7];
            let mut n = [0usize; 7];
            for r in per_query.iter().filter(|r| r.k == k) {
                sum[r.bucket.index() - 1] += r.ndcg;
                n[r.bucket.index() - 1] += 1;
            }
            let mut mean = [None; 7];
            for b in 0..7 {
                if n[b] > 0 {
                    mean[b] = Some(sum[b] / n[b] as f64);
                }
            }
            KRow { k, mean, queries: n }
        })
        .collect();

    let counts = asg.counts(j);
    Ok(BucketReport {
        model: model.to_owned(),
        counts,
        ratios: ratios(&counts),
        rows,
        per_query,
    })
}

/// Per bucket, the fraction of relevant pairs (grade > 0) whose product is
/// outranked by fewer than `k` lower-graded products of the full catalog.
/// Other equally or better graded products are not competitors, so queries
/// with many relevant products do not cap the score at `k / relevant`.
pub fn bucket_retrieval_accuracy(
    scores: &ScoreMatrix,
    j: &Judgments,
    asg: &BucketAssignment,
    k: usize,
) -> [Option<f64>; 7] {
    let tallies: Vec<([usize; 7], [usize; 7])> = (0..j.num_queries() as u32)
        .into_par_iter()
        .map(|q| {
            let grades = j.grade_row(q);
            let (mut hits, mut total) = ([0usize; 7], [0usize; 7]);
            // Grades ranked so far, with multiplicity; few distinct values.
            let mut above: Vec<(f64, usize)> = Vec::new();
            for p in ranking(scores, q) {
                let g = grades[p as usize];
                match above.iter_mut().find(|(v, _)| *v == g) {
                    Some((_, c)) => *c += 1,
                    None => above.push((g, 1)),
                }
                if g <= 0.0 {
                    continue;
                }
                // Only products graded below p count as competitors.
                let beaten_by: usize = above.iter().filter(|(v, _)| *v < g).map(|(_, c)| c).sum();
                for b in asg.buckets(q, p).iter() {
                    total[b.index() - 1] += 1;
                    if beaten_by < k {
                        hits[b.index() - 1] += 1;
                    }
                }
            }
            (hits, total)
        })
        .collect();
    let (mut hits, mut total) = ([0usize; 7], [0usize; 7]);
    for (h, t) in tallies {
        for b in 0..7 {
            hits[b] += h[b];
            total[b] += t[b];
        }
    }
    let mut out = [None; 7];
    for b in 0..7 {
        if total[b] > 0 {
            out[b] = Some(hits[b] as f64 / total[b] as f64);
        }
    }
    out
}

/// One (model, k, bucket) cell of a report, the unit of the long CSV format
/// `model,k,bucket,name,pairs,ratio_pct,queries,ndcg`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRecord {
    pub model: String,
    pub k: usize,
    pub bucket: BucketId,
    pub pairs: Option<u64>,
    pub ratio_pct: Option<f64>,
    pub queries: Option<usize>,
    pub ndcg: Option<f64>,
}

pub const RECORD_HEADER: &str = "model,k,bucket,name,pairs,ratio_pct,queries,ndcg";

impl BucketReport {
    pub fn records(&self) -> Vec<ReportRecord> {
        let mut out = Vec::new();
        for row in &self.rows {
            for b in BucketId::ALL {
                let i = b.index() - 1;
                out.push(ReportRecord {
                    model: self.model.clone(),
                    k: row.k,
                    bucket: b,
                    pairs: Some(self.counts[i]),
                    ratio_pct: Some(self.ratios[i]),
                    queries: Some(row.queries[i]),
                    ndcg: row.mean[i],
                });
            }
        }
        out
    }

    /// `k,bucket,query,ndcg` rows, query given as text.
    pub fn per_query_csv(&self, j: &Judgments) -> String {
        let mut s = String::from("k,bucket,query,ndcg\n");
        let mut rows: Vec<&QueryNdcg> = self.per_query.iter().collect();
        rows.sort_by(|a, b| (a.k, a.bucket, a.query).cmp(&(b.k, b.bucket, b.query)));
        for r in rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.k,
                r.bucket.index(),
                csv_field(&j.queries()[r.query as usize]),
                r.ndcg
            );
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn records_to_csv(records: &[ReportRecord]) -> String {
    let mut s = format!("{RECORD_HEADER}\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            csv_field(&r.model),
            r.k,
            r.bucket.index(),
            csv_field(r.bucket.name()),
            opt(r.pairs),
            opt(r.ratio_pct),
            opt(r.queries),
            opt(r.ndcg)
        );
    }
    s
}

pub fn parse_records_csv(text: &str, origin: &Path) -> Result<Vec<ReportRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("model,")) {
            continue;
        }
        let err = |m: String| Error::parse(origin, i + 1, m);
        let f = split_csv_line(line);
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        fn cell<T: std::str::FromStr>(s: &str) -> std::result::Result<Option<T>, String> {
            let s = s.trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| format!("bad value {s:?}"))
        }
        let k: usize = cell(&f[1]).map_err(err)?.ok_or_else(|| err("missing k".into()))?;
        let bi: usize = cell(&f[2]).map_err(err)?.ok_or_else(|| err("missing bucket".into()))?;
        let bucket = BucketId::from_index(bi).ok_or_else(|| err(format!("bucket {bi} not in 1..=7")))?;
        out.push(ReportRecord {
            model: f[0].clone(),
            k,
            bucket,
            pairs: cell(&f[4]).map_err(err)?,
            ratio_pct: cell(&f[5]).map_err(err)?,
            queries: cell(&f[6]).map_err(err)?,
            ndcg: cell(&f[7]).map_err(err)?,
        });
    }
    Ok(out)
}

fn fmt_ratio(r: f64) -> String {
    format!("{r:.2}%")
}

/// Renders one table per k: a bucket index row, a name header, the ratio
/// row, then one nDCG row per model in first-seen order.
pub fn render_markdown(records: &[ReportRecord]) -> String {
    let mut ks: Vec<usize> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    let mut cells: HashMap<(&str, usize, BucketId), &ReportRecord> = HashMap::new();
    for r in records {
        if !ks.contains(&r.k) {
            ks.push(r.k);
        }
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
        cells.insert((&r.model, r.k, r.bucket), r);
    }
    let mut out = String::new();
    for k in ks {
        let _ = writeln!(out, "### nDCG@{k}\n");
        out.push_str("| Bucket name |");
        for b in BucketId::ALL {
            let _ = write!(out, " {} |", b.name());
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(7));
        out.push_str("\n| Bucket index |");
        for b in BucketId::ALL {
            let _ = write!(out, " {} |", b.index());
        }
        out.push_str("\n| Bucket ratio |");
        for b in BucketId::ALL {
            let ratio = models
                .iter()
                .find_map(|m| cells.get(&(*m, k, b)).and_then(|r| r.ratio_pct));
            let _ = write!(out, " {} |", ratio.map(fmt_ratio).unwrap_or_else(|| "n/a".into()));
        }
        out.push('\n');
        for m in &models {
            if !BucketId::ALL.iter().any(|&b| cells.contains_key(&(*m, k, b))) {
                continue;
            }
            let _ = write!(out, "| {m} |");
            for b in BucketId::ALL {
                let v = cells.get(&(*m, k, b)).and_then(|r| r.ndcg);
                let _ = write!(out, " {} |", v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".into()));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Normalizes a free-form model label for use in file names.
pub fn model_slug(name: &str) -> String {
    let n = normalize(name);
    n.chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect()
}
