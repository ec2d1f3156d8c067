//! Training pairs mined from the click graph.
//!
//! Co-click query pairs follow a three-step walk: draw a query by click
//! mass, pick one of its K most clicked products uniformly, then pick one of
//! that product's queries uniformly. Product pairs run the same walk with
//! the roles swapped.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::click_graph::{ClickGraph, ProductId, QueryId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    /// Co-clicked query pair.
    Qq,
    /// Co-purchased product pair.
    Pp,
    /// Query and a product it led to.
    Pq,
    /// Two noisy views of one text.
    Unsup,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Qq => "qq",
            Role::Pp => "pp",
            Role::Pq => "pq",
            Role::Unsup => "unsup",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qq" => Ok(Role::Qq),
            "pp" => Ok(Role::Pp),
            "pq" => Ok(Role::Pq),
            "unsup" => Ok(Role::Unsup),
            other => Err(Error::Config(format!("unknown pair role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairSample {
    pub left: String,
    pub right: String,
    pub role: Role,
}

impl PairSample {
    pub fn new(left: impl Into<String>, right: impl Into<String>, role: Role) -> Result<Self> {
        let (left, right) = (left.into(), right.into());
        if left.is_empty() || right.is_empty() {
            return Err(Error::Empty("pair text"));
        }
        Ok(PairSample { left, right, role })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairDataset {
    pub pairs: Vec<PairSample>,
}

impl PairDataset {
    pub fn new(pairs: Vec<PairSample>) -> Self {
        PairDataset { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, PairSample> {
        self.pairs.iter()
    }

    /// The single role of the dataset, or an error if roles are mixed.
    pub fn role(&self) -> Result<Role> {
        let first = self.pairs.first().ok_or(Error::Empty("pair dataset"))?.role;
        match self.pairs.iter().find(|p| p.role != first) {
            Some(p) => Err(Error::MixedRoles(first, p.role)),
            None => Ok(first),
        }
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        for p in &self.pairs {
            writeln!(w, "{}\t{}\t{}", p.left, p.right, p.role)?;
        }
        Ok(())
    }

    /// Reads `left \t right \t role` lines.
    pub fn load_tsv(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut pairs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            }
            let role = fields[2]
                .trim()
                .parse()
                .map_err(|e: Error| Error::parse(path, i + 1, e.to_string()))?;
            let pair = PairSample::new(fields[0], fields[1], role)
                .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            pairs.push(pair);
        }
        Ok(PairDataset { pairs })
    }
}

impl<'a> IntoIterator for &'a PairDataset {
    type Item = &'a PairSample;
    type IntoIter = std::slice::Iter<'a, PairSample>;

    fn into_iter(self) -> Self::IntoIter {
        self.pairs.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingConfig {
    /// Size of the popular-neighbor pool in the walk's second step.
    pub k_top: usize,
    pub n_pairs: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            k_top: 10,
            n_pairs: 100_000,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    fn validate(&self) -> Result<()> {
        if self.k_top == 0 {
            return Err(Error::Config("k_top must be >= 1".into()));
        }
        if self.n_pairs == 0 {
            return Err(Error::Config("n_pairs must be >= 1".into()));
        }
        Ok(())
    }
}

fn pick<T: Copy>(rng: &mut impl Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// Samples co-clicked query pairs. Self pairs (q2 == q1) are kept.
pub fn mine_qq(g: &ClickGraph, cfg: &SamplingConfig) -> Result<PairDataset> {
    cfg.validate()?;
    let dist = g.query_distribution()?;
    let first = WeightedIndex::new(dist.weights()).map_err(|_| Error::EmptyGraph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    for _ in 0..cfg.n_pairs {
        let q1 = QueryId(first.sample(&mut rng) as u32);
        let pool = g.top_k_products(q1, cfg.k_top)?;
        let p = pick(&mut rng, &pool);
        let q2 = pick(&mut rng, g.queries_of(p)?);
        pairs.push(PairSample {
            left: g.query_text(q1).to_owned(),
            right: g.query_text(q2).to_owned(),
            role: Role::Qq,
        });
    }
    Ok(PairDataset { pairs })
}

/// Samples product pairs that share a query, walking product → query → product.
pub fn mine_pp(g: &ClickGraph, cfg: &SamplingConfig) -> Result<PairDataset> {
    cfg.validate()?;
    if g.num_edges() == 0 {
        return Err(Error::EmptyGraph);
    }
    let first = WeightedIndex::new(g.product_weights()).map_err(|_| Error::EmptyGraph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::with_capacity(cfg.n_pairs);
    for _ in 0..cfg.n_pairs {
        let p1 = ProductId(first.sample(&mut rng) as u32);
        let pool = g.top_k_queries(p1, cfg.k_top)?;
        let q = pick(&mut rng, &pool);
        let neighbors = g.products_of(q)?;
        let (p2, _) = pick(&mut rng, neighbors);
        pairs.push(PairSample {
            left: g.product_text(p1).to_owned(),
            right: g.product_text(p2).to_owned(),
            role: Role::Pp,
        });
    }
    Ok(PairDataset { pairs })
}

/// One (query, product) pair per click: each edge repeated `weight` times.
pub fn extract_pq(g: &ClickGraph) -> PairDataset {
    let mut pairs = Vec::with_capacity(g.total_weight() as usize);
    for (q, p, w) in g.edges() {
        for _ in 0..w {
            pairs.push(PairSample {
                left: g.query_text(q).to_owned(),
                right: g.product_text(p).to_owned(),
                role: Role::Pq,
            });
        }
    }
    PairDataset { pairs }
}

fn drop_view(words: &[&str], rate: f64, rng: &mut impl Rng) -> String {
    let kept: Vec<&str> = words
        .iter()
        .copied()
        .filter(|_| rate <= 0.0 || !rng.random_bool(rate))
        .collect();
    if kept.is_empty() {
        pick(rng, words).to_owned()
    } else {
        kept.join(" ")
    }
}

/// Two independently word-dropped views per text, for the self-supervised
/// baseline. At least one word always survives.
pub fn unsup_views(texts: &[String], dropout_rate: f64, seed: u64) -> Result<PairDataset> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Config(format!("dropout rate {dropout_rate} not in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(texts.len());
    for text in texts {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::Empty("text for unsupervised views"));
        }
        let left = drop_view(&words, dropout_rate, &mut rng);
        let right = drop_view(&words, dropout_rate, &mut rng);
        pairs.push(PairSample {
            left,
            right,
            role: Role::Unsup,
        });
    }
    Ok(PairDataset { pairs })
}
