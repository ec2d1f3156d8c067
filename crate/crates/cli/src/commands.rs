use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use coclick::eval::{
    assign_buckets, bucket_cosine_histograms, bucketed_ndcg_report, load_query_pairs, parse_records_csv,
    records_to_csv, render_markdown, spearman, BucketId, Gain, Judgments, LabelMap, ReportRecord, ScoreMatrix,
    VisibilityManifest,
};
use coclick::synth::{generate_world, holdout_split, WorldConfig};
use coclick::{
    cosine, extract_pq, load_click_log, mine_pp, mine_qq, select_checkpoint, train, unsup_views, ClickGraph,
    Curriculum, ModelDims, PairDataset, SamplingConfig, TowerModel, TrainConfig, Vocabulary,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::*;
use crate::manifest::{beside, Run};
use crate::svg::histogram_svg;

pub struct Globals {
    pub seed: u64,
    pub threads: Option<usize>,
}

fn usage(msg: impl std::fmt::Display) -> anyhow::Error {
    clap::Error::raw(ErrorKind::InvalidValue, format!("{msg}\n")).into()
}

fn load_graph(run: &mut Run, path: &Path) -> Result<ClickGraph> {
    run.input(path);
    load_click_log(path).with_context(|| format!("click_graph: {}", path.display()))
}

fn load_pairs(run: &mut Run, path: &Path) -> Result<PairDataset> {
    run.input(path);
    PairDataset::load_tsv(path).with_context(|| format!("pair_miner: {}", path.display()))
}

fn load_model(run: &mut Run, path: &Path) -> Result<TowerModel> {
    run.input(path);
    TowerModel::load(path).with_context(|| format!("encoder: {}", path.display()))
}

fn graph_vocabulary(g: &ClickGraph) -> Vocabulary {
    Vocabulary::build(
        g.query_ids()
            .map(|q| g.query_text(q))
            .chain(g.product_ids().map(|p| g.product_text(p))),
    )
}

fn train_config(t: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    let cfg = TrainConfig {
        temperature: t.temperature,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        epochs: 1,
        checkpoint_interval: t.checkpoint_interval,
        adam_beta1: t.adam_beta1,
        adam_beta2: t.adam_beta2,
        adam_eps: t.adam_eps,
        seed,
        dev_k: t.dev_k,
    };
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn initial_model(
    run: &mut Run,
    init: Option<&Path>,
    vocab_from: Option<&Path>,
    m: &ModelArgs,
    seed: u64,
) -> Result<TowerModel> {
    match (init, vocab_from) {
        (Some(p), _) => load_model(run, p),
        (None, Some(p)) => {
            let g = load_graph(run, p)?;
            let dims = ModelDims { embed: m.embed_dim, hidden: m.hidden_dim, output: m.output_dim };
            if dims.embed == 0 || dims.hidden == 0 || dims.output == 0 {
                return Err(usage("model dimensions must be >= 1"));
            }
            Ok(TowerModel::new(graph_vocabulary(&g), dims, m.separate_towers, seed))
        }
        (None, None) => Err(usage("either --init or --vocab-from is required")),
    }
}

fn save_model(run: &mut Run, m: &TowerModel, path: &Path) -> Result<()> {
    run.output(path, |tmp| m.save(tmp).context("encoder: writing checkpoint"))
}

pub fn synth_gen(a: &SynthGenArgs, g: &Globals) -> Result<()> {
    let mut run = Run::new("synth-gen", g.seed, g.threads, a);
    let mut cfg = WorldConfig {
        num_topics: a.num_topics,
        num_queries: a.num_queries,
        num_products: a.num_products,
        vocab_size: a.vocab_size,
        tokens_per_text: a.tokens_per_text,
        click_sessions: a.click_sessions,
        noise: a.noise,
        split_dialects: a.split_dialects,
        hierarchy: a.hierarchy,
        seed: g.seed,
        ..WorldConfig::default()
    };
    if let Some(t) = a.topical_rate {
        cfg.topical_rate = t;
    }
    cfg.validate().map_err(usage)?;
    let world = generate_world(&cfg).context("synthetic_world")?;
    let split = holdout_split(&world, a.unseen_queries, a.unseen_products, g.seed.wrapping_add(3))
        .context("synthetic_world: holdout split")?;
    for w in &split.warnings {
        log::warn!("{w}");
    }
    let dir = &a.out_dir;
    run.output(&dir.join("clicks.tsv"), |p| Ok(world.graph.write_click_log(p)?))?;
    run.output(&dir.join("train_clicks.tsv"), |p| Ok(split.train.write_click_log(p)?))?;
    run.output(&dir.join("judgments.tsv"), |p| Ok(split.judgments.write_tsv(p)?))?;
    run.output(&dir.join("visibility.tsv"), |p| Ok(split.manifest.write_tsv(p)?))?;
    let mut qp = String::new();
    for x in world.query_pair_annotations(a.query_pairs, g.seed.wrapping_add(5)) {
        let _ = writeln!(qp, "{}\t{}\t{}", x.first, x.second, x.grade);
    }
    run.output_text(&dir.join("query_pairs.tsv"), &qp)?;
    log::info!(
        "world: {} queries, {} products, {} edges; train graph {} edges",
        world.queries.len(),
        world.products.len(),
        world.graph.num_edges(),
        split.train.num_edges()
    );
    run.finish(&dir.join("run.json"))
}

pub fn mine_pairs(a: &MinePairsArgs, g: &Globals) -> Result<()> {
    let mut run = Run::new("mine-pairs", g.seed, g.threads, a);
    let graph = load_graph(&mut run, &a.clicks)?;
    let sampling = SamplingConfig { k_top: a.k_top, n_pairs: a.n_pairs.unwrap_or(20_000), seed: g.seed };
    let data = match a.role {
        RoleArg::Qq => mine_qq(&graph, &sampling),
        RoleArg::Pp => mine_pp(&graph, &sampling),
        RoleArg::Unsup => {
            let texts: Vec<String> = graph.query_ids().map(|q| graph.query_text(q).to_owned()).collect();
            unsup_views(&texts, a.dropout, g.seed)
        }
        RoleArg::Pq => {
            let mut all = extract_pq(&graph);
            if let Some(n) = a.n_pairs {
                all.pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(g.seed));
                all.pairs.truncate(n);
            }
            Ok(all)
        }
    }
    .context("pair_miner")?;
    log::info!("{} {:?} pairs", data.len(), a.role);
    run.output(&a.out, |p| Ok(data.write_tsv(p)?))?;
    run.finish(&beside(&a.out))
}

fn parse_curriculum(spec: &str) -> Result<Vec<(PathBuf, usize)>> {
    spec.split(',')
        .map(|stage| {
            let (path, epochs) = stage
                .trim()
                .rsplit_once(':')
                .ok_or_else(|| usage(format!("curriculum stage {stage:?} is not `pairs.tsv:epochs`")))?;
            let epochs: usize = epochs
                .parse()
                .map_err(|_| usage(format!("bad epoch count in curriculum stage {stage:?}")))?;
            Ok((PathBuf::from(path), epochs))
        })
        .collect()
}

fn write_log(run: &mut Run, path: &Path, csv: &str) -> Result<()> {
    run.output_text(path, csv)
}

fn log_path(explicit: &Option<PathBuf>, out: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| {
        let mut s = out.as_os_str().to_owned();
        s.push(".log.csv");
        PathBuf::from(s)
    })
}

pub fn pretrain(a: &PretrainArgs, g: &Globals) -> Result<()> {
    let mut run = Run::new("pretrain", g.seed, g.threads, a);
    let cfg = train_config(&a.train, g.seed)?;
    let mut stages = Vec::new();
    for (path, epochs) in parse_curriculum(&a.curriculum)? {
        stages.push((load_pairs(&mut run, &path)?, epochs));
    }
    let curriculum = Curriculum::new(stages).map_err(usage)?;
    let model = initial_model(&mut run, a.init.as_deref(), a.vocab_from.as_deref(), &a.model, g.seed)?;
    let (model, log) = train(model, &curriculum, &cfg, None).context("trainer")?;
    if let Some(last) = log.epoch_means().last() {
        log::info!("final epoch mean loss {last:.4}");
    }
    save_model(&mut run, &model, &a.out)?;
    write_log(&mut run, &log_path(&a.log, &a.out), &log.to_csv())?;
    run.finish(&beside(&a.out))
}

pub fn finetune(a: &FinetuneArgs, g: &Globals) -> Result<()> {
    let mut run = Run::new("finetune", g.seed, g.threads, a);
    let cfg = train_config(&a.train, g.seed)?;
    let data = load_pairs(&mut run, &a.pairs)?;
    let dev = match &a.dev {
        Some(p) => load_pairs(&mut run, p)?,
        None => {
            let mut pairs = data.pairs.clone();
            pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(g.seed.wrapping_add(4)));
            pairs.truncate(a.dev_pairs);
            PairDataset::new(pairs)
        }
    };
    let model = initial_model(&mut run, a.init.as_deref(), a.vocab_from.as_deref(), &a.model, g.seed)?;
    let curriculum = Curriculum::single(data, a.epochs);
    let dev = (!dev.is_empty()).then_some(&dev);
    let (_, log) = train(model, &curriculum, &cfg, dev).context("trainer")?;
    let best = select_checkpoint(&log.checkpoints, cfg.dev_k).context("trainer: no checkpoint")?;
    match &best.dev {
        Some(d) => log::info!("selected checkpoint at batch {} (dev acc@{} {:.4})", best.batch, d.k, d.accuracy),
        None => log::info!("selected final checkpoint at batch {}", best.batch),
    }
    save_model(&mut run, &best.model, &a.out)?;
    write_log(&mut run, &log_path(&a.log, &a.out), &log.to_csv())?;
    run.finish(&beside(&a.out))
}

struct Judged {
    judgments: Judgments,
    manifest: VisibilityManifest,
}

fn load_judged(run: &mut Run, a: &JudgedArgs) -> Result<Judged> {
    let labels = match &a.label_map {
        Some(spec) => LabelMap::parse(spec).map_err(usage)?,
        None => LabelMap::default(),
    };
    run.input(&a.judgments);
    run.input(&a.manifest);
    let judgments = Judgments::load_tsv(&a.judgments, &labels)
        .with_context(|| format!("evaluator: {}", a.judgments.display()))?
        .expand_exhaustive();
    let manifest = VisibilityManifest::load_tsv(&a.manifest)
        .with_context(|| format!("evaluator: {}", a.manifest.display()))?;
    Ok(Judged { judgments, manifest })
}

fn load_scores(run: &mut Run, s: &ScoreSource, j: &Judgments) -> Result<ScoreMatrix> {
    match (&s.checkpoint, &s.scores) {
        (Some(c), _) => {
            let m = load_model(run, c)?;
            ScoreMatrix::from_model(&m, j).context("evaluator: scoring judged pairs")
        }
        (None, Some(p)) => {
            run.input(p);
            ScoreMatrix::load_score_file(p, j).with_context(|| format!("evaluator: {}", p.display()))
        }
        (None, None) => Err(usage("either --checkpoint or --scores is required")),
    }
}

fn default_model_name(s: &ScoreSource) -> String {
    s.checkpoint
        .as_ref()
        .or(s.scores.as_ref())
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}

pub fn eval_ndcg(a: &EvalNdcgArgs, g: &Globals) -> Result<()> {
    if a.ks.is_empty() || a.ks.contains(&0) {
        return Err(usage("--k values must be >= 1"));
    }
    let mut run = Run::new("eval-ndcg", g.seed, g.threads, a);
    let judged = load_judged(&mut run, &a.judged)?;
    let scores = load_scores(&mut run, &a.source, &judged.judgments)?;
    let asg = assign_buckets(&judged.judgments, &judged.manifest);
    let gain = match a.gain {
        GainArg::Linear => Gain::Linear,
        GainArg::Exp => Gain::Exponential,
    };
    let name = a.model_name.clone().unwrap_or_else(|| default_model_name(&a.source));
    let report = bucketed_ndcg_report(&name, &scores, &judged.judgments, &asg, &a.ks, gain).context("evaluator")?;
    let records = report.records();
    let dir = &a.out_dir;
    run.output_text(&dir.join("report.md"), &render_markdown(&records))?;
    run.output_text(&dir.join("report.csv"), &records_to_csv(&records))?;
    run.output_text(&dir.join("per_query.csv"), &report.per_query_csv(&judged.judgments))?;
    run.finish(&dir.join("run.json"))
}

#[derive(Serialize)]
struct SpearmanOut {
    pairs: usize,
    rho: f64,
    p_value: f64,
}

pub fn eval_spearman(a: &EvalSpearmanArgs, g: &Globals) -> Result<()> {
    let mut run = Run::new("eval-spearman", g.seed, g.threads, a);
    let model = load_model(&mut run, &a.checkpoint)?;
    run.input(&a.pairs);
    let pairs = load_query_pairs(&a.pairs).with_context(|| format!("evaluator: {}", a.pairs.display()))?;
    let mut pred = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let (x, y) = (model.embed_query(&p.first)?, model.embed_query(&p.second)?);
        pred.push(cosine(&x, &y)?);
    }
    let gold: Vec<f64> = pairs.iter().map(|p| f64::from(p.grade)).collect();
    let s = spearman(&pred, &gold).context("evaluator: spearman")?;
    log::info!("spearman rho {:.4} (p {:.3e}) over {} pairs", s.rho, s.p_value, pairs.len());
    let out = SpearmanOut { pairs: pairs.len(), rho: s.rho, p_value: s.p_value };
    run.output_text(&a.out, &(serde_json::to_string_pretty(&out)? + "\n"))?;
    run.finish(&beside(&a.out))
}

pub fn analyze_cosine(a: &AnalyzeCosineArgs, g: &Globals) -> Result<()> {
    let buckets = a
        .buckets
        .iter()
        .map(|&i| BucketId::from_index(i).ok_or_else(|| usage(format!("bucket {i} not in 1..=7"))))
        .collect::<Result<Vec<_>>>()?;
    if a.bins == 0 {
        return Err(usage("--bins must be >= 1"));
    }
    let mut run = Run::new("analyze-cosine", g.seed, g.threads, a);
    let judged = load_judged(&mut run, &a.judged)?;
    let scores = load_scores(&mut run, &a.source, &judged.judgments)?;
    let asg = assign_buckets(&judged.judgments, &judged.manifest);
    let hists = bucket_cosine_histograms(&scores, &judged.judgments, &asg, a.grade, &buckets, a.bins)
        .context("evaluator: histograms")?;

    let mut csv = String::from("bucket,name,bin_lo,bin_hi,count,fraction\n");
    let mut means = String::from("bucket,name,pairs,mean\n");
    for (b, h) in &hists {
        let edges = h.edges();
        for (i, (c, f)) in h.counts.iter().zip(h.fractions()).enumerate() {
            let _ = writeln!(csv, "{},\"{}\",{},{},{c},{f}", b.index(), b.name(), edges[i], edges[i + 1]);
        }
        let mean = h.mean.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(means, "{},\"{}\",{},{mean}", b.index(), b.name(), h.total);
        log::info!("bucket {} ({}): {} pairs, mean {mean}", b.index(), b.name(), h.total);
    }
    let title = format!("Cosine scores of grade-{} pairs", a.grade);
    let dir = &a.out_dir;
    run.output_text(&dir.join("cosine_hist.csv"), &csv)?;
    run.output_text(&dir.join("cosine_means.csv"), &means)?;
    run.output_text(&dir.join("cosine_hist.svg"), &histogram_svg(&title, &hists))?;
    run.finish(&dir.join("run.json"))
}

/// Ratio rows that do not add up, as printed percentages allow.
fn ratio_warnings(records: &[ReportRecord]) -> Vec<String> {
    let mut out = Vec::new();
    let mut keys: Vec<(&str, usize)> = records.iter().map(|r| (r.model.as_str(), r.k)).collect();
    keys.dedup();
    for (model, k) in keys {
        let ratio = |b: usize| {
            records
                .iter()
                .find(|r| r.model == model && r.k == k && r.bucket.index() == b)
                .and_then(|r| r.ratio_pct)
        };
        let (Some(seen), Some(unseen)) = (ratio(2), ratio(3)) else { continue };
        if (seen + unseen - 100.0).abs() > 0.01 {
            out.push(format!("{model} @{k}: seen + unseen ratios give {:.2}%", seen + unseen));
        }
        if let (Some(a), Some(b), Some(c), Some(d)) = (ratio(4), ratio(5), ratio(6), ratio(7)) {
            if (a + b + c + d - unseen).abs() > 0.01 {
                out.push(format!("{model} @{k}: buckets 4-7 give {:.2}%, unseen is {unseen:.2}%", a + b + c + d));
            }
        }
    }
    out
}

pub fn report(a: &ReportArgs, g: &Globals) -> Result<()> {
    let mut run = Run::new("report", g.seed, g.threads, a);
    let mut records = Vec::new();
    for p in &a.inputs {
        run.input(p);
        let text = fs::read_to_string(p).with_context(|| format!("report: {}", p.display()))?;
        records.extend(parse_records_csv(&text, p).context("report")?);
    }
    if records.is_empty() {
        bail!("report: no records in the input files");
    }
    for w in ratio_warnings(&records) {
        log::warn!("{w}");
    }
    run.output_text(&a.out, &render_markdown(&records))?;
    run.finish(&beside(&a.out))
}
