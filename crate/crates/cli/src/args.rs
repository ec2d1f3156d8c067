use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "coclick", version, about = "Click-graph pair mining, two-tower training and bucketed evaluation")]
#[command(arg_required_else_help = true, propagate_version = true)]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for parallel evaluation; 1 gives the determinism baseline.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// `key = value` file; keys are long flag names. Command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic world and its train/eval files.
    SynthGen(SynthGenArgs),
    /// Mine training pairs from a click log.
    MinePairs(MinePairsArgs),
    /// Pre-train on one or more pair files in sequence.
    Pretrain(PretrainArgs),
    /// Fine-tune on query-product pairs and keep the best dev checkpoint.
    Finetune(FinetuneArgs),
    /// Per-bucket nDCG report.
    EvalNdcg(EvalNdcgArgs),
    /// Rank correlation between query cosines and graded query pairs.
    EvalSpearman(EvalSpearmanArgs),
    /// Cosine histograms of one grade per bucket, as CSV and SVG.
    AnalyzeCosine(AnalyzeCosineArgs),
    /// Render long-format report CSVs as markdown tables.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthGen(_) => "synth-gen",
            Command::MinePairs(_) => "mine-pairs",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::EvalNdcg(_) => "eval-ndcg",
            Command::EvalSpearman(_) => "eval-spearman",
            Command::AnalyzeCosine(_) => "analyze-cosine",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthGenArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub num_topics: usize,
    #[arg(long, default_value_t = 400)]
    pub num_queries: usize,
    #[arg(long, default_value_t = 200)]
    pub num_products: usize,
    #[arg(long, default_value_t = 500)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 6)]
    pub tokens_per_text: usize,
    #[arg(long, default_value_t = 50_000)]
    pub click_sessions: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long)]
    pub topical_rate: Option<f64>,
    #[arg(long)]
    pub split_dialects: bool,
    /// Sibling topics share a class and grade 0.5.
    #[arg(long)]
    pub hierarchy: bool,
    #[arg(long, default_value_t = 0.3)]
    pub unseen_queries: f64,
    #[arg(long, default_value_t = 0.3)]
    pub unseen_products: f64,
    /// Graded query pairs to write for eval-spearman.
    #[arg(long, default_value_t = 400)]
    pub query_pairs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleArg {
    Qq,
    Pp,
    Pq,
    Unsup,
}

#[derive(Debug, Args, Serialize)]
pub struct MinePairsArgs {
    #[arg(long)]
    pub clicks: PathBuf,
    #[arg(long, value_enum)]
    pub role: RoleArg,
    #[arg(long, default_value_t = 10)]
    pub k_top: usize,
    /// Pairs to draw (qq, pp); for pq, a random subset of this size when given.
    #[arg(long)]
    pub n_pairs: Option<usize>,
    /// Word dropout rate for unsup views.
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 128)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub output_dim: usize,
    /// Separate query and product towers instead of one shared tower.
    #[arg(long)]
    pub separate_towers: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0.07)]
    pub temperature: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 50)]
    pub checkpoint_interval: usize,
    #[arg(long, default_value_t = 0.9)]
    pub adam_beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub adam_beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub adam_eps: f64,
    /// Cutoff of the dev retrieval accuracy used to pick checkpoints.
    #[arg(long, default_value_t = 10)]
    pub dev_k: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct PretrainArgs {
    /// Comma-separated `pairs.tsv:epochs` stages, trained in order.
    #[arg(long, required = true)]
    pub curriculum: String,
    /// Click log whose texts define the vocabulary of a fresh model.
    #[arg(long, required_unless_present = "init")]
    pub vocab_from: Option<PathBuf>,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long, conflicts_with = "vocab_from")]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct FinetuneArgs {
    /// Query-product pair file.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub epochs: usize,
    #[arg(long, required_unless_present = "vocab_from")]
    pub init: Option<PathBuf>,
    #[arg(long, conflicts_with = "init")]
    pub vocab_from: Option<PathBuf>,
    /// Dev pairs for checkpoint selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Without `--dev`, sample this many training pairs as the dev set.
    #[arg(long, default_value_t = 500)]
    pub dev_pairs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GainArg {
    Linear,
    Exp,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreSource {
    #[arg(long, required_unless_present = "scores", conflicts_with = "scores")]
    pub checkpoint: Option<PathBuf>,
    /// `query \t product \t score` file from any model.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct JudgedArgs {
    /// `query \t product_text \t label` file.
    #[arg(long)]
    pub judgments: PathBuf,
    /// Visibility manifest of the training data.
    #[arg(long)]
    pub manifest: PathBuf,
    /// `Label=grade,...` on top of exact/partial/irrelevant.
    #[arg(long)]
    pub label_map: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalNdcgArgs {
    #[command(flatten)]
    pub source: ScoreSource,
    #[command(flatten)]
    pub judged: JudgedArgs,
    #[arg(long = "k", value_delimiter = ',', default_values_t = [1, 20, 50, 100])]
    pub ks: Vec<usize>,
    #[arg(long, value_enum, default_value_t = GainArg::Linear)]
    pub gain: GainArg,
    /// Row label in the report.
    #[arg(long)]
    pub model_name: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalSpearmanArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `query1 \t query2 \t grade` file.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeCosineArgs {
    #[command(flatten)]
    pub source: ScoreSource,
    #[command(flatten)]
    pub judged: JudgedArgs,
    /// Only pairs with exactly this grade.
    #[arg(long, default_value_t = 0.5)]
    pub grade: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [2, 4, 5, 6, 7])]
    pub buckets: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Long-format CSVs written by eval-ndcg.
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
