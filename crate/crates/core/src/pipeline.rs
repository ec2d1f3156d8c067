//! End-to-end synthetic experiment: generate a world, withhold part of it,
//! optionally pre-train on mined pairs, fine-tune on query-product pairs,
//! then evaluate every seen/unseen bucket.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{ModelDims, TowerModel, Vocabulary};
use crate::error::Result;
use crate::eval::{
    assign_buckets, bucket_retrieval_accuracy, bucketed_ndcg_report, BucketReport, Gain, ScoreMatrix,
};
use crate::pairs::{extract_pq, mine_pp, mine_qq, unsup_views, PairDataset, SamplingConfig};
use crate::synth::{generate_world, holdout_split, Split, World, WorldConfig};
use crate::trainer::{select_checkpoint, train, Curriculum, TrainConfig};

/// Which pre-training precedes query-product fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    /// No pre-training.
    PqOnly,
    Qq,
    Pp,
    /// Query pairs, then product pairs.
    QqPp,
    /// Word-dropout views of training queries.
    Unsup,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::PqOnly, Arm::Qq, Arm::Pp, Arm::QqPp, Arm::Unsup];

    pub fn name(self) -> &'static str {
        match self {
            Arm::PqOnly => "pq only",
            Arm::Qq => "qq pretrain",
            Arm::Pp => "pp pretrain",
            Arm::QqPp => "qq+pp pretrain",
            Arm::Unsup => "unsup pretrain",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub world: WorldConfig,
    pub unseen_query_frac: f64,
    pub unseen_product_frac: f64,
    pub sampling: SamplingConfig,
    pub qq_epochs: usize,
    pub pp_epochs: usize,
    pub unsup_dropout: f64,
    pub finetune_epochs: usize,
    pub train: TrainConfig,
    pub dims: ModelDims,
    pub separate_towers: bool,
    pub dev_pairs: usize,
    pub ks: Vec<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            world: WorldConfig::default(),
            unseen_query_frac: 0.3,
            unseen_product_frac: 0.3,
            sampling: SamplingConfig {
                k_top: 10,
                n_pairs: 20_000,
                seed: 0,
            },
            qq_epochs: 3,
            pp_epochs: 2,
            unsup_dropout: 0.1,
            finetune_epochs: 4,
            train: TrainConfig::default(),
            dims: ModelDims::default(),
            separate_towers: false,
            dev_pairs: 500,
            ks: vec![1, 10, 20, 50, 100],
        }
    }
}

impl PipelineConfig {
    /// Derives every seed of the run from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.world.seed = seed;
        self.sampling.seed = seed.wrapping_add(1);
        self.train.seed = seed.wrapping_add(2);
        self
    }
}

/// Everything shared by the arms of one experiment.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub world: World,
    pub split: Split,
    pub pq: PairDataset,
    pub dev: PairDataset,
    pub vocab: Vocabulary,
}

pub fn prepare(cfg: &PipelineConfig) -> Result<Prepared> {
    let world = generate_world(&cfg.world)?;
    let split = holdout_split(
        &world,
        cfg.unseen_query_frac,
        cfg.unseen_product_frac,
        cfg.world.seed.wrapping_add(3),
    )?;
    let pq = extract_pq(&split.train);
    let mut dev_pairs = pq.pairs.clone();
    dev_pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.world.seed.wrapping_add(4)));
    dev_pairs.truncate(cfg.dev_pairs);
    let g = &split.train;
    let vocab = Vocabulary::build(
        g.query_ids()
            .map(|q| g.query_text(q))
            .chain(g.product_ids().map(|p| g.product_text(p))),
    );
    Ok(Prepared {
        world,
        split,
        pq,
        dev: PairDataset::new(dev_pairs),
        vocab,
    })
}

/// Pre-training stages of an arm.
pub fn pretrain_curriculum(prep: &Prepared, cfg: &PipelineConfig, arm: Arm) -> Result<Option<Curriculum>> {
    let g = &prep.split.train;
    let stages = match arm {
        Arm::PqOnly => return Ok(None),
        Arm::Qq => vec![(mine_qq(g, &cfg.sampling)?, cfg.qq_epochs)],
        Arm::Pp => vec![(mine_pp(g, &cfg.sampling)?, cfg.pp_epochs)],
        Arm::QqPp => vec![
            (mine_qq(g, &cfg.sampling)?, cfg.qq_epochs),
            (mine_pp(g, &cfg.sampling)?, cfg.pp_epochs),
        ],
        Arm::Unsup => {
            let texts: Vec<String> = g.query_ids().map(|q| g.query_text(q).to_owned()).collect();
            vec![(unsup_views(&texts, cfg.unsup_dropout, cfg.sampling.seed)?, cfg.qq_epochs)]
        }
    };
    Curriculum::new(stages).map(Some)
}

#[derive(Debug, Clone)]
pub struct ArmResult {
    pub arm: Arm,
    pub model: TowerModel,
    /// Batch index of the selected fine-tuning checkpoint.
    pub selected_batch: usize,
    pub report: BucketReport,
    /// Retrieval accuracy of relevant pairs per bucket at each k in `ks`.
    pub retrieval: Vec<(usize, [Option<f64>; 7])>,
}

pub fn run_arm(prep: &Prepared, cfg: &PipelineConfig, arm: Arm) -> Result<ArmResult> {
    let mut model = TowerModel::new(prep.vocab.clone(), cfg.dims, cfg.separate_towers, cfg.train.seed);
    if let Some(curriculum) = pretrain_curriculum(prep, cfg, arm)? {
        let (pretrained, _) = train(model, &curriculum, &cfg.train, None)?;
        model = pretrained;
    }
    let finetune = Curriculum::single(prep.pq.clone(), cfg.finetune_epochs);
    let ft_cfg = TrainConfig {
        seed: cfg.train.seed.wrapping_add(17),
        ..cfg.train.clone()
    };
    let (_, log) = train(model, &finetune, &ft_cfg, Some(&prep.dev))?;
    let best = select_checkpoint(&log.checkpoints, ft_cfg.dev_k).expect("training logs a final checkpoint");
    let model = best.model.clone();

    let scores = ScoreMatrix::from_model(&model, &prep.split.judgments)?;
    let asg = assign_buckets(&prep.split.judgments, &prep.split.manifest);
    let report = bucketed_ndcg_report(arm.name(), &scores, &prep.split.judgments, &asg, &cfg.ks, Gain::Linear)?;
    let retrieval = cfg
        .ks
        .iter()
        .map(|&k| (k, bucket_retrieval_accuracy(&scores, &prep.split.judgments, &asg, k)))
        .collect();
    Ok(ArmResult {
        arm,
        selected_batch: best.batch,
        model,
        report,
        retrieval,
    })
}

impl ArmResult {
    pub fn retrieval_at(&self, k: usize) -> Option<&[Option<f64>; 7]> {
        self.retrieval.iter().find(|(kk, _)| *kk == k).map(|(_, r)| r)
    }

    pub fn ndcg_at(&self, k: usize) -> Option<&[Option<f64>; 7]> {
        self.report.rows.iter().find(|r| r.k == k).map(|r| &r.mean)
    }
}
