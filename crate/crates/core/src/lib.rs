//! Two-tower semantic product search lab.
//!
//! Mines co-click query and product pairs from a click graph, trains a
//! small shared-tower text encoder with an in-batch contrastive objective,
//! and measures how well it generalizes to queries, products and
//! combinations that never appeared in training.

pub mod click_graph;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod pairs;
pub mod pipeline;
pub mod synth;
pub mod text;
pub mod trainer;

pub use click_graph::{load_click_log, ClickGraph, ClickGraphBuilder, ProductDoc, ProductId, QueryDistribution, QueryId};
pub use encoder::{cosine, EmbeddingVector, ModelDims, Params, Side, TowerModel, TowerParams, Vocabulary};
pub use error::{Error, Result};
pub use pairs::{extract_pq, mine_pp, mine_qq, unsup_views, PairDataset, PairSample, Role, SamplingConfig};
pub use trainer::{
    adam_step, batch_gradient, batch_loss, select_checkpoint, train, AdamState, BatchLoss, Checkpoint,
    Curriculum, TrainConfig, TrainLog,
};
