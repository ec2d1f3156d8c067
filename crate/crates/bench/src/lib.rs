//! Shared fixtures for the criterion benches in `benches/`.

use coclick::pipeline::{prepare, PipelineConfig, Prepared};

/// The default synthetic world, split and mined into pq pairs.
pub fn default_world() -> Prepared {
    prepare(&PipelineConfig::default()).expect("default world")
}
