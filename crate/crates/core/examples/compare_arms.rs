//! Trains every pre-training arm on one synthetic world and prints the
//! bucketed nDCG tables plus unseen-query retrieval accuracy.
//!
//! cargo run --release --example compare_arms -- [seed]

use coclick::eval::render_markdown;
use coclick::pipeline::{prepare, run_arm, Arm, PipelineConfig};

fn main() -> coclick::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = PipelineConfig { ks: vec![10, 50], ..PipelineConfig::default() }.with_seed(seed);
    let prep = prepare(&cfg)?;
    let mut records = Vec::new();
    for arm in Arm::ALL {
        let r = run_arm(&prep, &cfg, arm)?;
        let acc = r.retrieval_at(10).expect("k=10 evaluated");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n/a".into());
        println!("{arm:>15}: retrieval@10 q-,p+ {}  q-,p- {}", fmt(acc[5]), fmt(acc[6]));
        records.extend(r.report.records());
    }
    println!("\n{}", render_markdown(&records));
    Ok(())
}
