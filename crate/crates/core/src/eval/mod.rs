//! Evaluation: dev retrieval accuracy, graded nDCG over seen/unseen buckets,
//! rank correlation for query similarity, and cosine distributions.

pub mod buckets;
pub mod histogram;
pub mod judgments;
pub mod metrics;
pub mod report;

pub use buckets::{assign_buckets, classify, ratios, BucketAssignment, BucketId, BucketSet};
pub use histogram::{bucket_cosine_histograms, bucket_scores, cosine_histogram, Histogram};
pub use judgments::{Judgments, LabelMap, VisibilityManifest, IRRELEVANT, PARTIAL, RELEVANT};
pub use metrics::{average_ranks, ndcg_at_k, ndcg_at_k_with, retrieval_accuracy, spearman, Gain, Spearman};
pub use report::{
    bucket_retrieval_accuracy, bucketed_ndcg_report, parse_records_csv, ranking, records_to_csv,
    render_markdown, BucketReport, KRow, QueryNdcg, ReportRecord, ScoreMatrix,
};

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::normalize;

/// A graded query pair: 0 unrelated, 1 similar, 2 entailment, 3 same intent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPairGrade {
    pub first: String,
    pub second: String,
    pub grade: u8,
}

/// Reads `query1 \t query2 \t grade` lines with integer grades 0..=3.
pub fn load_query_pairs(path: &Path) -> Result<Vec<QueryPairGrade>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
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
        let grade: u8 = f[2]
            .trim()
            .parse()
            .ok()
            .filter(|g| *g <= 3)
            .ok_or_else(|| Error::parse(path, i + 1, format!("grade {:?} not in 0..=3", f[2])))?;
        out.push(QueryPairGrade {
            first: normalize(f[0]),
            second: normalize(f[1]),
            grade,
        });
    }
    Ok(out)
}
