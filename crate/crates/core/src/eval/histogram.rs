use super::buckets::{BucketAssignment, BucketId};
use super::judgments::Judgments;
use super::report::ScoreMatrix;
use crate::error::{Error, Result};

/// Equal-width histogram over [-1, 1]. Out-of-range values land in the
/// edge bins; 1.0 falls in the last bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub total: u64,
    /// Mean of the raw values, `None` for an empty selection.
    pub mean: Option<f64>,
}

impl Histogram {
    pub const LO: f64 = -1.0;
    pub const HI: f64 = 1.0;

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self) -> Vec<f64> {
        let w = (Self::HI - Self::LO) / self.bins() as f64;
        (0..=self.bins()).map(|i| Self::LO + i as f64 * w).collect()
    }

    /// Fraction of the selection in each bin; zeros when empty.
    pub fn fractions(&self) -> Vec<f64> {
        if self.total == 0 {
            return vec![0.0; self.bins()];
        }
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }
}

pub fn cosine_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut counts = vec![0u64; bins];
    let mut sum = 0.0;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::NonFinite { index: 0, what: "histogram value" });
        }
        let pos = (v - Histogram::LO) / (Histogram::HI - Histogram::LO) * bins as f64;
        let bin = (pos.floor().max(0.0) as usize).min(bins - 1);
        counts[bin] += 1;
        sum += v;
    }
    let total = values.len() as u64;
    Ok(Histogram {
        counts,
        total,
        mean: (total > 0).then(|| sum / total as f64),
    })
}

/// Scores of the pairs graded exactly `grade` within each requested bucket.
pub fn bucket_scores(
    scores: &ScoreMatrix,
    j: &Judgments,
    asg: &BucketAssignment,
    grade: f64,
    buckets: &[BucketId],
) -> Vec<(BucketId, Vec<f64>)> {
    let mut out: Vec<(BucketId, Vec<f64>)> = buckets.iter().map(|&b| (b, Vec::new())).collect();
    for (q, p, g) in j.pairs() {
        if g != grade {
            continue;
        }
        let set = asg.buckets(q, p);
        let s = scores.get(q, p);
        for (b, vals) in out.iter_mut() {
            if set.contains(*b) {
                vals.push(s);
            }
        }
    }
    out
}

/// One histogram per requested bucket over pairs with the given grade.
pub fn bucket_cosine_histograms(
    scores: &ScoreMatrix,
    j: &Judgments,
    asg: &BucketAssignment,
    grade: f64,
    buckets: &[BucketId],
    bins: usize,
) -> Result<Vec<(BucketId, Histogram)>> {
    bucket_scores(scores, j, asg, grade, buckets)
        .into_iter()
        .map(|(b, vals)| {
            let finite: Vec<f64> = vals.into_iter().filter(|v| v.is_finite()).collect();
            Ok((b, cosine_histogram(&finite, bins)?))
        })
        .collect()
}
