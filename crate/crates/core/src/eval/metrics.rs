use std::collections::HashMap;

use statrs::function::beta::beta_reg;

use crate::encoder::{dot, TowerModel};
use crate::error::{Error, Result};
use crate::pairs::PairDataset;
use crate::trainer::sides;

/// How a grade turns into gain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Gain {
    /// gain = grade
    #[default]
    Linear,
    /// gain = 2^grade - 1
    Exponential,
}

impl Gain {
    fn apply(self, grade: f64) -> f64 {
        match self {
            Gain::Linear => grade,
            Gain::Exponential => grade.exp2() - 1.0,
        }
    }
}

fn dcg(grades: &[f64], k: usize, gain: Gain) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.apply(g) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k of grades listed in ranked order. `None` when the list holds no
/// positive grade (ideal DCG is zero).
pub fn ndcg_at_k(ranked_grades: &[f64], k: usize) -> Result<Option<f64>> {
    ndcg_at_k_with(ranked_grades, k, Gain::Linear)
}

pub fn ndcg_at_k_with(ranked_grades: &[f64], k: usize, gain: Gain) -> Result<Option<f64>> {
    if k == 0 {
        return Err(Error::Config("nDCG cutoff k must be >= 1".into()));
    }
    if let Some(&g) = ranked_grades.iter().find(|g| !(**g >= 0.0)) {
        return Err(Error::NegativeGrade(g));
    }
    let mut ideal = ranked_grades.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, k, gain);
    if idcg == 0.0 {
        return Ok(None);
    }
    Ok(Some(dcg(ranked_grades, k, gain) / idcg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Two-sided p-value from the t approximation with n - 2 degrees of freedom.
    pub p_value: f64,
}

/// 1-based ranks, tied values sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    // sqrt(fl(s²)) == s, so identical rank vectors give exactly 1.
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<Spearman> {
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch(pred.len(), gold.len()));
    }
    let n = pred.len();
    if n < 3 {
        return Err(Error::Config(format!("rank correlation needs at least 3 items, got {n}")));
    }
    if pred.iter().chain(gold).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index: 0, what: "rank correlation input" });
    }
    let rho = pearson(&average_ranks(pred), &average_ranks(gold)).ok_or(Error::ConstantInput)?;
    let df = (n - 2) as f64;
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t2 = rho * rho * df / (1.0 - rho * rho);
        // P(|T| > t) = I_{df/(df+t²)}(df/2, 1/2)
        beta_reg(df / 2.0, 0.5, df / (df + t2))
    };
    Ok(Spearman { rho, p_value })
}

/// Fraction of dev pairs whose right-hand item ranks within the top `k`
/// of its left-hand text, searching over the unique right-hand items of
/// the dev set. Ties rank the earlier-seen item first.
pub fn retrieval_accuracy(m: &TowerModel, dev: &PairDataset, k: usize) -> f64 {
    if dev.is_empty() || k == 0 {
        return 0.0;
    }
    let role = dev.pairs[0].role;
    let (ls, rs) = sides(role);
    let mut query_ids: HashMap<&str, usize> = HashMap::new();
    let mut product_ids: HashMap<&str, usize> = HashMap::new();
    let mut queries = Vec::new();
    let mut products = Vec::new();
    for p in dev {
        query_ids.entry(&p.left).or_insert_with(|| {
            queries.push(p.left.as_str());
            queries.len() - 1
        });
        product_ids.entry(&p.right).or_insert_with(|| {
            products.push(p.right.as_str());
            products.len() - 1
        });
    }
    if k >= products.len() {
        return 1.0;
    }
    let embed = |side, text: &str| m.embed_text(side, text).map(|e| e.0).unwrap_or_default();
    let q_emb: Vec<Vec<f64>> = queries.iter().map(|t| embed(ls, t)).collect();
    let p_emb: Vec<Vec<f64>> = products.iter().map(|t| embed(rs, t)).collect();

    let mut hits = 0usize;
    for pair in dev {
        let qe = &q_emb[query_ids[pair.left.as_str()]];
        let target = product_ids[pair.right.as_str()];
        let s = dot(qe, &p_emb[target]);
        let ahead = p_emb
            .iter()
            .enumerate()
            .filter(|&(j, pe)| {
                let sj = dot(qe, pe);
                sj > s || (sj == s && j < target)
            })
            .count();
        if ahead < k {
            hits += 1;
        }
    }
    hits as f64 / dev.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{ModelDims, Vocabulary};
    use crate::pairs::{PairSample, Role};

    #[test]
    fn ndcg_hand_values() {
        assert_eq!(ndcg_at_k(&[1.0, 0.5, 0.0], 3).unwrap(), Some(1.0));
        let v = ndcg_at_k(&[0.0, 1.0], 2).unwrap().unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[0.0, 0.0], 2).unwrap(), None);
        assert!(ndcg_at_k(&[1.0], 0).is_err());
        assert!(matches!(ndcg_at_k(&[1.0, -0.5], 2), Err(Error::NegativeGrade(_))));
    }

    #[test]
    fn exponential_gain() {
        // gains 0, 1 → dcg = 1/log2(3); ideal 1
        let v = ndcg_at_k_with(&[0.0, 1.0], 2, Gain::Exponential).unwrap().unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        let lin = ndcg_at_k_with(&[0.5, 1.0], 2, Gain::Linear).unwrap().unwrap();
        let exp = ndcg_at_k_with(&[0.5, 1.0], 2, Gain::Exponential).unwrap().unwrap();
        assert!(lin != exp);
    }

    #[test]
    fn spearman_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &x).unwrap().rho, 1.0);
        let r = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(spearman(&x, &r).unwrap().rho, -1.0);
        assert!(matches!(spearman(&x, &[1.0, 1.0, 1.0, 1.0]), Err(Error::ConstantInput)));
        assert!(matches!(spearman(&x, &[1.0]), Err(Error::LengthMismatch(4, 1))));
        assert!(spearman(&[1.0, 2.0], &[2.0, 1.0]).is_err());
    }

    #[test]
    fn spearman_p_value_matches_t_test() {
        // rho = 0.8 for n = 5: ranks of y = [1,3,2,4,5]
        let s = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1.0, 3.0, 2.0, 4.0, 5.0]).unwrap();
        assert!((s.rho - 0.9).abs() < 1e-12);
        // t = 0.9·sqrt(3/0.19) = 3.5762; two-sided p with 3 df ≈ 0.03739
        assert!((s.p_value - 0.037386).abs() < 1e-5, "{}", s.p_value);
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn retrieval_accuracy_trivial_cases() {
        let vocab = Vocabulary::build(["red sofa", "blue lamp", "oak desk"]);
        let m = TowerModel::new(vocab, ModelDims { embed: 4, hidden: 4, output: 4 }, false, 2);
        let one = PairDataset::new(vec![PairSample::new("red", "red sofa", Role::Pq).unwrap()]);
        assert_eq!(retrieval_accuracy(&m, &one, 1), 1.0);
        let three = PairDataset::new(vec![
            PairSample::new("red", "red sofa", Role::Pq).unwrap(),
            PairSample::new("blue", "blue lamp", Role::Pq).unwrap(),
            PairSample::new("oak", "oak desk", Role::Pq).unwrap(),
        ]);
        assert_eq!(retrieval_accuracy(&m, &three, 3), 1.0);
        let a1 = retrieval_accuracy(&m, &three, 1);
        let a2 = retrieval_accuracy(&m, &three, 2);
        assert!(a1 <= a2);
    }
}
