//! Independent reference implementations shared by the test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;

use astro_float::{BigFloat, Consts, RoundingMode};
use coclick::encoder::TowerParams;
use coclick::trainer::{batch_gradient_tokens, batch_loss_tokens, sides, TokenPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use coclick::{ClickGraph, Role, TowerModel};

const PREC: usize = 128;
const RM: RoundingMode = RoundingMode::ToEven;

/// Loss of a batch evaluated in 128-bit floating point, written without
/// reference to the crate's forward pass.
pub struct WideLoss {
    cc: Consts,
}

impl Default for WideLoss {
    fn default() -> Self {
        WideLoss { cc: Consts::new().unwrap() }
    }
}

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, PREC)
}

impl WideLoss {
    fn tower(&mut self, t: &TowerParams, dims: coclick::ModelDims, tokens: &[u32], bump: Option<(usize, usize, &BigFloat)>) -> Vec<BigFloat> {
        let val = |tensor: usize, data: &[f64], i: usize| -> BigFloat {
            match bump {
                Some((bt, bi, h)) if bt == tensor && bi == i => big(data[i]).add(h, PREC, RM),
                _ => big(data[i]),
            }
        };
        let (d, hdim, o) = (dims.embed, dims.hidden, dims.output);
        let count = big(tokens.len() as f64);
        let pooled: Vec<BigFloat> = (0..d)
            .map(|i| {
                let mut s = big(0.0);
                for &tok in tokens {
                    s = s.add(&val(0, &t.embed, tok as usize * d + i), PREC, RM);
                }
                s.div(&count, PREC, RM)
            })
            .collect();
        let hidden: Vec<BigFloat> = (0..hdim)
            .map(|j| {
                let mut s = val(2, &t.b1, j);
                for (i, x) in pooled.iter().enumerate() {
                    s = s.add(&x.mul(&val(1, &t.w1, i * hdim + j), PREC, RM), PREC, RM);
                }
                s.tanh(PREC, RM, &mut self.cc)
            })
            .collect();
        let out: Vec<BigFloat> = (0..o)
            .map(|k| {
                let mut s = val(4, &t.b2, k);
                for (j, h) in hidden.iter().enumerate() {
                    s = s.add(&h.mul(&val(3, &t.w2, j * o + k), PREC, RM), PREC, RM);
                }
                s
            })
            .collect();
        let mut sq = big(0.0);
        for x in &out {
            sq = sq.add(&x.mul(x, PREC, RM), PREC, RM);
        }
        let norm = sq.sqrt(PREC, RM);
        out.iter().map(|x| x.div(&norm, PREC, RM)).collect()
    }

    /// Unperturbed embeddings of a batch, reused by every perturbed loss.
    pub fn case<'a>(&'a mut self, m: &'a TowerModel, role: Role, batch: &'a [TokenPair], tau: f64) -> WideCase<'a> {
        let (ls, rs) = sides(role);
        let left = batch.iter().map(|p| self.tower(m.params.tower(ls), m.dims, &p.left, None)).collect();
        let right = batch.iter().map(|p| self.tower(m.params.tower(rs), m.dims, &p.right, None)).collect();
        WideCase { wide: self, m, role, batch, tau: big(tau), left, right }
    }
}

/// One batch under the wide oracle.
pub struct WideCase<'a> {
    wide: &'a mut WideLoss,
    m: &'a TowerModel,
    role: Role,
    batch: &'a [TokenPair],
    tau: BigFloat,
    left: Vec<Vec<BigFloat>>,
    right: Vec<Vec<BigFloat>>,
}

impl WideCase<'_> {
    /// Mean in-batch contrastive loss with parameter `index` of tensor
    /// `tensor` (numbered as in `Params::tensors`) shifted by `delta`.
    pub fn loss(&mut self, bump: Option<(usize, usize, f64)>) -> BigFloat {
        let m = self.m;
        let (ls, rs) = sides(self.role);
        // Tensor numbering: query tower 0..5, product tower 5..10.
        let offset = |side| if m.shared() || side == coclick::Side::Query { 0 } else { 5 };
        let delta = bump.map(|(_, _, h)| big(h));
        let embed = |wide: &mut WideLoss, side, tokens: &[u32], base: &[BigFloat]| -> Vec<BigFloat> {
            let off = offset(side);
            let hit = bump.and_then(|(t, i, _)| (t >= off && t < off + 5).then(|| (t - off, i)));
            match hit {
                // An embedding row only reaches texts holding its token.
                Some((0, i)) if !tokens.contains(&((i / m.dims.embed) as u32)) => base.to_vec(),
                Some((t, i)) => wide.tower(m.params.tower(side), m.dims, tokens, Some((t, i, delta.as_ref().unwrap()))),
                None => base.to_vec(),
            }
        };
        let left: Vec<Vec<BigFloat>> =
            self.batch.iter().zip(&self.left).map(|(p, b)| embed(self.wide, ls, &p.left, b)).collect();
        let right: Vec<Vec<BigFloat>> =
            self.batch.iter().zip(&self.right).map(|(p, b)| embed(self.wide, rs, &p.right, b)).collect();
        let n = self.batch.len();
        let mut total = big(0.0);
        for i in 0..n {
            let mut logits = Vec::with_capacity(n);
            for r in &right {
                let mut s = big(0.0);
                for (a, b) in left[i].iter().zip(r) {
                    s = s.add(&a.mul(b, PREC, RM), PREC, RM);
                }
                logits.push(s.div(&self.tau, PREC, RM));
            }
            let mut z = big(0.0);
            for l in &logits {
                z = z.add(&l.exp(PREC, RM, &mut self.wide.cc), PREC, RM);
            }
            let li = z.ln(PREC, RM, &mut self.wide.cc).sub(&logits[i], PREC, RM);
            total = total.add(&li, PREC, RM);
        }
        total.div(&big(n as f64), PREC, RM)
    }

    /// Central difference of the wide loss along one parameter.
    pub fn central_difference(&mut self, tensor: usize, index: usize, h: f64) -> f64 {
        let up = self.loss(Some((tensor, index, h)));
        let down = self.loss(Some((tensor, index, -h)));
        let fd = up.sub(&down, PREC, RM).div(&big(2.0 * h), PREC, RM);
        to_f64(&fd)
    }

    /// Central differences at `h` and `h/2` combined to cancel the O(h²)
    /// truncation term. Returns (refined, plain at `h`).
    pub fn richardson(&mut self, tensor: usize, index: usize, h: f64) -> (f64, f64) {
        let coarse = self.central_difference(tensor, index, h);
        let fine = self.central_difference(tensor, index, h / 2.0);
        ((4.0 * fine - coarse) / 3.0, coarse)
    }
}

pub fn to_f64(x: &BigFloat) -> f64 {
    x.to_string().parse().unwrap()
}

/// nDCG@k with the ideal DCG taken as the best over every ordering.
pub fn ndcg_by_permutation(grades: &[f64], k: usize) -> Option<f64> {
    fn dcg(g: &[f64], k: usize) -> f64 {
        g.iter().take(k).enumerate().map(|(i, x)| x / ((i + 2) as f64).log2()).sum()
    }
    fn best(g: &mut Vec<f64>, start: usize, k: usize, acc: &mut f64) {
        if start == g.len() {
            *acc = acc.max(dcg(g, k));
            return;
        }
        for i in start..g.len() {
            g.swap(start, i);
            best(g, start + 1, k, acc);
            g.swap(start, i);
        }
    }
    let mut ideal = 0.0;
    best(&mut grades.to_vec(), 0, k, &mut ideal);
    (ideal > 0.0).then(|| dcg(grades, k) / ideal)
}

/// Average ranks by counting, O(n²).
pub fn ranks_by_counting(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_plain(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Exact pair distribution of the query walk: q1 by click weight, a
/// uniform product among its top `k`, a uniform query of that product.
pub fn qq_path_distribution(g: &ClickGraph, k: usize) -> BTreeMap<(String, String), f64> {
    let total: u64 = g.edges().map(|(_, _, w)| w).sum();
    let mut out = BTreeMap::new();
    for q1 in g.query_ids() {
        let wq: u64 = g.edges().filter(|(q, _, _)| *q == q1).map(|(_, _, w)| w).sum();
        let mut adj: Vec<(u64, u32)> = g.edges().filter(|(q, _, _)| *q == q1).map(|(_, p, w)| (w, p.0)).collect();
        adj.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        adj.truncate(k);
        for &(_, p) in &adj {
            let qs: Vec<_> = g.edges().filter(|(_, pp, _)| pp.0 == p).map(|(q, _, _)| q).collect();
            for q2 in &qs {
                let pr = wq as f64 / total as f64 / adj.len() as f64 / qs.len() as f64;
                *out.entry((g.query_text(q1).to_owned(), g.query_text(*q2).to_owned())).or_insert(0.0) += pr;
            }
        }
    }
    out
}

/// The same walk with queries and products swapped.
pub fn pp_path_distribution(g: &ClickGraph, k: usize) -> BTreeMap<(String, String), f64> {
    let total: u64 = g.edges().map(|(_, _, w)| w).sum();
    let mut out = BTreeMap::new();
    for p1 in g.product_ids() {
        let wp: u64 = g.edges().filter(|(_, p, _)| *p == p1).map(|(_, _, w)| w).sum();
        let mut adj: Vec<(u64, u32)> = g.edges().filter(|(_, p, _)| *p == p1).map(|(q, _, w)| (w, q.0)).collect();
        adj.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        adj.truncate(k);
        for &(_, q) in &adj {
            let ps: Vec<_> = g.edges().filter(|(qq, _, _)| qq.0 == q).map(|(_, p, _)| p).collect();
            for p2 in &ps {
                let pr = wp as f64 / total as f64 / adj.len() as f64 / ps.len() as f64;
                *out.entry((g.product_text(p1).to_owned(), g.product_text(*p2).to_owned())).or_insert(0.0) += pr;
            }
        }
    }
    out
}

/// Total-variation distance between an empirical sample and a distribution.
pub fn tv_distance<'a>(
    sample: impl IntoIterator<Item = (&'a str, &'a str)>,
    dist: &BTreeMap<(String, String), f64>,
) -> f64 {
    let mut counts: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut n = 0.0;
    for (a, b) in sample {
        *counts.entry((a.to_owned(), b.to_owned())).or_insert(0.0) += 1.0;
        n += 1.0;
    }
    let mut keys: Vec<&(String, String)> = counts.keys().chain(dist.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (counts.get(k).copied().unwrap_or(0.0) / n - dist.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Five queries, four products, mixed weights and a top-2 tie.
pub fn five_by_four_graph() -> ClickGraph {
    let rows: [(&str, &str, u64); 11] = [
        ("red sofa", "velvet sofa", 3),
        ("red sofa", "linen sofa", 1),
        ("couch", "velvet sofa", 1),
        ("couch", "leather loveseat", 2),
        ("sleeper sofa", "linen sofa", 2),
        ("sleeper sofa", "leather loveseat", 2),
        ("sleeper sofa", "futon frame", 1),
        ("futon", "futon frame", 4),
        ("small couch", "leather loveseat", 1),
        ("small couch", "futon frame", 1),
        ("couch", "futon frame", 1),
    ];
    let mut b = coclick::ClickGraphBuilder::new();
    for (q, p, w) in rows {
        b.add_click(q, &coclick::ProductDoc::new(p, "", ""), w).unwrap();
    }
    b.build()
}

pub fn vocab_of_size(n: usize) -> coclick::Vocabulary {
    let words: Vec<String> = (1..n).map(|i| format!("w{i}")).collect();
    coclick::Vocabulary::build(words.iter().map(String::as_str))
}

pub struct Case {
    pub model: TowerModel,
    pub role: Role,
    pub batch: Vec<TokenPair>,
    pub tau: f64,
}

/// d, h, d_out ≤ 8, vocabularies of 2..12 tokens, parameter scales from
/// near-init to large, every role and batch sizes 1..=`max_n`.
pub fn random_case(rng: &mut ChaCha8Rng, max_n: usize) -> Case {
    let dims = coclick::ModelDims {
        embed: rng.random_range(1..=8),
        hidden: rng.random_range(1..=8),
        output: rng.random_range(2..=8),
    };
    let vocab_n = rng.random_range(2..12);
    let separate = rng.random_bool(0.3);
    let mut model = TowerModel::new(vocab_of_size(vocab_n), dims, separate, rng.random());
    let scale = [0.05, 0.2, 0.5, 1.0][rng.random_range(0..4)];
    for t in model.params.tensors_mut() {
        for x in t.iter_mut() {
            *x = rng.random_range(-scale..scale);
        }
    }
    let role = [Role::Qq, Role::Pp, Role::Pq, Role::Unsup][rng.random_range(0..4)];
    let n = rng.random_range(1..=max_n);
    let text = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        (0..rng.random_range(1..5)).map(|_| rng.random_range(0..vocab_n as u32)).collect()
    };
    let batch = (0..n).map(|_| TokenPair { left: text(rng), right: text(rng) }).collect();
    let tau = [0.07, 0.2, 0.5, 1.0][rng.random_range(0..4)];
    Case { model, role, batch, tau }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

fn f64_loss(c: &Case, tensor: usize, index: usize, h: f64) -> f64 {
    let mut bumped = c.model.clone();
    bumped.params.tensors_mut()[tensor][index] += h;
    batch_loss_tokens(&bumped, c.role, &c.batch, c.tau).unwrap().loss
}

fn f64_richardson(c: &Case, tensor: usize, index: usize, h: f64) -> f64 {
    let d = |h: f64| (f64_loss(c, tensor, index, h) - f64_loss(c, tensor, index, -h)) / (2.0 * h);
    (4.0 * d(h / 2.0) - d(h)) / 3.0
}

pub struct GradientCheck {
    pub checked: usize,
    pub escalated: usize,
    pub worst: f64,
    /// Worst plain (unrefined) 128-bit difference among escalated coordinates.
    pub worst_plain: f64,
}

impl std::fmt::Display for GradientCheck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "checked {} coordinates ({} in 128-bit), worst relative error {:e} (plain 128-bit step: {:e})",
            self.checked, self.escalated, self.worst, self.worst_plain
        )
    }
}

/// Analytic gradients of `configs` random cases against central
/// differences at base step 1e-4 with one Richardson refinement, on every
/// coordinate above 1e-8 in magnitude. A coordinate is first checked in
/// f64; one not within 1e-6 is re-checked against the 128-bit oracle,
/// whose differences are free of the f64 cancellation error that dominates
/// for gradients near 1e-8. Plain differences at 1e-4 carry an O(h²)
/// error above the tolerance on output-bias coordinates when the
/// pre-normalization output is short. Panics on any coordinate off by
/// 1e-4 or more.
pub fn check_gradients(seed: u64, configs: usize) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wide = WideLoss::default();
    let mut r = GradientCheck { checked: 0, escalated: 0, worst: 0.0, worst_plain: 0.0 };
    for case_no in 0..configs {
        let c = random_case(&mut rng, 8);
        let (_, grad) = batch_gradient_tokens(&c.model, c.role, &c.batch, c.tau).unwrap();
        let mut case = wide.case(&c.model, c.role, &c.batch, c.tau);
        for (ti, tensor) in grad.tensors().iter().enumerate() {
            for (k, &a) in tensor.iter().enumerate() {
                if a.abs() <= 1e-8 {
                    continue;
                }
                r.checked += 1;
                let mut rel = rel_err(a, f64_richardson(&c, ti, k, 1e-4));
                if rel >= 1e-6 {
                    r.escalated += 1;
                    let (fd, plain) = case.richardson(ti, k, 1e-4);
                    rel = rel_err(a, fd);
                    r.worst_plain = r.worst_plain.max(rel_err(a, plain));
                    assert!(rel < 1e-4, "case {case_no} tensor {ti}[{k}]: analytic {a:e} fd {fd:e}");
                }
                r.worst = r.worst.max(rel);
            }
        }
    }
    r
}
