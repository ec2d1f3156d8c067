//! In-batch contrastive training.
//!
//! For a batch of n pairs with left embeddings `a_i` and right embeddings
//! `b_j`, the per-pair loss is
//!
//! ```text
//! l_i = -cos(a_i, b_i)/τ + log Σ_j exp(cos(a_i, b_j)/τ)
//! ```
//!
//! and the batch loss is the mean over i. Gradients are derived by hand
//! through the cosine, the output normalization, the MLP, mean pooling and
//! the embedding table, and applied with Adam.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{dot, tower_backward, tower_forward, Params, Side, TowerForward, TowerModel};
use crate::error::{Error, Result};
use crate::eval::retrieval_accuracy;
use crate::pairs::{PairDataset, PairSample, Role};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Save a checkpoint every this many mini-batches.
    pub checkpoint_interval: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Cutoff of the dev retrieval accuracy recorded at each checkpoint.
    pub dev_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.07,
            batch_size: 64,
            learning_rate: 1e-3,
            epochs: 1,
            checkpoint_interval: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            dev_k: 10,
        }
    }
}

impl TrainConfig {
    /// Production-scale settings: batch 256, lr 1e-5, 4 epochs,
    /// checkpoints every 6000 batches, k = 50.
    pub fn production() -> Self {
        TrainConfig {
            batch_size: 256,
            learning_rate: 1e-5,
            epochs: 4,
            checkpoint_interval: 6000,
            dev_k: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.dev_k == 0 {
            return bad("dev_k must be >= 1");
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "temperature" | "tau" => self.temperature = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "checkpoint_interval" => self.checkpoint_interval = num(key, value)?,
            "adam_beta1" => self.adam_beta1 = num(key, value)?,
            "adam_beta2" => self.adam_beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "dev_k" => self.dev_k = num(key, value)?,
            other => return Err(Error::Config(format!("unknown training key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "temperature = {}", self.temperature);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "checkpoint_interval = {}", self.checkpoint_interval);
        let _ = writeln!(s, "adam_beta1 = {}", self.adam_beta1);
        let _ = writeln!(s, "adam_beta2 = {}", self.adam_beta2);
        let _ = writeln!(s, "adam_eps = {}", self.adam_eps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "dev_k = {}", self.dev_k);
        s
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Ordered training stages, e.g. query pairs for 3 epochs then product
/// pairs for 2.
#[derive(Debug, Clone)]
pub struct Curriculum {
    pub stages: Vec<(PairDataset, usize)>,
}

impl Curriculum {
    pub fn new(stages: Vec<(PairDataset, usize)>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Empty("curriculum"));
        }
        Ok(Curriculum { stages })
    }

    pub fn single(data: PairDataset, epochs: usize) -> Self {
        Curriculum {
            stages: vec![(data, epochs)],
        }
    }
}

/// Which towers encode the left and right text of a pair.
pub fn sides(role: Role) -> (Side, Side) {
    match role {
        Role::Qq | Role::Unsup => (Side::Query, Side::Query),
        Role::Pp => (Side::Product, Side::Product),
        Role::Pq => (Side::Query, Side::Product),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub per_pair: Vec<f64>,
}

/// Loss and d(loss)/d(similarity) for precomputed embeddings.
struct Objective {
    loss: BatchLoss,
    /// Row-major n×n: derivative of the mean loss with respect to cos(a_i, b_j).
    grad_cos: Vec<f64>,
}

fn objective(left: &[&[f64]], right: &[&[f64]], tau: f64) -> Result<Objective> {
    let n = left.len();
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    if right.len() != n {
        return Err(Error::LengthMismatch(n, right.len()));
    }
    let mut per_pair = Vec::with_capacity(n);
    let mut grad_cos = vec![0.0; n * n];
    let mut logits = vec![0.0; n];
    for i in 0..n {
        for (j, l) in logits.iter_mut().enumerate() {
            *l = dot(left[i], right[j]) / tau;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        let li = lse - logits[i];
        if !li.is_finite() {
            return Err(Error::NonFinite { index: i, what: "pair loss" });
        }
        per_pair.push(li);
        let row = &mut grad_cos[i * n..(i + 1) * n];
        for (j, g) in row.iter_mut().enumerate() {
            let softmax = (logits[j] - max).exp() / sum;
            let target = if i == j { 1.0 } else { 0.0 };
            *g = (softmax - target) / (n as f64 * tau);
        }
    }
    let loss = per_pair.iter().sum::<f64>() / n as f64;
    Ok(Objective {
        loss: BatchLoss { loss, per_pair },
        grad_cos,
    })
}

/// The contrastive loss on already-normalized embeddings.
pub fn contrastive_loss(left: &[Vec<f64>], right: &[Vec<f64>], tau: f64) -> Result<BatchLoss> {
    let l: Vec<&[f64]> = left.iter().map(Vec::as_slice).collect();
    let r: Vec<&[f64]> = right.iter().map(Vec::as_slice).collect();
    Ok(objective(&l, &r, tau)?.loss)
}

/// A pair already mapped to token ids.
#[derive(Debug, Clone)]
pub struct TokenPair {
    pub left: Vec<u32>,
    pub right: Vec<u32>,
}

fn batch_role(batch: &[PairSample]) -> Result<Role> {
    let first = batch.first().ok_or(Error::Empty("batch"))?.role;
    match batch.iter().find(|p| p.role != first) {
        Some(p) => Err(Error::MixedRoles(first, p.role)),
        None => Ok(first),
    }
}

fn tokenize_batch(m: &TowerModel, batch: &[PairSample]) -> Vec<TokenPair> {
    batch
        .iter()
        .map(|p| TokenPair {
            left: m.vocab.tokenize(&p.left),
            right: m.vocab.tokenize(&p.right),
        })
        .collect()
}

struct BatchForward {
    left: Vec<TowerForward>,
    right: Vec<TowerForward>,
}

fn forward_batch(m: &TowerModel, role: Role, batch: &[TokenPair]) -> Result<BatchForward> {
    let (ls, rs) = sides(role);
    let fwd = |side: Side, tokens: &[u32], i: usize| {
        tower_forward(m.params.tower(side), m.dims, tokens).map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite { index: i, what },
            other => other,
        })
    };
    let mut left = Vec::with_capacity(batch.len());
    let mut right = Vec::with_capacity(batch.len());
    for (i, p) in batch.iter().enumerate() {
        left.push(fwd(ls, &p.left, i)?);
        right.push(fwd(rs, &p.right, i)?);
    }
    Ok(BatchForward { left, right })
}

pub fn batch_loss(m: &TowerModel, batch: &[PairSample], tau: f64) -> Result<BatchLoss> {
    let role = batch_role(batch)?;
    batch_loss_tokens(m, role, &tokenize_batch(m, batch), tau)
}

pub fn batch_loss_tokens(m: &TowerModel, role: Role, batch: &[TokenPair], tau: f64) -> Result<BatchLoss> {
    let f = forward_batch(m, role, batch)?;
    let l: Vec<&[f64]> = f.left.iter().map(|x| x.output.as_slice()).collect();
    let r: Vec<&[f64]> = f.right.iter().map(|x| x.output.as_slice()).collect();
    Ok(objective(&l, &r, tau)?.loss)
}

/// Loss and exact gradient of the mean batch loss for every parameter.
pub fn batch_gradient(m: &TowerModel, batch: &[PairSample], tau: f64) -> Result<(BatchLoss, Params)> {
    let role = batch_role(batch)?;
    batch_gradient_tokens(m, role, &tokenize_batch(m, batch), tau)
}

pub fn batch_gradient_tokens(
    m: &TowerModel,
    role: Role,
    batch: &[TokenPair],
    tau: f64,
) -> Result<(BatchLoss, Params)> {
    let f = forward_batch(m, role, batch)?;
    let n = batch.len();
    let l: Vec<&[f64]> = f.left.iter().map(|x| x.output.as_slice()).collect();
    let r: Vec<&[f64]> = f.right.iter().map(|x| x.output.as_slice()).collect();
    let obj = objective(&l, &r, tau)?;

    let dim = m.dims.output;
    let mut g_left = vec![vec![0.0; dim]; n];
    let mut g_right = vec![vec![0.0; dim]; n];
    for i in 0..n {
        for j in 0..n {
            let g = obj.grad_cos[i * n + j];
            if g == 0.0 {
                continue;
            }
            for k in 0..dim {
                g_left[i][k] += g * r[j][k];
                g_right[j][k] += g * l[i][k];
            }
        }
    }

    let (ls, rs) = sides(role);
    let mut grad = m.params.zeros_like();
    for i in 0..n {
        tower_backward(m.params.tower(ls), m.dims, &f.left[i], &g_left[i], grad.tower_mut(ls));
        tower_backward(m.params.tower(rs), m.dims, &f.right[i], &g_right[i], grad.tower_mut(rs));
    }
    Ok((obj.loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn for_shapes(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    pub fn new(params: &Params) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::for_shapes(&shapes)
    }
}

/// One bias-corrected Adam update over matching lists of tensors.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameter tensors, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::Shape(format!(
                "tensor {i}: {} values, gradient {}, state {}",
                p.len(),
                g.len(),
                state.m[i].len()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..p.len() {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Applies an Adam step to every model parameter.
pub fn adam_step_params(state: &mut AdamState, params: &mut Params, grads: &Params, cfg: &AdamConfig) -> Result<()> {
    let grads = grads.tensors();
    let mut params = params.tensors_mut();
    adam_step(state, &mut params, &grads, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevMetric {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: TowerModel,
    /// Mini-batches trained so far.
    pub batch: usize,
    pub dev: Option<DevMetric>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub batch: usize,
    pub stage: usize,
    pub epoch: usize,
    pub loss: f64,
    pub dev_acc: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainLog {
    /// Mean batch loss for each (stage, epoch), in training order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut key = None;
        let (mut sum, mut count) = (0.0, 0usize);
        for r in &self.rows {
            if key != Some((r.stage, r.epoch)) {
                if count > 0 {
                    out.push(sum / count as f64);
                }
                key = Some((r.stage, r.epoch));
                sum = 0.0;
                count = 0;
            }
            sum += r.loss;
            count += 1;
        }
        if count > 0 {
            out.push(sum / count as f64);
        }
        out
    }

    /// `batch,loss,dev_acc` with an empty dev column between checkpoints.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("batch,loss,dev_acc\n");
        for r in &self.rows {
            let dev = r.dev_acc.map(|d| format!("{d}")).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", r.batch, r.loss, dev);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

fn snapshot(model: &TowerModel, batch: usize, dev: Option<&PairDataset>, k: usize) -> Checkpoint {
    let dev = dev.map(|d| DevMetric {
        k,
        accuracy: retrieval_accuracy(model, d, k),
    });
    Checkpoint {
        model: model.clone(),
        batch,
        dev,
    }
}

/// Trains `model` through each curriculum stage in order.
///
/// Each epoch reshuffles its dataset from the run's RNG and drops the last
/// partial batch; a dataset smaller than the batch size trains on a single
/// full-dataset batch. A checkpoint (scored on `dev` when given) is taken
/// every `checkpoint_interval` batches and once more at the end if the last
/// batch did not land on the interval.
pub fn train(
    mut model: TowerModel,
    curriculum: &Curriculum,
    cfg: &TrainConfig,
    dev: Option<&PairDataset>,
) -> Result<(TowerModel, TrainLog)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(&model.params);
    let adam_cfg = cfg.adam();
    let mut log = TrainLog::default();
    let mut batch_no = 0usize;

    for (stage, (data, epochs)) in curriculum.stages.iter().enumerate() {
        let role = data.role()?;
        let tokens = tokenize_batch(&model, &data.pairs);
        let batch_size = cfg.batch_size.min(tokens.len());
        let mut order: Vec<usize> = (0..tokens.len()).collect();
        let mut batch = Vec::with_capacity(batch_size);
        for epoch in 0..*epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks_exact(batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| tokens[i].clone()));
                let (loss, grad) = batch_gradient_tokens(&model, role, &batch, cfg.temperature)
                    .map_err(|e| Error::Training {
                        batch: batch_no,
                        source: Box::new(e),
                    })?;
                adam_step_params(&mut adam, &mut model.params, &grad, &adam_cfg)?;
                batch_no += 1;
                let mut row = LogRow {
                    batch: batch_no,
                    stage,
                    epoch,
                    loss: loss.loss,
                    dev_acc: None,
                };
                if batch_no % cfg.checkpoint_interval == 0 {
                    let ck = snapshot(&model, batch_no, dev, cfg.dev_k);
                    row.dev_acc = ck.dev.map(|d| d.accuracy);
                    log.checkpoints.push(ck);
                }
                log.rows.push(row);
            }
        }
    }
    if log.checkpoints.last().map(|c| c.batch) != Some(batch_no) {
        let ck = snapshot(&model, batch_no, dev, cfg.dev_k);
        if let Some(last) = log.rows.last_mut() {
            last.dev_acc = ck.dev.map(|d| d.accuracy);
        }
        log.checkpoints.push(ck);
    }
    Ok((model, log))
}

/// The checkpoint with the highest dev accuracy at `k`; earliest wins ties.
/// Checkpoints without a metric at `k` are only chosen when none has one,
/// in which case the last checkpoint is returned.
pub fn select_checkpoint(checkpoints: &[Checkpoint], k: usize) -> Option<&Checkpoint> {
    let mut best: Option<(&Checkpoint, f64)> = None;
    for ck in checkpoints {
        let Some(dev) = ck.dev.filter(|d| d.k == k) else {
            continue;
        };
        if best.is_none_or(|(_, b)| dev.accuracy > b) {
            best = Some((ck, dev.accuracy));
        }
    }
    best.map(|(c, _)| c).or_else(|| checkpoints.last())
}
