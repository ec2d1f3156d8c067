//! Two-tower text encoder.
//!
//! A tower maps a token sequence to a unit vector: mean-pool token
//! embeddings, apply `tanh(x·W1 + b1)·W2 + b2`, then L2-normalize. By default
//! queries and products go through the same tower; a separate product tower
//! can be enabled for ablations.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::text::split_words;

pub const UNK: u32 = 0;
const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    /// Builds a vocabulary from every word in `texts`, sorted, after UNK.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = texts.into_iter().flat_map(split_words).collect();
        Self::from_tokens(words)
    }

    fn from_tokens(words: impl IntoIterator<Item = String>) -> Self {
        let mut tokens = vec![UNK_TOKEN.to_owned()];
        tokens.extend(words.into_iter().filter(|w| w != UNK_TOKEN));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Lowercases, splits on whitespace and punctuation, maps unknown words
    /// to UNK. Text with no word characters becomes a single UNK.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let ids: Vec<u32> = split_words(text).iter().map(|w| self.id(w)).collect();
        if ids.is_empty() {
            vec![UNK]
        } else {
            ids
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            embed: 64,
            hidden: 128,
            output: 64,
        }
    }
}

/// Parameters of one tower. Matrices are row-major: `w1` is embed×hidden,
/// `w2` is hidden×output, `embed` is vocab×embed.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    pub embed: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl TowerParams {
    pub fn zeros(vocab: usize, dims: ModelDims) -> Self {
        TowerParams {
            embed: vec![0.0; vocab * dims.embed],
            w1: vec![0.0; dims.embed * dims.hidden],
            b1: vec![0.0; dims.hidden],
            w2: vec![0.0; dims.hidden * dims.output],
            b2: vec![0.0; dims.output],
        }
    }

    fn random(vocab: usize, dims: ModelDims, rng: &mut impl Rng) -> Self {
        let mut t = Self::zeros(vocab, dims);
        for x in t.tensors_mut().into_iter().flat_map(|s| s.iter_mut()) {
            *x = rng.random_range(-0.05..0.05);
        }
        t
    }

    pub fn tensors(&self) -> [&[f64]; 5] {
        [&self.embed, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.embed,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// All trainable parameters; `product` is `None` when the towers are shared.
/// Gradients use the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub query: TowerParams,
    pub product: Option<TowerParams>,
}

impl Params {
    pub fn zeros_like(&self) -> Params {
        let z = |t: &TowerParams| TowerParams {
            embed: vec![0.0; t.embed.len()],
            w1: vec![0.0; t.w1.len()],
            b1: vec![0.0; t.b1.len()],
            w2: vec![0.0; t.w2.len()],
            b2: vec![0.0; t.b2.len()],
        };
        Params {
            query: z(&self.query),
            product: self.product.as_ref().map(z),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.query.tensors().to_vec();
        if let Some(p) = &self.product {
            v.extend(p.tensors());
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.query.tensors_mut().into_iter().collect();
        if let Some(p) = &mut self.product {
            v.extend(p.tensors_mut());
        }
        v
    }

    pub fn tower(&self, side: Side) -> &TowerParams {
        match (side, &self.product) {
            (Side::Product, Some(p)) => p,
            _ => &self.query,
        }
    }

    pub fn tower_mut(&mut self, side: Side) -> &mut TowerParams {
        match (side, &mut self.product) {
            (Side::Product, Some(p)) => p,
            _ => &mut self.query,
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// Which tower a text goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Query,
    Product,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Cosine of two unit vectors, i.e. their dot product clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.0.len() != b.0.len() {
        return Err(Error::Shape(format!("vector lengths {} and {}", a.0.len(), b.0.len())));
    }
    if a.0.iter().chain(&b.0).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index: 0, what: "cosine input" });
    }
    Ok(dot(&a.0, &b.0).clamp(-1.0, 1.0))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct TowerForward {
    pub tokens: Vec<u32>,
    pub pooled: Vec<f64>,
    pub hidden: Vec<f64>,
    pub raw_norm: f64,
    pub output: Vec<f64>,
}

pub fn tower_forward(t: &TowerParams, dims: ModelDims, tokens: &[u32]) -> Result<TowerForward> {
    if tokens.is_empty() {
        return Err(Error::Empty("token list"));
    }
    let d = dims.embed;
    let mut pooled = vec![0.0; d];
    for &tok in tokens {
        let row = &t.embed[tok as usize * d..(tok as usize + 1) * d];
        for (acc, v) in pooled.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let inv = 1.0 / tokens.len() as f64;
    pooled.iter_mut().for_each(|x| *x *= inv);

    let mut hidden = t.b1.clone();
    for (i, &x) in pooled.iter().enumerate() {
        let row = &t.w1[i * dims.hidden..(i + 1) * dims.hidden];
        for (h, w) in hidden.iter_mut().zip(row) {
            *h += x * w;
        }
    }
    hidden.iter_mut().for_each(|h| *h = h.tanh());

    let mut output = t.b2.clone();
    for (j, &h) in hidden.iter().enumerate() {
        let row = &t.w2[j * dims.output..(j + 1) * dims.output];
        for (o, w) in output.iter_mut().zip(row) {
            *o += h * w;
        }
    }
    let raw_norm = output.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !raw_norm.is_finite() || raw_norm == 0.0 {
        return Err(Error::NonFinite { index: 0, what: "tower output norm" });
    }
    output.iter_mut().for_each(|x| *x /= raw_norm);
    Ok(TowerForward {
        tokens: tokens.to_vec(),
        pooled,
        hidden,
        raw_norm,
        output,
    })
}

/// Accumulates into `grad` the gradient of a scalar whose derivative with
/// respect to the normalized output is `grad_out`.
pub fn tower_backward(
    t: &TowerParams,
    dims: ModelDims,
    fwd: &TowerForward,
    grad_out: &[f64],
    grad: &mut TowerParams,
) {
    let e = &fwd.output;
    let proj = dot(e, grad_out);
    let g_raw: Vec<f64> = grad_out
        .iter()
        .zip(e)
        .map(|(g, e)| (g - e * proj) / fwd.raw_norm)
        .collect();

    let mut g_hidden = vec![0.0; dims.hidden];
    for (j, &h) in fwd.hidden.iter().enumerate() {
        let row = &t.w2[j * dims.output..(j + 1) * dims.output];
        let grow = &mut grad.w2[j * dims.output..(j + 1) * dims.output];
        let mut acc = 0.0;
        for ((gw, w), go) in grow.iter_mut().zip(row).zip(&g_raw) {
            *gw += h * go;
            acc += w * go;
        }
        g_hidden[j] = acc * (1.0 - h * h);
    }
    for (gb, go) in grad.b2.iter_mut().zip(&g_raw) {
        *gb += go;
    }

    let mut g_pooled = vec![0.0; dims.embed];
    for (i, &x) in fwd.pooled.iter().enumerate() {
        let row = &t.w1[i * dims.hidden..(i + 1) * dims.hidden];
        let grow = &mut grad.w1[i * dims.hidden..(i + 1) * dims.hidden];
        let mut acc = 0.0;
        for ((gw, w), gz) in grow.iter_mut().zip(row).zip(&g_hidden) {
            *gw += x * gz;
            acc += w * gz;
        }
        g_pooled[i] = acc;
    }
    for (gb, gz) in grad.b1.iter_mut().zip(&g_hidden) {
        *gb += gz;
    }

    let inv = 1.0 / fwd.tokens.len() as f64;
    let d = dims.embed;
    for &tok in &fwd.tokens {
        let grow = &mut grad.embed[tok as usize * d..(tok as usize + 1) * d];
        for (ge, gp) in grow.iter_mut().zip(&g_pooled) {
            *ge += gp * inv;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TowerModel {
    pub vocab: Vocabulary,
    pub dims: ModelDims,
    pub params: Params,
}

const MAGIC: &[u8; 4] = b"CCKT";
const FORMAT_VERSION: u32 = 1;

impl TowerModel {
    /// Uniform(-0.05, 0.05) initialization drawn from `seed`.
    pub fn new(vocab: Vocabulary, dims: ModelDims, separate_towers: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query = TowerParams::random(vocab.len(), dims, &mut rng);
        let product = separate_towers.then(|| TowerParams::random(vocab.len(), dims, &mut rng));
        TowerModel {
            vocab,
            dims,
            params: Params { query, product },
        }
    }

    pub fn shared(&self) -> bool {
        self.params.product.is_none()
    }

    pub fn embed_tokens(&self, side: Side, tokens: &[u32]) -> Result<EmbeddingVector> {
        let f = tower_forward(self.params.tower(side), self.dims, tokens)?;
        Ok(EmbeddingVector(f.output))
    }

    pub fn embed_text(&self, side: Side, text: &str) -> Result<EmbeddingVector> {
        self.embed_tokens(side, &self.vocab.tokenize(text))
    }

    pub fn embed_query(&self, text: &str) -> Result<EmbeddingVector> {
        self.embed_text(Side::Query, text)
    }

    pub fn embed_product(&self, text: &str) -> Result<EmbeddingVector> {
        self.embed_text(Side::Product, text)
    }

    pub fn is_finite(&self) -> bool {
        self.params.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for n in [self.dims.embed, self.dims.hidden, self.dims.output] {
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        out.push(u8::from(!self.shared()));
        out.extend_from_slice(&(self.vocab.len() as u32).to_le_bytes());
        for tok in &self.vocab.tokens {
            out.extend_from_slice(&(tok.len() as u32).to_le_bytes());
            out.extend_from_slice(tok.as_bytes());
        }
        for t in self.params.tensors() {
            for x in t {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let dims = ModelDims {
            embed: r.u32()? as usize,
            hidden: r.u32()? as usize,
            output: r.u32()? as usize,
        };
        let separate = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad tower flag {b}"))),
        };
        let n_tokens = r.u32()? as usize;
        let mut tokens = Vec::with_capacity(n_tokens);
        for _ in 0..n_tokens {
            let len = r.u32()? as usize;
            let s = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("token is not UTF-8".into()))?;
            tokens.push(s.to_owned());
        }
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Checkpoint("vocabulary must start with UNK".into()));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != tokens.len() {
            return Err(Error::Checkpoint("duplicate vocabulary entry".into()));
        }
        let vocab = Vocabulary { tokens, index };
        let mut params = Params {
            query: TowerParams::zeros(vocab.len(), dims),
            product: separate.then(|| TowerParams::zeros(vocab.len(), dims)),
        };
        for t in params.tensors_mut() {
            for x in t.iter_mut() {
                *x = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(TowerModel { vocab, dims, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
