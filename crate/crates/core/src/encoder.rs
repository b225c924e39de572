//! Sentence encoder: token + positional embeddings, a pre-norm transformer
//! encoder stack, mean pooling, and optional L2 normalization.
//!
//! Everything runs in `f64` on the CPU. The forward pass can retain its
//! activations ([`forward`]) so that [`backward`] can compute exact gradients
//! of any scalar function of the output vector.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::daystring::{Vocabulary, MAX_TOKENS};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

pub const MAX_LEN: usize = 256;
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub normalize_output: bool,
    pub vocab_size: usize,
    /// Positions holding this id are ignored by attention and pooling.
    pub pad_id: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::for_vocabulary(&Vocabulary::default())
    }
}

impl EncoderConfig {
    pub fn for_vocabulary(vocab: &Vocabulary) -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_len: MAX_LEN,
            normalize_output: true,
            vocab_size: vocab.size(),
            pad_id: Some(vocab.pad_id()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d_model == 0 || self.vocab_size == 0 {
            return bad("d_model and vocab_size must be positive".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_layers > 0 && self.d_ff == 0 {
            return bad("d_ff must be positive".into());
        }
        if self.max_len != MAX_LEN {
            return bad(format!("max_len must be {MAX_LEN}, got {}", self.max_len));
        }
        if let Some(p) = self.pad_id {
            if p >= self.vocab_size {
                return bad(format!("pad_id {p} outside vocabulary of size {}", self.vocab_size));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    fn sampled(shape: &[usize], rng: &mut Rng, dist: impl Distribution<f64>) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(|_| dist.sample(rng)).collect() }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// All trainable encoder parameters. The same type holds gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub token_embeddings: Tensor,
    pub positional_embeddings: Tensor,
    pub layers: Vec<LayerParams>,
}

const LAYER_TENSORS: [&str; 12] =
    ["ln1_gain", "ln1_bias", "wq", "wk", "wv", "wo", "ln2_gain", "ln2_bias", "w1", "b1", "w2", "b2"];

impl LayerParams {
    fn tensors(&self) -> [&Tensor; 12] {
        [
            &self.ln1_gain, &self.ln1_bias, &self.wq, &self.wk, &self.wv, &self.wo,
            &self.ln2_gain, &self.ln2_bias, &self.w1, &self.b1, &self.w2, &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 12] {
        [
            &mut self.ln1_gain, &mut self.ln1_bias, &mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo,
            &mut self.ln2_gain, &mut self.ln2_bias, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2,
        ]
    }
}

impl ModelParams {
    /// Tensors in canonical order with dotted names, e.g. `layers.0.wq`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("token_embeddings".to_string(), &self.token_embeddings),
            ("positional_embeddings".to_string(), &self.positional_embeddings),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in LAYER_TENSORS.iter().zip(layer.tensors()) {
                out.push((format!("layers.{i}.{name}"), t));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embeddings, &mut self.positional_embeddings];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.data.len()).sum()
    }

    /// Adds `scale * other` elementwise.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.named_tensors()) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += scale * s;
            }
        }
    }

    /// Compares every value by its bit pattern.
    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        let (a, b) = (self.named_tensors(), other.named_tensors());
        a.len() == b.len()
            && a.iter().zip(&b).all(|((na, ta), (nb, tb))| {
                na == nb
                    && ta.shape == tb.shape
                    && ta.data.iter().zip(&tb.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// First tensor containing a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named_tensors().into_iter().find(|(_, t)| t.data.iter().any(|x| !x.is_finite())).map(|(n, _)| n)
    }

    pub fn check_shapes(&self, config: &EncoderConfig) -> Result<()> {
        let expected = init_shapes(config);
        let found = self.named_tensors();
        if expected.len() != found.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                found.len()
            )));
        }
        for ((en, es), (fname, t)) in expected.iter().zip(&found) {
            if en != fname || *es != t.shape || t.data.len() != es.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!("tensor {fname} has shape {:?}, expected {es:?}", t.shape)));
            }
        }
        Ok(())
    }
}

fn init_shapes(config: &EncoderConfig) -> Vec<(String, Vec<usize>)> {
    let (d, f) = (config.d_model, config.d_ff);
    let mut out = vec![
        ("token_embeddings".to_string(), vec![config.vocab_size, d]),
        ("positional_embeddings".to_string(), vec![config.max_len, d]),
    ];
    let layer_shapes = [vec![d], vec![d], vec![d, d], vec![d, d], vec![d, d], vec![d, d], vec![d], vec![d], vec![d, f], vec![f], vec![f, d], vec![d]];
    for i in 0..config.n_layers {
        for (name, shape) in LAYER_TENSORS.iter().zip(&layer_shapes) {
            out.push((format!("layers.{i}.{name}"), shape.clone()));
        }
    }
    out
}

/// Draws fresh parameters.
///
/// Token embeddings ~ N(0, 1), positional embeddings ~ N(0, 0.1²), attention
/// and first feed-forward projections ~ U(±1/√d_model), second feed-forward
/// projection ~ U(±1/√d_ff). Layer-norm gains are 1; all biases 0.
pub fn init_params(config: &EncoderConfig, rng: &mut Rng) -> Result<ModelParams> {
    config.validate()?;
    let (d, f) = (config.d_model, config.d_ff);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let pos = Normal::new(0.0, 0.1).expect("valid normal");
    let proj_d = Uniform::new_inclusive(-1.0 / (d as f64).sqrt(), 1.0 / (d as f64).sqrt()).expect("valid range");
    let token_embeddings = Tensor::sampled(&[config.vocab_size, d], rng, unit);
    let positional_embeddings = Tensor::sampled(&[config.max_len, d], rng, pos);
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        let proj_f = Uniform::new_inclusive(-1.0 / (f as f64).sqrt(), 1.0 / (f as f64).sqrt()).expect("valid range");
        layers.push(LayerParams {
            ln1_gain: Tensor::filled(&[d], 1.0),
            ln1_bias: Tensor::zeros(&[d]),
            wq: Tensor::sampled(&[d, d], rng, proj_d),
            wk: Tensor::sampled(&[d, d], rng, proj_d),
            wv: Tensor::sampled(&[d, d], rng, proj_d),
            wo: Tensor::sampled(&[d, d], rng, proj_d),
            ln2_gain: Tensor::filled(&[d], 1.0),
            ln2_bias: Tensor::zeros(&[d]),
            w1: Tensor::sampled(&[d, f], rng, proj_d),
            b1: Tensor::zeros(&[f]),
            w2: Tensor::sampled(&[f, d], rng, proj_f),
            b2: Tensor::zeros(&[d]),
        });
    }
    Ok(ModelParams { token_embeddings, positional_embeddings, layers })
}

// ---------------------------------------------------------------------------
// dense kernels (row-major)

/// `a (m×k) · b (k×n)`
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &w) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += x * w;
            }
        }
    }
    out
}

/// `out (k×n) += aᵀ · d` where `a` is m×k and `d` is m×n.
fn matmul_at_b_acc(a: &[f64], d: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (o, &g) in out[p * n..(p + 1) * n].iter_mut().zip(drow) {
                *o += x * g;
            }
        }
    }
}

/// `d (m×n) · bᵀ` where `b` is k×n; result is m×k.
fn matmul_a_bt(d: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let drow = &d[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] = drow.iter().zip(&b[p * n..(p + 1) * n]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], rows: usize, d: usize) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for i in 0..rows {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = gain[j] * h + bias[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns dx; accumulates gain/bias gradients.
fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    gain: &[f64],
    rows: usize,
    d: usize,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for i in 0..rows {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[i * d + j] = cache.rstd[i] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

struct LayerCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights `[head][query][key]`.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    pre_act: Vec<f64>,
    act: Vec<f64>,
}

/// Activations retained by [`forward`] for [`backward`].
pub struct ForwardCache {
    ids: Vec<usize>,
    valid: Vec<bool>,
    layers: Vec<LayerCache>,
    pooled: Vec<f64>,
    pooled_norm: f64,
    pub output: Vec<f64>,
}

fn check_input(config: &EncoderConfig, ids: &[usize]) -> Result<Vec<bool>> {
    if ids.is_empty() {
        return Err(Error::EmptySequence);
    }
    if ids.len() > MAX_TOKENS {
        return Err(Error::SequenceTooLong { len: ids.len(), max: MAX_TOKENS });
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= config.vocab_size) {
        return Err(Error::TokenIdOutOfRange { id, vocab_size: config.vocab_size });
    }
    let valid: Vec<bool> = ids.iter().map(|&id| Some(id) != config.pad_id).collect();
    if !valid.iter().any(|&v| v) {
        return Err(Error::EmptySequence);
    }
    Ok(valid)
}

/// Runs the encoder and keeps the activations needed for backpropagation.
pub fn forward(params: &ModelParams, config: &EncoderConfig, ids: &[usize]) -> Result<ForwardCache> {
    let valid = check_input(config, ids)?;
    let (len, d, f) = (ids.len(), config.d_model, config.d_ff);
    let (heads, dh) = (config.n_heads, config.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let mut x = vec![0.0; len * d];
    for (i, &id) in ids.iter().enumerate() {
        let e = params.token_embeddings.row(id);
        let p = params.positional_embeddings.row(i);
        for j in 0..d {
            x[i * d + j] = e[j] + p[j];
        }
    }

    let mut caches = Vec::with_capacity(config.n_layers);
    for layer in &params.layers {
        let (h1, ln1) = layer_norm(&x, &layer.ln1_gain.data, &layer.ln1_bias.data, len, d);
        let q = matmul(&h1, &layer.wq.data, len, d, d);
        let k = matmul(&h1, &layer.wk.data, len, d, d);
        let v = matmul(&h1, &layer.wv.data, len, d, d);
        let mut probs = vec![0.0; heads * len * len];
        let mut ctx = vec![0.0; len * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..len {
                let row = &mut probs[(h * len + i) * len..(h * len + i + 1) * len];
                let qi = &q[i * d + off..i * d + off + dh];
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    if valid[j] {
                        let kj = &k[j * d + off..j * d + off + dh];
                        let s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        row[j] = s;
                        max = max.max(s);
                    }
                }
                let mut total = 0.0;
                for j in 0..len {
                    row[j] = if valid[j] { (row[j] - max).exp() } else { 0.0 };
                    total += row[j];
                }
                for j in 0..len {
                    row[j] /= total;
                    if row[j] != 0.0 {
                        for c in 0..dh {
                            ctx[i * d + off + c] += row[j] * v[j * d + off + c];
                        }
                    }
                }
            }
        }
        let attn_out = matmul(&ctx, &layer.wo.data, len, d, d);
        for (xi, a) in x.iter_mut().zip(&attn_out) {
            *xi += a;
        }

        let (h2, ln2) = layer_norm(&x, &layer.ln2_gain.data, &layer.ln2_bias.data, len, d);
        let mut pre_act = matmul(&h2, &layer.w1.data, len, d, f);
        for i in 0..len {
            for (u, b) in pre_act[i * f..(i + 1) * f].iter_mut().zip(&layer.b1.data) {
                *u += b;
            }
        }
        let act: Vec<f64> = pre_act.iter().map(|&u| gelu(u)).collect();
        let ff = matmul(&act, &layer.w2.data, len, f, d);
        for i in 0..len {
            for j in 0..d {
                x[i * d + j] += ff[i * d + j] + layer.b2.data[j];
            }
        }
        caches.push(LayerCache { ln1, h1, q, k, v, probs, ctx, ln2, h2, pre_act, act });
    }

    let count = valid.iter().filter(|&&v| v).count() as f64;
    let mut pooled = vec![0.0; d];
    for i in (0..len).filter(|&i| valid[i]) {
        for j in 0..d {
            pooled[j] += x[i * d + j];
        }
    }
    pooled.iter_mut().for_each(|p| *p /= count);
    let pooled_norm = pooled.iter().map(|p| p * p).sum::<f64>().sqrt();
    let output = if config.normalize_output {
        if pooled_norm == 0.0 {
            return Err(Error::ZeroVector);
        }
        pooled.iter().map(|p| p / pooled_norm).collect()
    } else {
        pooled.clone()
    };
    if output.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("encoder output".into()));
    }
    Ok(ForwardCache { ids: ids.to_vec(), valid, layers: caches, pooled, pooled_norm, output })
}

/// Sentence embedding of a token-id sequence.
pub fn encode(params: &ModelParams, config: &EncoderConfig, ids: &[usize]) -> Result<Vec<f64>> {
    forward(params, config, ids).map(|c| c.output)
}

/// Accumulates into `grads` the gradient of a scalar whose derivative with
/// respect to the encoder output is `d_output`.
pub fn backward(
    params: &ModelParams,
    config: &EncoderConfig,
    cache: &ForwardCache,
    d_output: &[f64],
    grads: &mut ModelParams,
) {
    let (len, d, f) = (cache.ids.len(), config.d_model, config.d_ff);
    let (heads, dh) = (config.n_heads, config.head_dim());
    let scale = 1.0 / (dh as f64).sqrt();

    let d_pooled: Vec<f64> = if config.normalize_output {
        let dot: f64 = cache.output.iter().zip(d_output).map(|(o, g)| o * g).sum();
        cache.output.iter().zip(d_output).map(|(o, g)| (g - o * dot) / cache.pooled_norm).collect()
    } else {
        d_output.to_vec()
    };
    debug_assert_eq!(cache.pooled.len(), d);

    let count = cache.valid.iter().filter(|&&v| v).count() as f64;
    let mut dx = vec![0.0; len * d];
    for i in (0..len).filter(|&i| cache.valid[i]) {
        for j in 0..d {
            dx[i * d + j] = d_pooled[j] / count;
        }
    }

    for (li, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[li];

        // feed-forward block: x += gelu(h2·W1 + b1)·W2 + b2
        for i in 0..len {
            for j in 0..d {
                g.b2.data[j] += dx[i * d + j];
            }
        }
        matmul_at_b_acc(&lc.act, &dx, len, f, d, &mut g.w2.data);
        let mut d_pre = matmul_a_bt(&dx, &layer.w2.data, len, d, f);
        for (du, &u) in d_pre.iter_mut().zip(&lc.pre_act) {
            *du *= gelu_grad(u);
        }
        for i in 0..len {
            for (b, du) in g.b1.data.iter_mut().zip(&d_pre[i * f..(i + 1) * f]) {
                *b += du;
            }
        }
        matmul_at_b_acc(&lc.h2, &d_pre, len, d, f, &mut g.w1.data);
        let dh2 = matmul_a_bt(&d_pre, &layer.w1.data, len, f, d);
        let dln2 = layer_norm_backward(&dh2, &lc.ln2, &layer.ln2_gain.data, len, d, &mut g.ln2_gain.data, &mut g.ln2_bias.data);
        for (a, b) in dx.iter_mut().zip(&dln2) {
            *a += b;
        }

        // attention block: x += softmax(QKᵀ/√dh)·V·Wo
        matmul_at_b_acc(&lc.ctx, &dx, len, d, d, &mut g.wo.data);
        let dctx = matmul_a_bt(&dx, &layer.wo.data, len, d, d);
        let mut dq = vec![0.0; len * d];
        let mut dk = vec![0.0; len * d];
        let mut dv = vec![0.0; len * d];
        let mut dprob = vec![0.0; len];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..len {
                let p = &lc.probs[(h * len + i) * len..(h * len + i + 1) * len];
                let dci = &dctx[i * d + off..i * d + off + dh];
                let mut weighted = 0.0;
                for j in 0..len {
                    if p[j] == 0.0 {
                        dprob[j] = 0.0;
                        continue;
                    }
                    let vj = &lc.v[j * d + off..j * d + off + dh];
                    dprob[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    weighted += p[j] * dprob[j];
                    for c in 0..dh {
                        dv[j * d + off + c] += p[j] * dci[c];
                    }
                }
                for j in 0..len {
                    if p[j] == 0.0 {
                        continue;
                    }
                    let ds = p[j] * (dprob[j] - weighted) * scale;
                    for c in 0..dh {
                        dq[i * d + off + c] += ds * lc.k[j * d + off + c];
                        dk[j * d + off + c] += ds * lc.q[i * d + off + c];
                    }
                }
            }
        }
        matmul_at_b_acc(&lc.h1, &dq, len, d, d, &mut g.wq.data);
        matmul_at_b_acc(&lc.h1, &dk, len, d, d, &mut g.wk.data);
        matmul_at_b_acc(&lc.h1, &dv, len, d, d, &mut g.wv.data);
        let mut dh1 = matmul_a_bt(&dq, &layer.wq.data, len, d, d);
        for (a, b) in dh1.iter_mut().zip(matmul_a_bt(&dk, &layer.wk.data, len, d, d)) {
            *a += b;
        }
        for (a, b) in dh1.iter_mut().zip(matmul_a_bt(&dv, &layer.wv.data, len, d, d)) {
            *a += b;
        }
        let dln1 = layer_norm_backward(&dh1, &lc.ln1, &layer.ln1_gain.data, len, d, &mut g.ln1_gain.data, &mut g.ln1_bias.data);
        for (a, b) in dx.iter_mut().zip(&dln1) {
            *a += b;
        }
    }

    for (i, &id) in cache.ids.iter().enumerate() {
        let src = &dx[i * d..(i + 1) * d];
        for (e, s) in grads.token_embeddings.row_mut(id).iter_mut().zip(src) {
            *e += s;
        }
        for (p, s) in grads.positional_embeddings.row_mut(i).iter_mut().zip(src) {
            *p += s;
        }
    }
}

// ---------------------------------------------------------------------------
// pretrained token embeddings

/// Replaces token-embedding rows from a word-vector text file (`token v1 … vd`
/// per line; an optional leading `count dim` line is skipped). `aliases` maps
/// a vocabulary token to the name to look up in the file. Returns the number
/// of rows replaced.
pub fn load_pretrained_token_embeddings<R: BufRead>(
    input: R,
    vocab: &Vocabulary,
    params: &mut ModelParams,
    aliases: Option<&HashMap<String, String>>,
) -> Result<usize> {
    let d = params.token_embeddings.shape[1];
    let mut vectors: HashMap<String, Vec<f64>> = HashMap::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if lineno == 0 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
            continue;
        }
        let row = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Row { line: lineno as u64 + 1, message: e.to_string() })?;
        if row.len() != d {
            return Err(Error::DimensionMismatch { expected: d, found: row.len() });
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("pretrained vector for {token}")));
        }
        if vectors.insert(token.to_string(), row).is_some() {
            return Err(Error::Duplicate(token.to_string()));
        }
    }
    let mut replaced = 0;
    for token in vocab.data_tokens() {
        let key = aliases.and_then(|a| a.get(token)).unwrap_or(token);
        if let Some(row) = vectors.get(key) {
            let id = vocab.id(token).expect("token from vocabulary");
            params.token_embeddings.row_mut(id).copy_from_slice(row);
            replaced += 1;
        }
    }
    if replaced == 0 {
        log::warn!("pretrained embedding file shares no tokens with the vocabulary");
    }
    Ok(replaced)
}

// ---------------------------------------------------------------------------
// checkpoints
//
// Layout: b"DAYEMBED" | version u32 LE | header length u32 LE | header JSON |
// tensor payload (little-endian floats, canonical tensor order) | SHA-256 of
// every preceding byte.

const MAGIC: &[u8; 8] = b"DAYEMBED";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: EncoderConfig,
    dtype: Precision,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

pub fn checkpoint_bytes(params: &ModelParams, config: &EncoderConfig, dtype: Precision) -> Result<Vec<u8>> {
    params.check_shapes(config)?;
    let named = params.named_tensors();
    let header = CheckpointHeader {
        config: config.clone(),
        dtype,
        tensors: named.iter().map(|(n, t)| TensorMeta { name: n.clone(), shape: t.shape.clone() }).collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + header.len() + params.num_parameters() * 8 + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, t) in &named {
        for &x in &t.data {
            match dtype {
                Precision::F64 => buf.extend_from_slice(&x.to_le_bytes()),
                Precision::F32 => buf.extend_from_slice(&(x as f32).to_le_bytes()),
            }
        }
    }
    let digest = sha256(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

fn sha256(data: &[u8]) -> [u8; 32] {
    use sha2::Digest;
    let out = sha2::Sha256::digest(data);
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&out);
    bytes
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(ModelParams, EncoderConfig)> {
    if bytes.len() < MAGIC.len() + 8 + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if sha256(body) != checksum {
        return Err(Error::Checkpoint("checksum mismatch (corrupt or truncated file)".into()));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { expected: CHECKPOINT_VERSION, found: version });
    }
    let header_len = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let header_end = 16 + header_len;
    if header_end > body.len() {
        return Err(Error::Checkpoint("header overruns file".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[16..header_end])?;
    header.config.validate()?;
    let width = match header.dtype {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let mut payload = &body[header_end..];
    let mut read_tensor = |meta: &TensorMeta| -> Result<Tensor> {
        let n: usize = meta.shape.iter().product();
        if payload.len() < n * width {
            return Err(Error::Checkpoint(format!("payload too short for {}", meta.name)));
        }
        let (chunk, rest) = payload.split_at(n * width);
        payload = rest;
        let data = match header.dtype {
            Precision::F64 => chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            Precision::F32 => {
                chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
            }
        };
        Ok(Tensor { shape: meta.shape.clone(), data })
    };
    let mut metas = header.tensors.iter();
    let mut next = |expected: &str| -> Result<Tensor> {
        let meta = metas.next().ok_or_else(|| Error::Checkpoint(format!("missing tensor {expected}")))?;
        if meta.name != expected {
            return Err(Error::Checkpoint(format!("expected tensor {expected}, found {}", meta.name)));
        }
        read_tensor(meta)
    };
    let token_embeddings = next("token_embeddings")?;
    let positional_embeddings = next("positional_embeddings")?;
    let mut layers = Vec::with_capacity(header.config.n_layers);
    for i in 0..header.config.n_layers {
        let mut t = LAYER_TENSORS.iter().map(|name| next(&format!("layers.{i}.{name}")));
        let mut take = || t.next().expect("12 names");
        layers.push(LayerParams {
            ln1_gain: take()?,
            ln1_bias: take()?,
            wq: take()?,
            wk: take()?,
            wv: take()?,
            wo: take()?,
            ln2_gain: take()?,
            ln2_bias: take()?,
            w1: take()?,
            b1: take()?,
            w2: take()?,
            b2: take()?,
        });
    }
    drop(next);
    if metas.next().is_some() {
        return Err(Error::Checkpoint("unexpected trailing tensors".into()));
    }
    if !payload.is_empty() {
        return Err(Error::Checkpoint("trailing payload bytes".into()));
    }
    let params = ModelParams { token_embeddings, positional_embeddings, layers };
    params.check_shapes(&header.config)?;
    Ok((params, header.config))
}

/// Writes a lossless (`f64`) checkpoint.
pub fn save_checkpoint(params: &ModelParams, config: &EncoderConfig, path: &Path) -> Result<()> {
    save_checkpoint_with(params, config, path, Precision::F64)
}

pub fn save_checkpoint_with(params: &ModelParams, config: &EncoderConfig, path: &Path, dtype: Precision) -> Result<()> {
    let bytes = checkpoint_bytes(params, config, dtype)?;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, EncoderConfig)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}

/// Fresh parameters from a seed, for callers without their own rng.
pub fn init_params_seeded(config: &EncoderConfig, seed: u64) -> Result<ModelParams> {
    init_params(config, &mut seed::derive_rng(seed, "encoder", "init"))
}
