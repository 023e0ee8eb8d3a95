//! Windowed-context sentence encoder with a boundary head and a pair-relation
//! head, plus the combined forward/backward pass used for training.
//!
//! Sentence `i` is encoded as
//!
//! ```text
//! h_i = tanh(Eᵀx_i + C_prev · mean(Eᵀx_j, i-w ≤ j < i) + C_next · mean(Eᵀx_j, i < j ≤ i+w) + b)
//! ```
//!
//! where `x_i` is a hashed bag-of-tokens vector. Missing neighbours (document
//! edges, `w = 0`) contribute a zero mean.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::losses::{self, CsslReduction, LossReport};
use crate::pairs::PairSet;
use crate::rng::{mix, stable_hash, Rng};

/// Sparse feature vector of fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    pub dim: usize,
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseVec {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i] += v;
        }
        out
    }

    pub fn from_dense(v: &[f64]) -> Self {
        let (idx, val) = v
            .iter()
            .enumerate()
            .filter(|(_, x)| **x != 0.0)
            .map(|(i, x)| (i, *x))
            .unzip();
        SparseVec {
            dim: v.len(),
            idx,
            val,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }
}

pub const MIN_FEATURE_DIM: usize = 8;

/// Hashed token counts, L2-normalized. A sentence with no usable token maps
/// to the constant vector `1/√F`. The hash is finalized before the modulus
/// because raw FNV low bits collide on similar strings.
pub fn featurize(sentence: &Sentence, feature_dim: usize) -> SparseVec {
    let mut counts = std::collections::BTreeMap::<usize, f64>::new();
    for tok in sentence.tokens.iter().map(|t| t.trim()).filter(|t| !t.is_empty()) {
        *counts.entry((mix(stable_hash(tok)) % feature_dim as u64) as usize).or_default() += 1.0;
    }
    if counts.is_empty() {
        let c = 1.0 / (feature_dim as f64).sqrt();
        return SparseVec {
            dim: feature_dim,
            idx: (0..feature_dim).collect(),
            val: vec![c; feature_dim],
        };
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    let (idx, val) = counts.into_iter().map(|(i, c)| (i, c / norm)).unzip();
    SparseVec {
        dim: feature_dim,
        idx,
        val,
    }
}

pub fn featurize_all(sentences: &[Sentence], feature_dim: usize) -> Vec<SparseVec> {
    sentences.iter().map(|s| featurize(s, feature_dim)).collect()
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn random(rows: usize, cols: usize, std: f64, rng: &mut Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("finite std");
        Matrix {
            rows,
            cols,
            data: (0..rows * cols).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out += self · x`
    fn mul_acc(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o += dot(self.row(r), x);
        }
    }

    /// `out += selfᵀ · y`
    fn tmul_acc(&self, y: &[f64], out: &mut [f64]) {
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                axpy(yr, self.row(r), out);
            }
        }
    }

    /// `self += a ⊗ b`
    fn outer_acc(&mut self, a: &[f64], b: &[f64]) {
        for (r, &ar) in a.iter().enumerate() {
            if ar != 0.0 {
                axpy(ar, b, self.row_mut(r));
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub feature_dim: usize,
    pub rep_dim: usize,
    pub context_window: usize,
}

/// All trainable weights. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: Dims,
    /// F × D feature embedding.
    pub embed: Matrix,
    /// D × D mixing of the preceding-context mean.
    pub ctx_prev: Matrix,
    /// D × D mixing of the following-context mean.
    pub ctx_next: Matrix,
    pub bias: Vec<f64>,
    /// 2 × D boundary classifier; row 1 is the boundary class.
    pub seg_w: Matrix,
    pub seg_b: Vec<f64>,
    /// 3 × 2D classifier over `[h_i; h_{i+1}]`.
    pub tssp_w: Matrix,
    pub tssp_b: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        let (f, d) = (dims.feature_dim, dims.rep_dim);
        ModelParams {
            dims,
            embed: Matrix::zeros(f, d),
            ctx_prev: Matrix::zeros(d, d),
            ctx_next: Matrix::zeros(d, d),
            bias: vec![0.0; d],
            seg_w: Matrix::zeros(2, d),
            seg_b: vec![0.0; 2],
            tssp_w: Matrix::zeros(3, 2 * d),
            tssp_b: vec![0.0; 3],
        }
    }

    /// Gaussian initialization; biases start at zero.
    pub fn init(dims: Dims, rng: &mut Rng) -> Self {
        let (f, d) = (dims.feature_dim, dims.rep_dim);
        let ctx_std = 0.5 / (d as f64).sqrt();
        let head_std = 0.1 / (d as f64).sqrt();
        ModelParams {
            dims,
            embed: Matrix::random(f, d, 1.0, rng),
            ctx_prev: Matrix::random(d, d, ctx_std, rng),
            ctx_next: Matrix::random(d, d, ctx_std, rng),
            bias: vec![0.0; d],
            seg_w: Matrix::random(2, d, head_std, rng),
            seg_b: vec![0.0; 2],
            tssp_w: Matrix::random(3, 2 * d, head_std, rng),
            tssp_b: vec![0.0; 3],
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.dims)
    }

    pub fn tensors(&self) -> [&[f64]; 8] {
        [
            &self.embed.data,
            &self.ctx_prev.data,
            &self.ctx_next.data,
            &self.bias,
            &self.seg_w.data,
            &self.seg_b,
            &self.tssp_w.data,
            &self.tssp_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 8] {
        [
            &mut self.embed.data,
            &mut self.ctx_prev.data,
            &mut self.ctx_next.data,
            &mut self.bias,
            &mut self.seg_w.data,
            &mut self.seg_b,
            &mut self.tssp_w.data,
            &mut self.tssp_b,
        ]
    }

    pub const TENSOR_NAMES: [&'static str; 8] = [
        "embed", "ctx_prev", "ctx_next", "bias", "seg_w", "seg_b", "tssp_w", "tssp_b",
    ];

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn from_flat(dims: Dims, flat: &[f64]) -> Self {
        let mut p = ModelParams::zeros(dims);
        let mut off = 0;
        for t in p.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        p
    }

    /// `self += scale · other`
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(scale, b, a);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    fn check_features(&self, features: &[SparseVec]) -> Result<()> {
        if let Some(x) = features.iter().find(|x| x.dim != self.dims.feature_dim) {
            return Err(Error::Dimension(format!(
                "feature vector of dimension {} for a model with feature_dim {}",
                x.dim, self.dims.feature_dim
            )));
        }
        Ok(())
    }

    fn check_reps(&self, reps: &[Vec<f64>]) -> Result<()> {
        if let Some(h) = reps.iter().find(|h| h.len() != self.dims.rep_dim) {
            return Err(Error::Dimension(format!(
                "representation of dimension {} for a model with rep_dim {}",
                h.len(),
                self.dims.rep_dim
            )));
        }
        Ok(())
    }
}

/// A sentence representation `h_i`.
pub type SentenceRep = Vec<f64>;

/// Intermediate values of one encoder pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    prev_mean: Vec<Vec<f64>>,
    next_mean: Vec<Vec<f64>>,
    pub reps: Vec<SentenceRep>,
}

fn neighbour_ranges(i: usize, n: usize, w: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    (i.saturating_sub(w)..i, (i + 1).min(n)..(i + 1 + w).min(n))
}

fn mean_of(rows: &[Vec<f64>], range: std::ops::Range<usize>, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    if range.is_empty() {
        return out;
    }
    let inv = 1.0 / range.len() as f64;
    for r in &rows[range] {
        axpy(inv, r, &mut out);
    }
    out
}

pub fn encode_with_cache(features: &[SparseVec], params: &ModelParams) -> Result<EncoderCache> {
    params.check_features(features)?;
    let d = params.dims.rep_dim;
    let w = params.dims.context_window;
    let n = features.len();
    let z: Vec<Vec<f64>> = features
        .iter()
        .map(|x| {
            let mut zi = vec![0.0; d];
            for (f, v) in x.iter() {
                axpy(v, params.embed.row(f), &mut zi);
            }
            zi
        })
        .collect();
    let mut prev_mean = Vec::with_capacity(n);
    let mut next_mean = Vec::with_capacity(n);
    let mut reps = Vec::with_capacity(n);
    for i in 0..n {
        let (before, after) = neighbour_ranges(i, n, w);
        let mp = mean_of(&z, before, d);
        let mn = mean_of(&z, after, d);
        let mut a = z[i].clone();
        axpy(1.0, &params.bias, &mut a);
        params.ctx_prev.mul_acc(&mp, &mut a);
        params.ctx_next.mul_acc(&mn, &mut a);
        reps.push(a.into_iter().map(f64::tanh).collect());
        prev_mean.push(mp);
        next_mean.push(mn);
    }
    Ok(EncoderCache {
        prev_mean,
        next_mean,
        reps,
    })
}

/// Context-dependent representation of every sentence.
pub fn encode(features: &[SparseVec], params: &ModelParams) -> Result<Vec<SentenceRep>> {
    Ok(encode_with_cache(features, params)?.reps)
}

/// Accumulates parameter gradients given `∂L/∂h` for every sentence.
pub fn encoder_backward(
    features: &[SparseVec],
    params: &ModelParams,
    cache: &EncoderCache,
    d_reps: &[Vec<f64>],
    grads: &mut ModelParams,
) {
    let d = params.dims.rep_dim;
    let w = params.dims.context_window;
    let n = features.len();
    let mut dz = vec![vec![0.0; d]; n];
    for i in 0..n {
        let da: Vec<f64> = d_reps[i]
            .iter()
            .zip(&cache.reps[i])
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        axpy(1.0, &da, &mut grads.bias);
        grads.ctx_prev.outer_acc(&da, &cache.prev_mean[i]);
        grads.ctx_next.outer_acc(&da, &cache.next_mean[i]);
        axpy(1.0, &da, &mut dz[i]);
        let (before, after) = neighbour_ranges(i, n, w);
        for (range, ctx) in [(before, &params.ctx_prev), (after, &params.ctx_next)] {
            if range.is_empty() {
                continue;
            }
            let mut dm = vec![0.0; d];
            ctx.tmul_acc(&da, &mut dm);
            let inv = 1.0 / range.len() as f64;
            for j in range {
                axpy(inv, &dm, &mut dz[j]);
            }
        }
    }
    for (x, g) in features.iter().zip(&dz) {
        for (f, v) in x.iter() {
            axpy(v, g, grads.embed.row_mut(f));
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax3(l: [f64; 3]) -> [f64; 3] {
    let m = l[0].max(l[1]).max(l[2]);
    let e = l.map(|x| (x - m).exp());
    let s = e[0] + e[1] + e[2];
    e.map(|x| x / s)
}

/// Boundary-class logit minus non-boundary logit for one representation.
fn seg_margin(h: &[f64], params: &ModelParams) -> f64 {
    let l0 = dot(params.seg_w.row(0), h) + params.seg_b[0];
    let l1 = dot(params.seg_w.row(1), h) + params.seg_b[1];
    l1 - l0
}

/// Boundary probability after each sentence but the last (two-class softmax).
pub fn seg_probs(reps: &[SentenceRep], params: &ModelParams) -> Result<Vec<f64>> {
    params.check_reps(reps)?;
    let n = reps.len().saturating_sub(1);
    Ok(reps[..n].iter().map(|h| sigmoid(seg_margin(h, params))).collect())
}

fn tssp_logits(a: &[f64], b: &[f64], params: &ModelParams) -> [f64; 3] {
    let d = params.dims.rep_dim;
    let mut l = [0.0; 3];
    for (k, lk) in l.iter_mut().enumerate() {
        let row = params.tssp_w.row(k);
        *lk = dot(&row[..d], a) + dot(&row[d..], b) + params.tssp_b[k];
    }
    l
}

/// Relation distribution for every adjacent pair `[h_i; h_{i+1}]`.
pub fn tssp_probs(reps: &[SentenceRep], params: &ModelParams) -> Result<Vec<[f64; 3]>> {
    params.check_reps(reps)?;
    Ok(reps
        .windows(2)
        .map(|w| softmax3(tssp_logits(&w[0], &w[1], params)))
        .collect())
}

fn seg_backward(
    reps: &[SentenceRep],
    probs: &[f64],
    d_probs: &[f64],
    params: &ModelParams,
    grads: &mut ModelParams,
    d_reps: &mut [Vec<f64>],
) {
    for (i, (&p, &g)) in probs.iter().zip(d_probs).enumerate() {
        let dm = g * p * (1.0 - p);
        if dm == 0.0 {
            continue;
        }
        let h = &reps[i];
        axpy(dm, h, grads.seg_w.row_mut(1));
        axpy(-dm, h, grads.seg_w.row_mut(0));
        grads.seg_b[1] += dm;
        grads.seg_b[0] -= dm;
        axpy(dm, params.seg_w.row(1), &mut d_reps[i]);
        axpy(-dm, params.seg_w.row(0), &mut d_reps[i]);
    }
}

fn tssp_backward(
    reps: &[SentenceRep],
    rows: &[[f64; 3]],
    d_rows: &[[f64; 3]],
    params: &ModelParams,
    grads: &mut ModelParams,
    d_reps: &mut [Vec<f64>],
) {
    let d = params.dims.rep_dim;
    for (i, (q, g)) in rows.iter().zip(d_rows).enumerate() {
        let gq: f64 = (0..3).map(|j| g[j] * q[j]).sum();
        for k in 0..3 {
            let dl = q[k] * (g[k] - gq);
            if dl == 0.0 {
                continue;
            }
            let row = grads.tssp_w.row_mut(k);
            axpy(dl, &reps[i], &mut row[..d]);
            axpy(dl, &reps[i + 1], &mut row[d..]);
            grads.tssp_b[k] += dl;
            let prow = params.tssp_w.row(k);
            axpy(dl, &prow[..d], &mut d_reps[i]);
            axpy(dl, &prow[d..], &mut d_reps[i + 1]);
        }
    }
}

/// Inputs for one training document.
#[derive(Debug, Clone)]
pub struct Example {
    pub doc_id: String,
    pub features: Vec<SparseVec>,
    pub boundary_labels: Vec<u8>,
    /// Contrastive pair sets over the same sentences; `None` skips the term.
    pub pairs: Option<Vec<PairSet>>,
    /// Features and relation labels of the augmented document; `None` skips
    /// the term.
    pub augmented: Option<(Vec<SparseVec>, Vec<u8>)>,
}

/// Loss weights and contrastive settings for [`example_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub tau: f64,
    pub cssl_reduction: CsslReduction,
}

/// Weighted loss of one example and its gradient with respect to every
/// parameter.
pub fn example_loss(
    params: &ModelParams,
    ex: &Example,
    weights: &LossWeights,
) -> Result<(LossReport, ModelParams)> {
    let mut grads = params.zeros_like();
    let d = params.dims.rep_dim;

    let cache = encode_with_cache(&ex.features, params)?;
    let mut d_reps = vec![vec![0.0; d]; ex.features.len()];
    let probs = seg_probs(&cache.reps, params)?;
    let (l_ts, d_probs) = losses::loss_ts(&probs, &ex.boundary_labels)?;
    seg_backward(&cache.reps, &probs, &d_probs, params, &mut grads, &mut d_reps);

    let mut l_cssl = 0.0;
    if let Some(pairs) = &ex.pairs {
        let (l, g) = losses::loss_cssl(&cache.reps, pairs, weights.tau, weights.cssl_reduction)?;
        l_cssl = l;
        for (dr, gi) in d_reps.iter_mut().zip(&g) {
            axpy(weights.alpha2, gi, dr);
        }
    }
    encoder_backward(&ex.features, params, &cache, &d_reps, &mut grads);

    let mut l_tssp = 0.0;
    if let Some((features, labels)) = &ex.augmented {
        let cache = encode_with_cache(features, params)?;
        let rows = tssp_probs(&cache.reps, params)?;
        let (l, d_rows) = losses::loss_tssp(&rows, labels)?;
        l_tssp = l;
        let d_rows: Vec<[f64; 3]> = d_rows
            .iter()
            .map(|r| r.map(|x| x * weights.alpha1))
            .collect();
        let mut d_aug = vec![vec![0.0; d]; features.len()];
        tssp_backward(&cache.reps, &rows, &d_rows, params, &mut grads, &mut d_aug);
        encoder_backward(features, params, &cache, &d_aug, &mut grads);
    }

    let report = LossReport::new(l_ts, l_tssp, l_cssl, weights.alpha1, weights.alpha2);
    if !report.l_total.is_finite() {
        return Err(Error::NonFinite {
            doc_id: ex.doc_id.clone(),
            detail: format!("{report:?}"),
        });
    }
    Ok((report, grads))
}

/// Random parameters with every entry drawn uniformly from `[-scale, scale]`;
/// used by gradient checks.
pub fn random_params(dims: Dims, scale: f64, rng: &mut Rng) -> ModelParams {
    let mut p = ModelParams::zeros(dims);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|x| *x = rng.random_range(-scale..=scale));
    }
    p
}
