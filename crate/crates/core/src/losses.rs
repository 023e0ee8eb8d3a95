//! Objective functions with analytic gradients, and a central-difference
//! checker for them.
//!
//! All reductions are sums over positions. Probabilities are clamped to
//! `[PROB_FLOOR, 1 - PROB_FLOOR]` before taking logarithms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairs::PairSet;

pub const PROB_FLOOR: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Binary cross-entropy over boundary positions. Returns the loss and its
/// gradient with respect to each probability.
pub fn loss_ts(probs: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if probs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "boundary probabilities vs labels",
            left: probs.len(),
            right: labels.len(),
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let p = clamp_prob(p);
        if y == 1 {
            loss -= p.ln();
            grad.push(-1.0 / p);
        } else {
            loss -= (1.0 - p).ln();
            grad.push(1.0 / (1.0 - p));
        }
    }
    Ok((loss, grad))
}

/// Three-class cross-entropy over adjacent pairs. The gradient is taken with
/// respect to the probability rows and is non-zero only at the true class.
pub fn loss_tssp(rows: &[[f64; 3]], labels: &[u8]) -> Result<(f64, Vec<[f64; 3]>)> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "pair probability rows vs labels",
            left: rows.len(),
            right: labels.len(),
        });
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(rows.len());
    for (i, (row, &y)) in rows.iter().zip(labels).enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p.is_nan() || p < 0.0) {
            return Err(Error::InvalidInput(format!(
                "row {i} is not a probability distribution: {row:?}"
            )));
        }
        if y > 2 {
            return Err(Error::InvalidInput(format!("pair label {y} out of range")));
        }
        let (l, g) = tssp_term(row, y);
        loss += l;
        grad.push(g);
    }
    Ok((loss, grad))
}

fn tssp_term(row: &[f64; 3], y: u8) -> (f64, [f64; 3]) {
    let y = usize::from(y);
    let p = clamp_prob(row[y]);
    let mut g = [0.0; 3];
    g[y] = -1.0 / p;
    (-p.ln(), g)
}

/// [`loss_tssp`] without the simplex and label checks, for probing the loss
/// off the simplex (finite differences).
pub fn loss_tssp_unchecked(rows: &[[f64; 3]], labels: &[u8]) -> (f64, Vec<[f64; 3]>) {
    let mut loss = 0.0;
    let grad = rows
        .iter()
        .zip(labels)
        .map(|(row, &y)| {
            let (l, g) = tssp_term(row, y);
            loss += l;
            g
        })
        .collect();
    (loss, grad)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(x1: &[f64], x2: &[f64]) -> Result<f64> {
    if x1.len() != x2.len() {
        return Err(Error::Dimension(format!(
            "cosine of vectors of length {} and {}",
            x1.len(),
            x2.len()
        )));
    }
    let (n1, n2) = (norm(x1), norm(x2));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidInput("cosine similarity of a zero vector".into()));
    }
    Ok(dot(x1, x2) / (n1 * n2))
}

/// Cosine similarity divided by the temperature `tau`.
pub fn scaled_cosine(x1: &[f64], x2: &[f64], tau: f64) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidInput(format!("tau must be > 0, got {tau}")));
    }
    Ok(cosine(x1, x2)? / tau)
}

/// Accumulates `scale · ∂cos(a, b)/∂a` into `ga` and `scale · ∂cos(a, b)/∂b`
/// into `gb`.
fn cosine_backward(a: &[f64], b: &[f64], scale: f64, ga: &mut [f64], gb: &mut [f64]) {
    let (na, nb) = (norm(a), norm(b));
    let c = dot(a, b) / (na * nb);
    for k in 0..a.len() {
        ga[k] += scale * (b[k] / (na * nb) - c * a[k] / (na * na));
        gb[k] += scale * (a[k] / (na * nb) - c * b[k] / (nb * nb));
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// How per-anchor contrastive terms are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsslReduction {
    #[default]
    Sum,
    /// Divide the sum by the number of participating anchors.
    Mean,
}

/// Contrastive loss over anchors: for each anchor with at least one positive,
/// `-ln(Σ⁺ e^sim / (Σ⁺ e^sim + Σ⁻ e^sim))` with `sim` the scaled cosine.
/// Returns the loss and its gradient with respect to every representation.
pub fn loss_cssl(
    reps: &[Vec<f64>],
    pairsets: &[PairSet],
    tau: f64,
    reduction: CsslReduction,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::InvalidInput(format!("tau must be > 0, got {tau}")));
    }
    let n = reps.len();
    let dim = reps.first().map_or(0, Vec::len);
    let mut grad = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    let mut anchors = 0usize;
    for ps in pairsets.iter().filter(|p| !p.is_excluded()) {
        let out_of_range = std::iter::once(&ps.anchor)
            .chain(&ps.positives)
            .chain(&ps.negatives)
            .find(|&&j| j >= n);
        if let Some(j) = out_of_range {
            return Err(Error::InvalidInput(format!(
                "pair index {j} out of range for {n} representations"
            )));
        }
        let a = ps.anchor;
        let others: Vec<usize> = ps.positives.iter().chain(&ps.negatives).copied().collect();
        let sims = others
            .iter()
            .map(|&j| scaled_cosine(&reps[a], &reps[j], tau))
            .collect::<Result<Vec<_>>>()?;
        let n_pos = ps.positives.len();
        let lse_pos = log_sum_exp(&sims[..n_pos]);
        let lse_all = log_sum_exp(&sims);
        total += lse_all - lse_pos;
        anchors += 1;

        for (idx, (&j, &s)) in others.iter().zip(&sims).enumerate() {
            let mut d_sim = (s - lse_all).exp();
            if idx < n_pos {
                d_sim -= (s - lse_pos).exp();
            }
            if d_sim == 0.0 {
                continue;
            }
            let (ga, gj) = two_rows(&mut grad, a, j);
            cosine_backward(&reps[a], &reps[j], d_sim / tau, ga, gj);
        }
    }
    if reduction == CsslReduction::Mean && anchors > 0 {
        let scale = 1.0 / anchors as f64;
        total *= scale;
        grad.iter_mut().flatten().for_each(|g| *g *= scale);
    }
    Ok((total, grad))
}

fn two_rows(rows: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert_ne!(a, b, "anchor paired with itself");
    if a < b {
        let (lo, hi) = rows.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = rows.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

pub fn loss_total(l_ts: f64, l_tssp: f64, l_cssl: f64, alpha1: f64, alpha2: f64) -> f64 {
    l_ts + alpha1 * l_tssp + alpha2 * l_cssl
}

/// The three component losses and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_ts: f64,
    pub l_tssp: f64,
    pub l_cssl: f64,
    pub l_total: f64,
}

impl LossReport {
    pub fn new(l_ts: f64, l_tssp: f64, l_cssl: f64, alpha1: f64, alpha2: f64) -> Self {
        LossReport {
            l_ts,
            l_tssp,
            l_cssl,
            l_total: loss_total(l_ts, l_tssp, l_cssl, alpha1, alpha2),
        }
    }
}

/// Compares the analytic gradient returned by `f` at `x` with central
/// differences of its value. Returns the largest
/// `|analytic - numeric| / max(1, |numeric|)` over coordinates.
pub fn finite_diff_check<F>(f: F, x: &[f64], epsilon: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length must match input");
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + epsilon;
        let up = f(&probe).0;
        probe[i] = x[i] - epsilon;
        let down = f(&probe).0;
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * epsilon);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}
