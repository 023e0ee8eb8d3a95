//! Boundary-level segmentation metrics: positive-class precision/recall/F1,
//! Pk and WindowDiff.
//!
//! Labels follow [`BoundaryLabels`]: entry `i` is 1 when a segment ends after
//! sentence `i`, so a document of `n` sentences has `n - 1` labels.

use serde::{Deserialize, Serialize};

use crate::corpus::BoundaryLabels;
use crate::error::{Error, Result};

fn check_lengths(reference: &[u8], hyp: &[u8]) -> Result<()> {
    if reference.len() != hyp.len() {
        return Err(Error::LengthMismatch {
            what: "reference vs hypothesis labels",
            left: reference.len(),
            right: hyp.len(),
        });
    }
    Ok(())
}

/// True/false positive and false negative boundary counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    /// Counts over positions where `mask` (when given) is true.
    pub fn count(reference: &[u8], hyp: &[u8], mask: Option<&[bool]>) -> Result<Self> {
        check_lengths(reference, hyp)?;
        if let Some(m) = mask {
            if m.len() != reference.len() {
                return Err(Error::LengthMismatch {
                    what: "candidate mask vs labels",
                    left: m.len(),
                    right: reference.len(),
                });
            }
        }
        let mut c = Confusion::default();
        for i in 0..reference.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            match (reference[i] == 1, hyp[i] == 1) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(c)
    }

    /// (precision, recall, f1). When neither side has a boundary the result
    /// is (1, 1, 1); any other zero denominator yields 0 for that quantity.
    pub fn prf(&self) -> (f64, f64, f64) {
        let predicted = self.tp + self.fp;
        let actual = self.tp + self.fn_;
        if predicted == 0 && actual == 0 {
            return (1.0, 1.0, 1.0);
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let p = ratio(self.tp, predicted);
        let r = ratio(self.tp, actual);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1)
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;

    fn add(self, other: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Precision, recall and F1 of the boundary class.
pub fn prf(reference: &[u8], hyp: &[u8]) -> Result<(f64, f64, f64)> {
    Ok(Confusion::count(reference, hyp, None)?.prf())
}

/// Half the mean reference segment length, rounded half-up, at least 1.
pub fn default_window(reference: &[u8]) -> usize {
    let n = reference.len() + 1;
    let segments = 1 + reference.iter().filter(|&&b| b == 1).count();
    // round(n / 2s) with halves rounded up
    ((n + segments) / (2 * segments)).max(1)
}

fn check_window(n_labels: usize, k: usize) -> Result<()> {
    if k < 1 || k > n_labels {
        return Err(Error::InvalidInput(format!(
            "window k={k} out of range [1, {n_labels}]"
        )));
    }
    Ok(())
}

/// Running boundary counts: `prefix[i]` = number of boundaries in `labels[..i]`.
fn prefix_counts(labels: &[u8]) -> Vec<usize> {
    let mut out = Vec::with_capacity(labels.len() + 1);
    out.push(0);
    let mut acc = 0;
    for &b in labels {
        acc += usize::from(b == 1);
        out.push(acc);
    }
    out
}

/// Disagreeing probes and total probes for Pk.
pub fn pk_counts(reference: &[u8], hyp: &[u8], k: usize) -> Result<(usize, usize)> {
    check_lengths(reference, hyp)?;
    check_window(reference.len(), k)?;
    let n = reference.len() + 1;
    let (r, h) = (prefix_counts(reference), prefix_counts(hyp));
    let probes = n - k;
    let miss = (0..probes)
        .filter(|&i| (r[i + k] == r[i]) != (h[i + k] == h[i]))
        .count();
    Ok((miss, probes))
}

/// Disagreeing probes and total probes for WindowDiff.
pub fn window_diff_counts(reference: &[u8], hyp: &[u8], k: usize) -> Result<(usize, usize)> {
    check_lengths(reference, hyp)?;
    check_window(reference.len(), k)?;
    let n = reference.len() + 1;
    let (r, h) = (prefix_counts(reference), prefix_counts(hyp));
    let probes = n - k;
    let miss = (0..probes)
        .filter(|&i| r[i + k] - r[i] != h[i + k] - h[i])
        .count();
    Ok((miss, probes))
}

/// Fraction of sentence pairs `k` apart on whose same-segment status the
/// reference and the hypothesis disagree.
pub fn pk(reference: &[u8], hyp: &[u8], k: usize) -> Result<f64> {
    let (miss, probes) = pk_counts(reference, hyp, k)?;
    Ok(miss as f64 / probes as f64)
}

/// Fraction of windows of `k` boundary positions whose boundary counts differ
/// between reference and hypothesis.
pub fn window_diff(reference: &[u8], hyp: &[u8], k: usize) -> Result<f64> {
    let (miss, probes) = window_diff_counts(reference, hyp, k)?;
    Ok(miss as f64 / probes as f64)
}

/// Scores of a single document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocMetrics {
    pub doc_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pk: f64,
    pub wd: f64,
    pub window_k: usize,
    #[serde(skip)]
    pub confusion: Confusion,
    #[serde(skip)]
    pub pk_counts: (usize, usize),
    #[serde(skip)]
    pub wd_counts: (usize, usize),
}

/// Scores one document. `mask` restricts the F1 counts to candidate
/// positions; Pk and WindowDiff always use every position. Single-sentence
/// documents have no probes and score Pk = WindowDiff = 0.
pub fn evaluate_document(
    doc_id: &str,
    reference: &BoundaryLabels,
    hyp: &BoundaryLabels,
    mask: Option<&[bool]>,
) -> Result<DocMetrics> {
    let confusion = Confusion::count(reference, hyp, mask)?;
    let (precision, recall, f1) = confusion.prf();
    let k = default_window(reference);
    let (pk_c, wd_c) = if reference.is_empty() {
        ((0, 0), (0, 0))
    } else {
        (
            pk_counts(reference, hyp, k)?,
            window_diff_counts(reference, hyp, k)?,
        )
    };
    let frac = |(m, p): (usize, usize)| if p == 0 { 0.0 } else { m as f64 / p as f64 };
    Ok(DocMetrics {
        doc_id: doc_id.to_string(),
        precision,
        recall,
        f1,
        pk: frac(pk_c),
        wd: frac(wd_c),
        window_k: k,
        confusion,
        pk_counts: pk_c,
        wd_counts: wd_c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Per-document scores averaged with equal document weight.
    #[default]
    Macro,
    /// Counts pooled over the corpus before forming ratios.
    Micro,
}

/// Corpus-level scores. `window_k` is the mean per-document window, rounded
/// half-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub pk: f64,
    pub wd: f64,
    pub window_k: usize,
    pub n_docs: usize,
}

pub fn aggregate(per_doc: &[DocMetrics], how: Aggregation) -> MetricReport {
    let n = per_doc.len();
    if n == 0 {
        return MetricReport {
            f1: 0.0,
            precision: 0.0,
            recall: 0.0,
            pk: 0.0,
            wd: 0.0,
            window_k: 1,
            n_docs: 0,
        };
    }
    let k_sum: usize = per_doc.iter().map(|d| d.window_k).sum();
    let window_k = ((2 * k_sum + n) / (2 * n)).max(1);
    match how {
        Aggregation::Macro => {
            let mean = |f: fn(&DocMetrics) -> f64| per_doc.iter().map(f).sum::<f64>() / n as f64;
            MetricReport {
                f1: mean(|d| d.f1),
                precision: mean(|d| d.precision),
                recall: mean(|d| d.recall),
                pk: mean(|d| d.pk),
                wd: mean(|d| d.wd),
                window_k,
                n_docs: n,
            }
        }
        Aggregation::Micro => {
            let conf = per_doc
                .iter()
                .fold(Confusion::default(), |acc, d| acc + d.confusion);
            let (precision, recall, f1) = conf.prf();
            let pooled = |f: fn(&DocMetrics) -> (usize, usize)| {
                let (m, p) = per_doc
                    .iter()
                    .map(f)
                    .fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
                if p == 0 {
                    0.0
                } else {
                    m as f64 / p as f64
                }
            };
            MetricReport {
                f1,
                precision,
                recall,
                pk: pooled(|d| d.pk_counts),
                wd: pooled(|d| d.wd_counts),
                window_k,
                n_docs: n,
            }
        }
    }
}
