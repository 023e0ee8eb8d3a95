//! Turning model outputs into boundary decisions.

use serde::{Deserialize, Serialize};

use crate::corpus::{sliding_windows, BoundaryLabels, Document};
use crate::error::{Error, Result};
use crate::losses::cosine;
use crate::metrics::{aggregate, evaluate_document, Aggregation, DocMetrics, MetricReport};
use crate::model::{encode, featurize_all, seg_probs, ModelParams, SentenceRep};

/// Which score decides a boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Boundary probability `≥ threshold`.
    #[default]
    Prob,
    /// Cosine of adjacent representations `< threshold`.
    Sim,
    /// Mean of the probability and `sigmoid(-cosine)`, `≥ threshold`.
    Ensemble,
}

impl Mode {
    pub fn threshold_range(self) -> (f64, f64) {
        match self {
            Mode::Sim => (-1.0, 1.0),
            Mode::Prob | Mode::Ensemble => (0.0, 1.0),
        }
    }

    pub fn check_threshold(self, t: f64) -> Result<()> {
        let (lo, hi) = self.threshold_range();
        if !(lo..=hi).contains(&t) {
            let name = match self {
                Mode::Prob => "prob",
                Mode::Sim => "sim",
                Mode::Ensemble => "ensemble",
            };
            return Err(Error::InvalidInput(format!(
                "threshold must be in [{lo},{hi}] for {name} mode"
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Boundary decisions for one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sims: Option<Vec<f64>>,
    pub labels: BoundaryLabels,
    pub threshold: f64,
}

fn apply_mask(mut labels: BoundaryLabels, mask: Option<&[bool]>) -> BoundaryLabels {
    if let Some(m) = mask {
        for (l, &ok) in labels.iter_mut().zip(m) {
            if !ok {
                *l = 0;
            }
        }
    }
    labels
}

pub fn predict_by_prob(probs: &[f64], threshold: f64, mask: Option<&[bool]>) -> BoundaryLabels {
    apply_mask(
        probs.iter().map(|&p| u8::from(p >= threshold)).collect(),
        mask,
    )
}

/// Unscaled cosine of every adjacent representation pair.
pub fn adjacent_cosines(reps: &[SentenceRep]) -> Result<Vec<f64>> {
    reps.windows(2).map(|w| cosine(&w[0], &w[1])).collect()
}

/// Boundary wherever adjacent representations have cosine below `threshold`.
pub fn predict_by_sim(
    reps: &[SentenceRep],
    threshold: f64,
    mask: Option<&[bool]>,
) -> Result<BoundaryLabels> {
    Ok(labels_from_sims(&adjacent_cosines(reps)?, threshold, mask))
}

fn labels_from_sims(sims: &[f64], threshold: f64, mask: Option<&[bool]>) -> BoundaryLabels {
    apply_mask(sims.iter().map(|&s| u8::from(s < threshold)).collect(), mask)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `½ · (prob + sigmoid(−sim))`.
pub fn ensemble_score(prob: f64, sim: f64) -> f64 {
    0.5 * (prob + sigmoid(-sim))
}

/// The 21 thresholds 0.00, 0.05, ..., 1.00.
pub fn threshold_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Model scores for one document, ready for thresholding.
#[derive(Debug, Clone)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub probs: Vec<f64>,
    pub sims: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

impl ScoredDoc {
    pub fn decide(&self, mode: Mode, threshold: f64) -> BoundaryLabels {
        let mask = self.mask.as_deref();
        match mode {
            Mode::Prob => predict_by_prob(&self.probs, threshold, mask),
            Mode::Sim => labels_from_sims(&self.sims, threshold, mask),
            Mode::Ensemble => {
                let scores: Vec<f64> = self
                    .probs
                    .iter()
                    .zip(&self.sims)
                    .map(|(&p, &s)| ensemble_score(p, s))
                    .collect();
                predict_by_prob(&scores, threshold, mask)
            }
        }
    }

    pub fn prediction(&self, mode: Mode, threshold: f64) -> Prediction {
        Prediction {
            doc_id: self.doc_id.clone(),
            probs: self.probs.clone(),
            sims: (mode != Mode::Prob).then(|| self.sims.clone()),
            labels: self.decide(mode, threshold),
            threshold,
        }
    }
}

/// Picks the grid threshold with the highest macro F1 over `dev`; ties go to
/// the smaller threshold. Returns `(threshold, f1)`.
pub fn sweep_threshold(dev: &[(ScoredDoc, BoundaryLabels)], mode: Mode) -> Result<(f64, f64)> {
    if dev.is_empty() {
        return Err(Error::InvalidInput("threshold sweep needs a non-empty dev set".into()));
    }
    let mut best = (f64::NAN, f64::NEG_INFINITY);
    for t in threshold_grid() {
        let mut f1_sum = 0.0;
        for (scored, reference) in dev {
            let hyp = scored.decide(mode, t);
            let m = evaluate_document(&scored.doc_id, reference, &hyp, scored.mask.as_deref())?;
            f1_sum += m.f1;
        }
        let f1 = f1_sum / dev.len() as f64;
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    Ok(best)
}

/// Joins per-window predictions of `doc`, in window order, into one
/// prediction over the whole document. Windows from
/// [`sliding_windows`] share one sentence with their predecessor but no
/// boundary position, so every position comes from exactly one window.
pub fn merge_window_predictions(windows: &[Prediction], doc: &Document) -> Result<Prediction> {
    let mismatch = |msg: String| Error::InvalidInput(format!("window/doc mismatch: {msg}"));
    let first = windows
        .first()
        .ok_or_else(|| mismatch("no windows".into()))?;
    if let Some(w) = windows.iter().find(|w| w.doc_id != doc.doc_id()) {
        return Err(mismatch(format!("window of {} for document {}", w.doc_id, doc.doc_id())));
    }
    let total: usize = windows.iter().map(|w| w.labels.len()).sum();
    if total != doc.len() - 1 {
        return Err(mismatch(format!(
            "{total} window positions for a document with {} sentences",
            doc.len()
        )));
    }
    let has_sims = windows.iter().all(|w| w.sims.is_some());
    let mut merged = Prediction {
        doc_id: doc.doc_id().to_string(),
        probs: Vec::with_capacity(total),
        sims: has_sims.then(|| Vec::with_capacity(total)),
        labels: Vec::with_capacity(total),
        threshold: first.threshold,
    };
    for w in windows {
        if w.probs.len() != w.labels.len() {
            return Err(mismatch("probability and label counts differ".into()));
        }
        merged.probs.extend_from_slice(&w.probs);
        merged.labels.extend_from_slice(&w.labels);
        if let (Some(all), Some(s)) = (merged.sims.as_mut(), w.sims.as_ref()) {
            all.extend_from_slice(s);
        }
    }
    Ok(merged)
}

/// Runs the model over `doc` window by window and merges the results.
pub fn predict_document(
    params: &ModelParams,
    doc: &Document,
    mode: Mode,
    threshold: f64,
    max_sentences: usize,
) -> Result<Prediction> {
    let windows = sliding_windows(doc, max_sentences)?
        .iter()
        .map(|w| Ok(score_document(params, w)?.prediction(mode, threshold)))
        .collect::<Result<Vec<_>>>()?;
    let mut merged = merge_window_predictions(&windows, doc)?;
    if mode == Mode::Prob {
        merged.sims = None;
    }
    Ok(merged)
}

/// Probabilities and adjacent cosines of `doc` in a single window.
pub fn score_document(params: &ModelParams, doc: &Document) -> Result<ScoredDoc> {
    let features = featurize_all(doc.sentences(), params.dims.feature_dim);
    let reps = encode(&features, params)?;
    Ok(ScoredDoc {
        doc_id: doc.doc_id().to_string(),
        probs: seg_probs(&reps, params)?,
        sims: adjacent_cosines(&reps)?,
        mask: doc.candidate_mask(),
    })
}

/// Windowed scoring of a whole document.
pub fn score_windowed(params: &ModelParams, doc: &Document, max_sentences: usize) -> Result<ScoredDoc> {
    let p = predict_document(params, doc, Mode::Sim, 0.0, max_sentences)?;
    Ok(ScoredDoc {
        doc_id: p.doc_id,
        probs: p.probs,
        sims: p.sims.unwrap_or_default(),
        mask: doc.candidate_mask(),
    })
}

/// Scores predictions against reference documents, matched by position.
pub fn evaluate_predictions(
    reference: &[Document],
    predictions: &[Prediction],
    how: Aggregation,
) -> Result<(MetricReport, Vec<DocMetrics>)> {
    if reference.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            what: "reference documents vs predictions",
            left: reference.len(),
            right: predictions.len(),
        });
    }
    let per_doc = reference
        .iter()
        .zip(predictions)
        .map(|(doc, pred)| {
            if doc.doc_id() != pred.doc_id {
                return Err(Error::InvalidInput(format!(
                    "prediction for {} where {} was expected",
                    pred.doc_id,
                    doc.doc_id()
                )));
            }
            let mask = doc.candidate_mask();
            evaluate_document(doc.doc_id(), &doc.boundary_labels(), &pred.labels, mask.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((aggregate(&per_doc, how), per_doc))
}

/// Segments `docs` with the model and scores the result (macro average).
pub fn evaluate_model(
    params: &ModelParams,
    docs: &[Document],
    mode: Mode,
    threshold: f64,
    max_sentences: usize,
) -> Result<MetricReport> {
    let preds = docs
        .iter()
        .map(|d| predict_document(params, d, mode, threshold, max_sentences))
        .collect::<Result<Vec<_>>>()?;
    Ok(evaluate_predictions(docs, &preds, Aggregation::Macro)?.0)
}
