//! Training loop and checkpoints.
//!
//! Each epoch visits the training windows in a seeded random order, in
//! batches of `batch_docs`. For every window the boundary loss and (when
//! `alpha2 > 0`) the contrastive loss are computed on the window itself, and
//! (when `alpha1 > 0`) the relation loss on a freshly augmented copy. The
//! batch gradient is the mean over its windows. A zero weight skips the
//! corresponding term entirely: no augmented documents or pair sets are built.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_with_rng, AugmentConfig, DonorPool};
use crate::corpus::{sliding_windows, Document};
use crate::error::{Error, Result};
use crate::infer::{evaluate_model, Mode, DEFAULT_THRESHOLD};
use crate::losses::{CsslReduction, LossReport};
use crate::metrics::MetricReport;
use crate::model::{
    example_loss, featurize_all, Dims, Example, LossWeights, ModelParams, MIN_FEATURE_DIM,
};
use crate::optim::AdamW;
use crate::pairs::{build_pairs, CsslConfig};
use crate::rng::{doc_rng, mix, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub epochs: usize,
    pub batch_docs: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub cssl: CsslConfig,
    pub cssl_reduction: CsslReduction,
    pub augment: AugmentConfig,
    pub max_sentences: usize,
    pub seed: u64,
    pub feature_dim: usize,
    pub rep_dim: usize,
    pub context_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps_opt: 1e-8,
            epochs: 20,
            batch_docs: 8,
            alpha1: 0.5,
            alpha2: 0.5,
            cssl: CsslConfig::default(),
            cssl_reduction: CsslReduction::Sum,
            augment: AugmentConfig::default(),
            max_sentences: 64,
            seed: 0,
            feature_dim: 1024,
            rep_dim: 32,
            context_window: 2,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            feature_dim: self.feature_dim,
            rep_dim: self.rep_dim,
            context_window: self.context_window,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            tau: self.cssl.tau,
            cssl_reduction: self.cssl_reduction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr", self.lr),
            ("eps_opt", self.eps_opt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("weight_decay", self.weight_decay),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be ≥ 0, got {v}")));
            }
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if self.epochs < 1 || self.batch_docs < 1 || self.rep_dim < 1 {
            return Err(Error::Config("epochs, batch_docs and rep_dim must be ≥ 1".into()));
        }
        if self.feature_dim < MIN_FEATURE_DIM {
            return Err(Error::Config(format!(
                "feature_dim must be ≥ {MIN_FEATURE_DIM}, got {}",
                self.feature_dim
            )));
        }
        if self.max_sentences < 2 {
            return Err(Error::Config("max_sentences must be ≥ 2".into()));
        }
        self.cssl.validate()?;
        self.augment.validate()
    }
}

/// Mean per-window losses of one epoch, plus dev scores when a dev set is
/// given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_ts: f64,
    pub l_tssp: f64,
    pub l_cssl: f64,
    pub l_total: f64,
    pub dev: Option<MetricReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Training documents with fewer than two sentences; they carry no
    /// boundary and are left out.
    pub skipped_short_docs: usize,
}

struct Unit<'a> {
    key: String,
    doc: Document,
    source: &'a Document,
    features: Vec<crate::model::SparseVec>,
    labels: Vec<u8>,
    pairs: Option<Vec<crate::pairs::PairSet>>,
}

pub fn train(train_docs: &[Document], dev_docs: &[Document], cfg: &TrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    if train_docs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "training needs at least 2 documents, got {}",
            train_docs.len()
        )));
    }
    let mut skipped_short_docs = 0;
    let mut units = Vec::new();
    for doc in train_docs {
        if doc.len() < 2 {
            skipped_short_docs += 1;
            continue;
        }
        for (w, window) in sliding_windows(doc, cfg.max_sentences)?.into_iter().enumerate() {
            let features = featurize_all(window.sentences(), cfg.feature_dim);
            let pairs = (cfg.alpha2 > 0.0).then(|| build_pairs(&window, &cfg.cssl));
            units.push(Unit {
                key: format!("{}#{w}", doc.doc_id()),
                labels: window.boundary_labels(),
                doc: window,
                source: doc,
                features,
                pairs,
            });
        }
    }
    if units.is_empty() {
        return Err(Error::InvalidInput("no training document has 2 or more sentences".into()));
    }
    let pool = (cfg.alpha1 > 0.0).then(|| DonorPool::new(train_docs));
    let weights = cfg.loss_weights();

    let mut params = ModelParams::init(cfg.dims(), &mut stream(cfg.seed, "init", 0));
    let mut opt = AdamW::new(&params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_opt, cfg.weight_decay);
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..units.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "order", epoch as u64));
        let aug_seed = mix(cfg.augment.seed ^ mix(cfg.seed ^ epoch as u64));
        let mut sums = LossReport::default();

        for batch in order.chunks(cfg.batch_docs) {
            let mut grads = params.zeros_like();
            for &u in batch {
                let unit = &units[u];
                let augmented = match &pool {
                    Some(pool) => {
                        let mut rng = doc_rng(aug_seed, &unit.key);
                        let mut aug = augment_with_rng(&unit.doc, pool, &cfg.augment, &mut rng)?;
                        aug.truncate(cfg.max_sentences);
                        Some((featurize_all(&aug.sentences, cfg.feature_dim), aug.tssp_labels))
                    }
                    None => None,
                };
                let ex = Example {
                    doc_id: unit.source.doc_id().to_string(),
                    features: unit.features.clone(),
                    boundary_labels: unit.labels.clone(),
                    pairs: unit.pairs.clone(),
                    augmented,
                };
                let (report, g) = example_loss(&params, &ex, &weights)?;
                grads.add_scaled(&g, 1.0);
                sums.l_ts += report.l_ts;
                sums.l_tssp += report.l_tssp;
                sums.l_cssl += report.l_cssl;
                sums.l_total += report.l_total;
            }
            grads.scale(1.0 / batch.len() as f64);
            opt.step(&mut params, &grads);
            if !params.is_finite() {
                return Err(Error::NonFinite {
                    doc_id: batch
                        .iter()
                        .map(|&u| units[u].source.doc_id())
                        .collect::<Vec<_>>()
                        .join(","),
                    detail: format!("parameters diverged in epoch {epoch}"),
                });
            }
        }

        let n = units.len() as f64;
        let dev = if dev_docs.is_empty() {
            None
        } else {
            Some(evaluate_model(&params, dev_docs, Mode::Prob, DEFAULT_THRESHOLD, cfg.max_sentences)?)
        };
        log.push(EpochLog {
            epoch,
            l_ts: sums.l_ts / n,
            l_tssp: sums.l_tssp / n,
            l_cssl: sums.l_cssl / n,
            l_total: sums.l_total / n,
            dev,
        });
    }
    Ok(TrainOutput {
        params,
        log,
        skipped_short_docs,
    })
}

pub const CHECKPOINT_FORMAT: &str = "coherseg-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized model: weights plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, params: ModelParams) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config,
            params,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let p = &ck.params;
        let (f, d) = (p.dims.feature_dim, p.dims.rep_dim);
        let expected = [f * d, d * d, d * d, d, 2 * d, 2, 6 * d, 3];
        for ((t, n), name) in p.tensors().iter().zip(expected).zip(ModelParams::TENSOR_NAMES) {
            if t.len() != n {
                return Err(Error::Dimension(format!(
                    "checkpoint tensor {name} has {} entries, expected {n}",
                    t.len()
                )));
            }
        }
        Ok(ck)
    }
}
