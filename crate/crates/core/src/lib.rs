//! Supervised topic segmentation with two coherence objectives: a
//! sentence-structure task over deliberately disordered documents and a
//! contrastive similarity task over same-topic and cross-topic sentence
//! pairs.
//!
//! Module map:
//!
//! * [`corpus`]: documents, boundary labels, JSONL I/O, windowing, synthetic data
//! * [`augment`]: disordered documents and their pair-relation labels
//! * [`pairs`]: positive/negative sets for the contrastive loss
//! * [`losses`]: objectives, analytic gradients, finite-difference checker
//! * [`model`], [`optim`], [`train`]: encoder, heads, AdamW, training loop
//! * [`metrics`]: F1, Pk, WindowDiff
//! * [`infer`]: thresholding, similarity predictor, ensemble, window merging

pub mod augment;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod pairs;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
