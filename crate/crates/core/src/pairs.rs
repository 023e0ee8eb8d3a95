//! Positive and negative sentence sets for the contrastive objective.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsslConfig {
    /// Positives per anchor.
    pub k1: usize,
    /// Negatives per anchor.
    pub k2: usize,
    /// Temperature dividing the cosine similarity.
    pub tau: f64,
}

impl Default for CsslConfig {
    fn default() -> Self {
        CsslConfig {
            k1: 1,
            k2: 3,
            tau: 0.1,
        }
    }
}

impl CsslConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 < 1 {
            return Err(Error::Config("k1 must be ≥ 1".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Same-topic and different-topic neighbours of one anchor sentence, each
/// ordered by distance from the anchor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pub anchor: usize,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl PairSet {
    /// Anchors without any same-topic sentence take no part in the loss.
    pub fn is_excluded(&self) -> bool {
        self.positives.is_empty()
    }
}

/// Sentence indices other than `anchor` ordered by distance; at equal
/// distance the earlier index comes first.
fn by_distance(anchor: usize, n: usize) -> impl Iterator<Item = usize> {
    (1..n).flat_map(move |d| {
        let before = anchor.checked_sub(d);
        let after = Some(anchor + d).filter(|&j| j < n);
        before.into_iter().chain(after)
    })
}

/// One [`PairSet`] per sentence: the `k1` nearest same-topic sentences and the
/// `k2` nearest sentences from other topics. Lists are shorter when fewer
/// candidates exist.
pub fn build_pairs(doc: &Document, cfg: &CsslConfig) -> Vec<PairSet> {
    let n = doc.len();
    let topic = doc.topic_of();
    (0..n)
        .map(|anchor| {
            let mut positives = Vec::new();
            let mut negatives = Vec::new();
            for j in by_distance(anchor, n) {
                if topic[j] == topic[anchor] {
                    if positives.len() < cfg.k1 {
                        positives.push(j);
                    }
                } else if negatives.len() < cfg.k2 {
                    negatives.push(j);
                }
                if positives.len() == cfg.k1 && negatives.len() == cfg.k2 {
                    break;
                }
            }
            PairSet {
                anchor,
                positives,
                negatives,
            }
        })
        .collect()
}
