//! Construction of disordered training documents and their sentence-structure
//! labels.
//!
//! A document is perturbed in three stages: its topics are permuted, some
//! topics are swapped for topics taken from other documents, and the
//! sentences inside every topic are permuted. Each sentence keeps a
//! [`Provenance`] record, and every adjacent pair in the result is labeled
//! with its relation in the *original* text:
//!
//! * `0`: the two sentences come from different topics,
//! * `1`: same topic, and the second sentence directly followed the first,
//! * `2`: same topic, any other order.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Sentence};
use crate::error::{Error, Result};
use crate::rng::{doc_rng, Rng};

pub const LABEL_SHIFT: u8 = 0;
pub const LABEL_NEXT: u8 = 1;
pub const LABEL_DISORDERED: u8 = 2;

/// Where an augmented sentence came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub src_doc_id: String,
    pub src_topic_id: u32,
    pub src_sentence_index: usize,
}

/// One topic run of an in-progress augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicBlock {
    pub sentences: Vec<(Sentence, Provenance)>,
}

/// Intermediate state between augmentation stages: an ordered list of topic
/// blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Draft {
    pub doc_id: String,
    pub blocks: Vec<TopicBlock>,
}

impl Draft {
    /// Wraps `doc` with identity provenance.
    pub fn from_document(doc: &Document) -> Self {
        let blocks = doc
            .topic_spans()
            .into_iter()
            .map(|span| TopicBlock {
                sentences: span
                    .map(|i| {
                        (
                            doc.sentences()[i].clone(),
                            Provenance {
                                src_doc_id: doc.doc_id().to_string(),
                                src_topic_id: doc.topic_of()[i],
                                src_sentence_index: i,
                            },
                        )
                    })
                    .collect(),
            })
            .collect();
        Draft {
            doc_id: doc.doc_id().to_string(),
            blocks,
        }
    }

    pub fn provenance(&self) -> Vec<&Provenance> {
        self.blocks
            .iter()
            .flat_map(|b| b.sentences.iter().map(|(_, p)| p))
            .collect()
    }

    pub fn n_sentences(&self) -> usize {
        self.blocks.iter().map(|b| b.sentences.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Probability that a document is selected for topic replacement.
    pub p1: f64,
    /// Per-topic replacement probability inside a selected document.
    pub p2: f64,
    pub shuffle_sentences: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            p1: 0.5,
            p2: 0.5,
            shuffle_sentences: true,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p1", self.p1), ("p2", self.p2)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// All topics of a corpus, flattened for uniform donor sampling.
#[derive(Debug, Clone)]
pub struct DonorPool {
    topics: Vec<(String, TopicBlock)>,
    doc_ids: Vec<String>,
}

impl DonorPool {
    pub fn new(docs: &[Document]) -> Self {
        let mut topics = Vec::new();
        let mut doc_ids = Vec::new();
        for doc in docs {
            doc_ids.push(doc.doc_id().to_string());
            for block in Draft::from_document(doc).blocks {
                topics.push((doc.doc_id().to_string(), block));
            }
        }
        DonorPool { topics, doc_ids }
    }

    fn has_donor_for(&self, doc_id: &str) -> bool {
        self.doc_ids.iter().any(|d| d != doc_id)
    }

    /// Uniform over all (document ≠ `doc_id`, topic) pairs.
    fn sample(&self, doc_id: &str, rng: &mut Rng) -> &TopicBlock {
        loop {
            let (owner, block) = &self.topics[rng.random_range(0..self.topics.len())];
            if owner != doc_id {
                return block;
            }
        }
    }
}

/// Uniformly permutes the topic blocks.
pub fn shuffle_topics(mut draft: Draft, rng: &mut Rng) -> Draft {
    draft.blocks.shuffle(rng);
    draft
}

/// Selects the document with probability `p1`; if selected, replaces each
/// topic with probability `p2` by a topic drawn uniformly from other
/// documents in `pool`. Donor topics keep their own length.
pub fn replace_topics(
    mut draft: Draft,
    pool: &DonorPool,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<Draft> {
    if !pool.has_donor_for(&draft.doc_id) {
        return Err(Error::InvalidInput(format!(
            "donor pool has no document other than {}",
            draft.doc_id
        )));
    }
    if !rng.random_bool(cfg.p1) {
        return Ok(draft);
    }
    for block in draft.blocks.iter_mut() {
        if rng.random_bool(cfg.p2) {
            *block = pool.sample(&draft.doc_id, rng).clone();
        }
    }
    Ok(draft)
}

/// Uniformly permutes the sentences inside each topic block.
pub fn shuffle_within_topics(mut draft: Draft, rng: &mut Rng) -> Draft {
    for block in draft.blocks.iter_mut() {
        block.sentences.shuffle(rng);
    }
    draft
}

/// Relation label of an adjacent pair `(a, b)`.
pub fn pair_label(a: &Provenance, b: &Provenance) -> u8 {
    if a.src_doc_id != b.src_doc_id || a.src_topic_id != b.src_topic_id {
        LABEL_SHIFT
    } else if b.src_sentence_index == a.src_sentence_index + 1 {
        LABEL_NEXT
    } else {
        LABEL_DISORDERED
    }
}

/// Labels for every adjacent pair of a provenance sequence.
pub fn tssp_labels<P: std::borrow::Borrow<Provenance>>(provenance: &[P]) -> Vec<u8> {
    provenance
        .windows(2)
        .map(|w| pair_label(w[0].borrow(), w[1].borrow()))
        .collect()
}

/// A perturbed document with per-sentence provenance and per-pair labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDocument {
    pub doc_id: String,
    pub sentences: Vec<Sentence>,
    /// Block index of each sentence in the augmented order.
    pub topic_of: Vec<u32>,
    pub provenance: Vec<Provenance>,
    pub tssp_labels: Vec<u8>,
}

impl AugmentedDocument {
    pub fn from_draft(draft: Draft) -> Self {
        let mut sentences = Vec::with_capacity(draft.n_sentences());
        let mut topic_of = Vec::new();
        let mut provenance = Vec::new();
        for (t, block) in draft.blocks.into_iter().enumerate() {
            for (s, p) in block.sentences {
                sentences.push(s);
                topic_of.push(t as u32);
                provenance.push(p);
            }
        }
        let tssp_labels = tssp_labels(&provenance);
        AugmentedDocument {
            doc_id: draft.doc_id,
            sentences,
            topic_of,
            provenance,
            tssp_labels,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Keeps the first `max_sentences` sentences and their labels.
    pub fn truncate(&mut self, max_sentences: usize) {
        if self.sentences.len() > max_sentences {
            self.sentences.truncate(max_sentences);
            self.topic_of.truncate(max_sentences);
            self.provenance.truncate(max_sentences);
            self.tssp_labels.truncate(max_sentences.saturating_sub(1));
        }
    }

    /// Number of sentences whose source document differs from this one.
    pub fn n_foreign_sentences(&self) -> usize {
        self.provenance
            .iter()
            .filter(|p| p.src_doc_id != self.doc_id)
            .count()
    }
}

/// Runs the full pipeline on `doc` with the random stream derived from
/// `cfg.seed` and the document id.
pub fn augment_document(
    doc: &Document,
    pool: &DonorPool,
    cfg: &AugmentConfig,
) -> Result<AugmentedDocument> {
    cfg.validate()?;
    let mut rng = doc_rng(cfg.seed, doc.doc_id());
    augment_with_rng(doc, pool, cfg, &mut rng)
}

pub fn augment_with_rng(
    doc: &Document,
    pool: &DonorPool,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<AugmentedDocument> {
    let draft = shuffle_topics(Draft::from_document(doc), rng);
    let mut draft = replace_topics(draft, pool, cfg, rng)?;
    if cfg.shuffle_sentences {
        draft = shuffle_within_topics(draft, rng);
    }
    Ok(AugmentedDocument::from_draft(draft))
}
