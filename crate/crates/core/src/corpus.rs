//! Documents, boundary labels, JSONL ingestion, windowing and synthetic corpora.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::doc_rng;

/// One pre-tokenized sentence. Its index is its position in the owning
/// [`Document`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Whether a boundary may be placed after this sentence. Absent means
    /// unrestricted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<bool>,
}

impl Sentence {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Sentence {
            tokens: tokens.into_iter().map(Into::into).collect(),
            text: None,
            candidate: None,
        }
    }
}

/// Boundary label per sentence except the last: 1 iff the sentence closes
/// its topic.
pub type BoundaryLabels = Vec<u8>;

#[derive(Debug, Deserialize)]
struct RawDocument {
    doc_id: String,
    sentences: Vec<Sentence>,
    topic_of: Vec<u32>,
}

/// An ordered list of sentences partitioned into contiguous topics.
///
/// Construction validates the invariants: at least one sentence, non-empty
/// token lists, one topic id per sentence, and topic ids that strictly
/// increase at every change (so each topic is a single contiguous run).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDocument")]
pub struct Document {
    doc_id: String,
    sentences: Vec<Sentence>,
    topic_of: Vec<u32>,
}

impl TryFrom<RawDocument> for Document {
    type Error = Error;

    fn try_from(raw: RawDocument) -> Result<Self> {
        Document::new(raw.doc_id, raw.sentences, raw.topic_of)
    }
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        sentences: Vec<Sentence>,
        topic_of: Vec<u32>,
    ) -> Result<Self> {
        let doc_id = doc_id.into();
        if sentences.is_empty() {
            return Err(Error::invalid_doc(&doc_id, "document has no sentences"));
        }
        if topic_of.len() != sentences.len() {
            return Err(Error::invalid_doc(
                &doc_id,
                format!(
                    "topic_of has {} entries for {} sentences",
                    topic_of.len(),
                    sentences.len()
                ),
            ));
        }
        if let Some(i) = sentences.iter().position(|s| s.tokens.is_empty()) {
            return Err(Error::invalid_doc(&doc_id, format!("sentence {i} has no tokens")));
        }
        for (i, w) in topic_of.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(Error::invalid_doc(
                    &doc_id,
                    format!(
                        "non-contiguous topics: topic {} follows topic {} at sentence {}",
                        w[1],
                        w[0],
                        i + 1
                    ),
                ));
            }
        }
        Ok(Document {
            doc_id,
            sentences,
            topic_of,
        })
    }

    /// Builds a document from token lists grouped by topic; topic ids are
    /// assigned 0, 1, 2, ...
    pub fn from_topics(doc_id: impl Into<String>, topics: Vec<Vec<Vec<String>>>) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut topic_of = Vec::new();
        for (t, topic) in topics.into_iter().enumerate() {
            for tokens in topic {
                sentences.push(Sentence {
                    tokens,
                    text: None,
                    candidate: None,
                });
                topic_of.push(t as u32);
            }
        }
        Document::new(doc_id, sentences, topic_of)
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn topic_of(&self) -> &[u32] {
        &self.topic_of
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    /// Always false for a validated document; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentence ranges, one per topic, in document order.
    pub fn topic_spans(&self) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = 0;
        for i in 1..=self.len() {
            if i == self.len() || self.topic_of[i] != self.topic_of[start] {
                spans.push(start..i);
                start = i;
            }
        }
        spans
    }

    pub fn n_topics(&self) -> usize {
        self.topic_spans().len()
    }

    pub fn boundary_labels(&self) -> BoundaryLabels {
        self.topic_of
            .windows(2)
            .map(|w| u8::from(w[0] != w[1]))
            .collect()
    }

    /// Per boundary position, whether a boundary may be placed there. `None`
    /// when no sentence in the document carries a candidate flag.
    pub fn candidate_mask(&self) -> Option<Vec<bool>> {
        if self.sentences.iter().all(|s| s.candidate.is_none()) {
            return None;
        }
        Some(
            self.sentences[..self.len() - 1]
                .iter()
                .map(|s| s.candidate.unwrap_or(true))
                .collect(),
        )
    }

    /// Copy of sentences `range` with their topic ids.
    pub fn slice(&self, range: Range<usize>) -> Result<Document> {
        Document::new(
            self.doc_id.clone(),
            self.sentences[range.clone()].to_vec(),
            self.topic_of[range].to_vec(),
        )
    }
}

/// Boundary labels of `doc`; one entry per sentence except the last.
pub fn boundary_labels(doc: &Document) -> BoundaryLabels {
    doc.boundary_labels()
}

/// Reads one document per non-blank line.
pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        docs.push(Document::try_from(raw)?);
    }
    Ok(docs)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Start offsets of the windows produced by [`sliding_windows`].
pub fn window_starts(n: usize, max_sentences: usize) -> Vec<usize> {
    let step = max_sentences - 1;
    let mut starts = vec![0];
    let mut start = 0;
    while start + max_sentences < n {
        start += step;
        starts.push(start);
    }
    starts
}

/// Splits `doc` into windows of at most `max_sentences` sentences; each
/// window after the first starts with the last sentence of the one before.
pub fn sliding_windows(doc: &Document, max_sentences: usize) -> Result<Vec<Document>> {
    if max_sentences < 2 {
        return Err(Error::Config(format!(
            "max_sentences must be >= 2, got {max_sentences}"
        )));
    }
    window_starts(doc.len(), max_sentences)
        .into_iter()
        .map(|s| doc.slice(s..(s + max_sentences).min(doc.len())))
        .collect()
}

/// Parameters of the synthetic corpus generator. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub vocab_clusters: usize,
    pub cluster_vocab_size: usize,
    pub topics_per_doc: (usize, usize),
    pub sentences_per_topic: (usize, usize),
    pub tokens_per_sentence: (usize, usize),
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_docs: 500,
            vocab_clusters: 12,
            cluster_vocab_size: 40,
            topics_per_doc: (3, 8),
            sentences_per_topic: (2, 7),
            tokens_per_sentence: (3, 8),
            noise_rate: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_docs", self.n_docs),
            ("vocab_clusters", self.vocab_clusters),
            ("cluster_vocab_size", self.cluster_vocab_size),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be ≥ 1")));
            }
        }
        let ranges = [
            ("topics_per_doc", self.topics_per_doc),
            ("sentences_per_topic", self.sentences_per_topic),
            ("tokens_per_sentence", self.tokens_per_sentence),
        ];
        for (name, (lo, hi)) in ranges {
            if lo < 1 || hi < lo {
                return Err(Error::Config(format!(
                    "{name} must be a non-empty range of counts ≥ 1, got [{lo}, {hi}]"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise_rate must be in [0, 1), got {}",
                self.noise_rate
            )));
        }
        Ok(())
    }
}

/// Token `w` of vocabulary cluster `c`.
pub fn synth_token(cluster: usize, word: usize) -> String {
    format!("c{cluster}w{word}")
}

/// Cluster of a token produced by [`synth_token`].
pub fn synth_token_cluster(token: &str) -> Option<usize> {
    let rest = token.strip_prefix('c')?;
    let (c, _) = rest.split_once('w')?;
    c.parse().ok()
}

/// Generates documents whose topics each draw tokens from one vocabulary
/// cluster. Adjacent topics use different clusters whenever more than one
/// cluster exists. Each document uses its own random stream, so the output is
/// a pure function of `cfg`.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<Document>> {
    cfg.validate()?;
    (0..cfg.n_docs).map(|i| synth_document(cfg, i)).collect()
}

fn synth_document(cfg: &SynthConfig, i: usize) -> Result<Document> {
    let doc_id = format!("s{}-d{i:05}", cfg.seed);
    let mut rng = doc_rng(cfg.seed, &doc_id);
    let n_topics = rng.random_range(cfg.topics_per_doc.0..=cfg.topics_per_doc.1);
    let mut topics = Vec::with_capacity(n_topics);
    let mut prev: Option<usize> = None;
    for _ in 0..n_topics {
        let cluster = loop {
            let c = rng.random_range(0..cfg.vocab_clusters);
            if cfg.vocab_clusters == 1 || Some(c) != prev {
                break c;
            }
        };
        prev = Some(cluster);
        let n_sent = rng.random_range(cfg.sentences_per_topic.0..=cfg.sentences_per_topic.1);
        let sentences = (0..n_sent)
            .map(|_| {
                let n_tok =
                    rng.random_range(cfg.tokens_per_sentence.0..=cfg.tokens_per_sentence.1);
                (0..n_tok)
                    .map(|_| {
                        let noisy = cfg.vocab_clusters > 1 && rng.random_bool(cfg.noise_rate);
                        let c = if noisy {
                            // uniform over the other clusters
                            let o = rng.random_range(0..cfg.vocab_clusters - 1);
                            if o >= cluster {
                                o + 1
                            } else {
                                o
                            }
                        } else {
                            cluster
                        };
                        synth_token(c, rng.random_range(0..cfg.cluster_vocab_size))
                    })
                    .collect()
            })
            .collect();
        topics.push(sentences);
    }
    Document::from_topics(doc_id, topics)
}
