use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("document is empty")]
    EmptyDocument,

    #[error("document {doc_id}: {reason}")]
    InvalidDocument { doc_id: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("non-finite loss in document {doc_id}: {detail}")]
    NonFinite { doc_id: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid_doc(doc_id: &str, reason: impl Into<String>) -> Self {
        Error::InvalidDocument {
            doc_id: doc_id.to_string(),
            reason: reason.into(),
        }
    }

    /// Whether the error comes from the environment or from numerics rather
    /// than from bad input or configuration.
    pub fn is_runtime(&self) -> bool {
        matches!(self, Error::Io(_) | Error::NonFinite { .. })
    }
}
