use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("support mismatch at index {index}: p = {p} > 0 but q = 0")]
    SupportMismatch { index: usize, p: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("empty sequence")]
    EmptySequence,

    #[error("empty score list")]
    EmptyScores,

    #[error("empty text")]
    EmptyText,

    #[error("need at least 2 sentences to split, got {0}")]
    TooFewSentences(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("pathwise floor gamma is zero at position {0}")]
    DegenerateGamma(usize),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("phase `{phase}` failed: {source}")]
    Phase {
        phase: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the experiment phase it came from.
    pub fn in_phase(self, phase: &str) -> Self {
        Error::Phase {
            phase: phase.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
