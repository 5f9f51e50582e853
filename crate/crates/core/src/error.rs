use std::path::PathBuf;

use thiserror::Error;

use crate::providers::chat::ChatError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A decision vector computed under one prompt epoch was compared with a
    /// memory living in another.
    #[error("epoch mismatch: memory is at epoch {memory}, vector was computed at epoch {vector}")]
    EpochMismatch { memory: u64, vector: u64 },

    #[error("record lies within epsilon of an existing record (distance {distance}, epsilon {epsilon})")]
    PackingViolation { distance: f64, epsilon: f64 },

    #[error("memory is empty")]
    EmptyMemory,

    #[error("parse error: {0}")]
    Parse(String),

    #[error("embedding source lacks the `{0}` capability")]
    CapabilityMissing(&'static str),

    #[error("embedding file {path}: {reason}")]
    EmbeddingFile { path: PathBuf, reason: String },

    #[error("model client: {0}")]
    Chat(#[from] ChatError),

    #[error("alignment mismatch: {0}")]
    Alignment(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// First violated field of an [`EngineConfig`](crate::model::EngineConfig).
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field} must be {bound}")]
pub struct ConfigError {
    pub field: &'static str,
    pub bound: &'static str,
}
