use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    #[error("conflicting labels for participant {participant_id} on {date}")]
    LabelConflict { participant_id: String, date: chrono::NaiveDate },

    #[error("unknown token {token:?}")]
    UnknownToken { token: String },

    #[error("sequence of {len} tokens exceeds the maximum of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("empty token sequence")]
    EmptySequence,

    #[error("event at {timestamp} for participant {participant_id} has location {location:?} outside the vocabulary")]
    LocationOutsideVocabulary {
        participant_id: String,
        timestamp: chrono::DateTime<chrono::Utc>,
        location: String,
    },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenIdOutOfRange { id: usize, vocab_size: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("duplicate entry {0:?}")]
    Duplicate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { expected: u32, found: u32 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero-norm vector")]
    ZeroVector,

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("need at least {needed} {what}, found {found}")]
    TooFew { what: &'static str, needed: usize, found: usize },

    #[error("unknown key: {0}")]
    UnknownKey(String),

    #[error("bisection did not converge for row {row}")]
    BisectionNonConvergence { row: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoBare(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
