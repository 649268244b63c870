//! Crate-wide error type and result alias.

use thiserror::Error;

/// Errors surfaced by the memory engine.
#[derive(Debug, Error)]
pub enum MemoraError {
    #[error("unknown entry id {0}")]
    UnknownEntry(u64),

    #[error("unknown anchor id {0}")]
    UnknownAnchor(u64),

    #[error("unknown segment id {0}")]
    UnknownSegment(u64),

    #[error("unknown episode id {0}")]
    UnknownEpisode(u64),

    #[error("unknown source id {0}")]
    UnknownSource(u64),

    #[error("duplicate id {0}")]
    DuplicateId(u64),

    #[error("{0} must be non-empty")]
    EmptyField(&'static str),

    #[error("invalid source: {0}")]
    InvalidSource(String),

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cannot take cosine of a zero vector")]
    ZeroVector,

    #[error("non-finite value in embedding")]
    NonFiniteValue,

    #[error("invalid retrieval action: {0}")]
    InvalidAction(String),

    #[error("retrieval budget exhausted")]
    BudgetExhausted,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("probability distribution error: {0}")]
    Distribution(String),

    #[error("trajectory has no score components")]
    MissingComponents,

    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    #[error("snapshot checksum mismatch")]
    ChecksumMismatch,

    #[error("config error: {0}")]
    Config(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MemoraError>;
