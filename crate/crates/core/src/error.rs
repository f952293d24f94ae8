use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not valid {format} input: {message}")]
    Format { path: PathBuf, format: String, message: String },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("graph {id} has {len} triplets, more than the fixed order length {max}")]
    Oversize { id: String, len: usize, max: usize },
    #[error("knowledge graph {0} has no triplets")]
    EmptyGraph(String),
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("unknown tagger `{0}`")]
    UnknownTagger(String),
    #[error("vocabulary max size {max} cannot hold the {specials} special tokens")]
    VocabTooSmall { max: usize, specials: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("source has {len} tokens, more than the configured maximum {max}")]
    SourceTooLong { len: usize, max: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, step {step}: {detail}")]
    NonFinite { epoch: usize, step: usize, detail: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("checkpoint integrity error: {0}")]
    Integrity(String),
    #[error("empty evaluation split")]
    EmptySplit,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the failure comes from the input data (as opposed to numerics or usage).
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::NonFinite { .. } | Error::Config(_) | Error::UnknownTagger(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
