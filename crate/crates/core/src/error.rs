use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("user {user} has an all-zero channel but was allocated power {power}")]
    DegenerateChannel { user: usize, power: f64 },

    #[error("brute-force search supports at most 4 users, got {0}")]
    TooManyUsers(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("constraint `{0}` has no gradient and cannot be registered")]
    NonDifferentiableConstraint(String),

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint architecture mismatch: expected {expected}, found {found}")]
    CheckpointShape { expected: String, found: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
