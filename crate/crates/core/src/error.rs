use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate fiber id `{0}`")]
    DuplicateId(String),

    #[error("invalid fiber `{id}`: {message}")]
    InvalidFiber { id: String, message: String },

    #[error("rotation matrix is not a proper rotation: {0}")]
    NotARotation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("class `{class}` has {available} fibers, need at least {required}")]
    Underpopulated {
        class: String,
        available: usize,
        required: usize,
    },

    #[error("corrupt checkpoint at line {line}, column {column}: {message}")]
    CorruptCheckpoint {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("default set is empty")]
    EmptyDefaultSet,

    #[error("prediction row `{0}` has no truth label")]
    MissingTruth(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
