use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("forward cache does not belong to this network state")]
    StaleCache,

    #[error("invalid action index {0} (expected 0..=14)")]
    InvalidAction(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("update requested with {have} transitions stored, warmup needs {need}")]
    NotWarmedUp { have: usize, need: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing metric column `{0}`")]
    MissingMetric(String),

    #[error("i/o error at {path}: {source}")]
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
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by a bad configuration or bad user input.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnknownPolicy(_) | Error::InvalidArgument(_)
        )
    }

    /// True for filesystem and serialization failures.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Csv(_) | Error::Checkpoint(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
