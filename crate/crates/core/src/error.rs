use std::path::PathBuf;

use thiserror::Error;

use crate::direction::DirectionError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A regeneration cycle (or level search) ran past the configured step cap.
    /// Under nonnestling the cycle length has geometric tails, so this almost
    /// always means the model is misconfigured.
    #[error("cycle length exceeded the safety cap of {cap} steps (started at step {start})")]
    CycleCapExceeded { cap: u64, start: u64 },

    #[error("quenched support needs {needed} entries, cap is {cap}")]
    SupportCapExceeded { needed: usize, cap: usize },

    #[error("fit error: {0}")]
    Fit(String),

    #[error("arithmetic overflow in {0}")]
    Overflow(&'static str),

    #[error(transparent)]
    Direction(#[from] DirectionError),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Experiment {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
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

    pub(crate) fn with_context(self, context: impl Into<String>) -> Self {
        Error::Experiment {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
