use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violates a precondition (too few points, NaN, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A caller broke an operation's contract (shape mismatch, empty batch, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    /// Correlation is undefined because one of the inputs has zero variance.
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at stage {stage}, epoch {epoch}, step {step}: {loss} = {value}")]
    Diverged {
        stage: String,
        epoch: usize,
        step: usize,
        loss: String,
        value: f64,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
