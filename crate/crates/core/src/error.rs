use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed values whose shapes or ranges do not fit the operation.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// CSV header does not follow the expected column layout.
    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    /// Structurally valid file whose contents break a format rule (dates, numbers).
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A value violates a domain invariant.
    #[error("data error in {path}, row {row}, column {column}: {message}")]
    Data {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid region '{region}': {message}")]
    Region { region: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at iteration {iteration}: loss is {loss}")]
    NonFinite { iteration: usize, loss: f64 },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn arg(message: impl Into<String>) -> Self {
        Error::Argument(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
