use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument falls outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix or scale term is too close to singular to invert.
    #[error("singularity: {0}")]
    Singular(String),

    /// No usable samples were available for an estimator.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// A trajectory CSV could not be parsed.
    #[error("{path}:{line}: {message}")]
    Ingest { path: PathBuf, line: u64, message: String },

    /// The autodiff graph was used out of order.
    #[error("graph contract violated: {0}")]
    Contract(String),

    /// Training diverged; the report collected so far is retained.
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        report: Box<crate::dcnet::TrainReport>,
    },

    /// Too many Monte-Carlo iterations failed.
    #[error("evaluation failed: {0}")]
    Evaluation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
