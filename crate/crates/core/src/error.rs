use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the discovery workflow.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or lengths that do not agree (weights vs. architecture, matrix vs. vector).
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// An argument outside the operation's domain (non-positive sigma, empty sample set, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// A numerical procedure failed to produce finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed file contents.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
