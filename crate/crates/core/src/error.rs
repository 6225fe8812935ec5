use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pcap format error: {0}")]
    Pcap(String),

    #[error("corrupt checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("dataset error at line {line}: {reason}")]
    Dataset { line: usize, reason: String },

    #[error("report parse error: {0}")]
    Report(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's configuration or arguments
    /// rather than by data or runtime conditions.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidArgument(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
