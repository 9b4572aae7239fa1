use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
///
/// Variants are grouped by cause so the CLI can map them to exit codes:
/// configuration problems, data/ingest problems, and numeric failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid network spec at layer {index}: {reason}")]
    Spec { index: usize, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("ingest error at row {row}: {reason}")]
    Ingest { row: usize, reason: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the `mimic` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Spec { .. } | Error::Contract(_) => 2,
            Error::Ingest { .. } | Error::Format(_) | Error::Io { .. } | Error::Shape(_) => 3,
            Error::Domain(_) | Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
