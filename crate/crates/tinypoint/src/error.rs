use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type. Variants map onto the CLI exit-code contract:
/// usage/config problems exit 1, I/O exits 2, numeric divergence exits 3,
/// malformed on-disk formats exit 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Diverged {
        epoch: u32,
        batch: usize,
        message: String,
    },

    #[error("report error: {0}")]
    Report(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error when surfaced through the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Diverged { .. } | Error::Numeric(_) => 3,
            Error::Format { .. } | Error::Parse { .. } => 4,
            _ => 1,
        }
    }
}
