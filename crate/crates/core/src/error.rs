use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("unsupported input: {field} is {found}, expected {expected}")]
    Unsupported {
        field: &'static str,
        found: String,
        expected: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("manifest {path}, line {line}: {detail}")]
    Manifest {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("corrupt weight file at `{param}`: {detail}")]
    Corrupt { param: String, detail: String },

    #[error("architecture mismatch: file holds {found}, expected {expected}")]
    ArchitectureMismatch { found: String, expected: String },

    #[error("training diverged at epoch {epoch}, batch {batch} (lr {lr:e}): {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        lr: f64,
        detail: String,
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
}
