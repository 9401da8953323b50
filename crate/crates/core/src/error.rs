use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("eigensolver did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("training diverged at epoch {epoch}{}: {term} is not finite", view.map(|v| format!(" (view {v})")).unwrap_or_default())]
    Divergence {
        epoch: usize,
        view: Option<usize>,
        term: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Shape { .. } | Error::Argument(_) | Error::Contract(_) => ErrorClass::Config,
            Error::NonFinite(_) | Error::NoConvergence { .. } | Error::Divergence { .. } => ErrorClass::Numeric,
            Error::Data(DataError::Io { .. }) | Error::Data(DataError::Missing { .. }) => ErrorClass::Io,
            Error::Data(_) => ErrorClass::Config,
            Error::Checkpoint(CheckpointError::Io { .. }) => ErrorClass::Io,
            Error::Checkpoint(_) => ErrorClass::Config,
            Error::Io { .. } => ErrorClass::Io,
        }
    }
}

/// Dataset loading and validation failures. Each variant names the file
/// (and line, where one applies) that triggered it.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing dataset file {path}")]
    Missing { path: PathBuf },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed meta descriptor {path}: {message}")]
    Meta { path: PathBuf, message: String },
    #[error("{path}:{line}: non-numeric cell {cell:?}")]
    NonNumeric { path: PathBuf, line: usize, cell: String },
    #[error("{path}: view {view} dimension mismatch: {message}")]
    Dimension {
        path: PathBuf,
        view: usize,
        message: String,
    },
    #[error("{path}:{line}: label {label} out of range (expected 0..{num_clusters})")]
    LabelRange {
        path: PathBuf,
        line: usize,
        label: i64,
        num_clusters: usize,
    },
    #[error("{path}: {message}")]
    Labels { path: PathBuf, message: String },
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Checkpoint decoding failures.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic {found:?})")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {found:?} (expected {expected:?})")]
    Version { found: String, expected: String },
    #[error("checkpoint truncated: {0}")]
    Truncated(String),
    #[error("corrupt checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint shape inconsistency: {0}")]
    Shape(String),
}
