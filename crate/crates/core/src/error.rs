use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular state: {0}")]
    Singular(String),

    #[error("invalid hierarchy: {0}")]
    Spec(String),

    #[error("numerical failure at t = {time}: {reason}")]
    Numerical { time: f64, reason: String },

    #[error("sampling failed after {attempts} attempts: {reason}")]
    Sampling { attempts: usize, reason: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("dimension mismatch: expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("model format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
