use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{n} entities exceeds the enumeration cap of {cap}; use a sampler instead")]
    Capacity { n: usize, cap: usize },

    #[error("optimizer diverged at iteration {iteration}: {message}")]
    Divergence { iteration: usize, message: String },

    #[error("degenerate run: {0}")]
    Degenerate(String),

    #[error("no latent correlation in [-1, 1] reproduces the moment of pair ({i}, {j})")]
    Attainability { i: usize, j: usize },

    #[error("support violation: q is zero at index {index} where p = {p}")]
    Support { index: usize, p: f64 },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// The innermost error, looking through fold tags.
    pub fn root(&self) -> &Error {
        match self {
            Error::Fold { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
