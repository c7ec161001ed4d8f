use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("training did not converge after {iterations} iterations (gradient inf-norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    CgNonConvergence { iterations: usize, residual: f64 },

    #[error("model is not stationary: mean-gradient inf-norm {grad_norm:e} exceeds {limit:e}")]
    NotStationary { grad_norm: f64, limit: f64 },

    #[error("size guard exceeded: {what} = {size} > {limit}")]
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("resolver needs {0}")]
    MissingResolverInput(&'static str),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
