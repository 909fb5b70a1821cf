use thiserror::Error;

use crate::trace::RunTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is rank deficient: |R[{index}, {index}]| = {pivot:e} below tolerance {tol:e}")]
    Singular { index: usize, pivot: f64, tol: f64 },

    #[error("matrix is not positive definite (Cholesky pivot failed)")]
    Indefinite,

    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eig:e} < -{tol:e}")]
    NotPsd { min_eig: f64, tol: f64 },

    #[error("operator is not PSD: CG direction curvature {curvature:e} at iteration {iter}")]
    NonPsdOperator { iter: usize, curvature: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no block was kept after {attempts} sampling attempts; budget s is too small")]
    EmptySample { attempts: usize },

    #[error("sketched leverage pipeline failed: {0}")]
    SketchFailure(String),

    #[error("regime precondition violated: {0}")]
    RegimeViolation(String),

    #[error("optimizer diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// A run that aborted part-way. The trace up to the failure is kept so callers
/// can still flush partial results.
#[derive(Debug, Error)]
#[error("run aborted at iteration {iter}: {source}")]
pub struct RunFailure {
    pub iter: usize,
    #[source]
    pub source: Error,
    pub trace: RunTrace,
}
