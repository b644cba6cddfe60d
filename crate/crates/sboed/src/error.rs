//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("Newton solver diverged at time step {step} (residual {residual:.3e} after {iterations} iterations)")]
    NewtonDiverged {
        step: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("CG did not converge within {iterations} iterations (residual {residual:.3e})")]
    CgNoConvergence { iterations: usize, residual: f64 },

    #[error("Cholesky factorization failed at pivot {pivot} (matrix not positive definite)")]
    NotPositiveDefinite { pivot: usize },

    #[error(
        "MAP solver hit the iteration cap ({iterations} iterations, gradient norm {grad_norm:.3e})"
    )]
    MapIterationCap {
        iterations: usize,
        grad_norm: f64,
        /// Best iterate found so far, so callers can inspect or continue.
        best: Vec<f64>,
    },

    #[error("eigenvalue {value:.3e} below the admissible floor at index {index}")]
    IndefiniteEigenvalue { index: usize, value: f64 },

    #[error("non-finite activation in surrogate layer `{layer}`")]
    NonFinite { layer: &'static str },

    #[error("training loss became non-finite at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("too many inner-solver failures in the cEIG estimator: {failed}/{total}")]
    EstimatorFailures { failed: usize, total: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
