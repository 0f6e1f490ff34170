use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The budget constraint forces `(1/N) sum w_i^2 >= 1`.
    #[error("infeasible concentration tau = {tau}: the budget constraint requires tau >= 1")]
    Infeasible { tau: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("saddle-point equations not solved after {iterations} iterations (max residual {residual:e})")]
    SaddleNonConvergence { iterations: usize, residual: f64 },

    #[error("no interior secular root: tau = {tau} exceeds the attainable concentration {supremum} for theta below the smallest eigenvalue")]
    NoInteriorRoot { tau: f64, supremum: f64 },

    #[error("descent diverged at iteration {iteration} (delta = {delta:e}); reduce the step sizes")]
    Diverged { iteration: usize, delta: f64 },

    #[error("{failures} of {samples} instances failed at tau = {tau} (limit is 10%)")]
    TooManyFailures { tau: f64, failures: usize, samples: usize },

    #[error("nothing to plot: no row has a usable sample mean")]
    EmptyFigure,

    #[error("malformed input: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Whether the error stems from the caller's input rather than from a computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter(_) | Error::Infeasible { .. } | Error::DimensionMismatch { .. } | Error::Parse(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
