use thiserror::Error;

/// Errors raised by bound computations, estimators and experiments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("parameter is infeasible: constraint residual {residual:e} exceeds tolerance {tolerance:e}")]
    Infeasible { residual: f64, tolerance: f64 },

    #[error("constraint Jacobian is rank deficient: rank {rank}, expected {expected}")]
    RedundantConstraints { rank: usize, expected: usize },

    #[error("basis alignment unreliable: largest principal angle {angle:.4} rad exceeds pi/4")]
    AlignmentUnreliable { angle: f64 },

    #[error("basis chart is singular at this parameter: {0}")]
    SingularChart(String),

    #[error("matrix is not positive semidefinite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPsd { min_eigenvalue: f64 },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate observation: {0}")]
    DegenerateObservation(String),

    #[error("no convergence after {iterations} iterations: {context}")]
    NoConvergence {
        iterations: usize,
        context: &'static str,
    },

    #[error("{failures} of {trials} trials failed (limit is 1%)")]
    TooManyFailures { failures: usize, trials: usize },

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for errors caused by a malformed request rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::Infeasible { .. }
                | Error::InvalidInput(_)
                | Error::InvalidSpec(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
