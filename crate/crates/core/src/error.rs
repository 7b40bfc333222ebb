use thiserror::Error;

/// Failures raised by the estimators and their numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A Cholesky pivot fell below `p * eps * max(diag)`.
    #[error("matrix is not positive definite (pivot {pivot:e} at column {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// The design (or a selected subsample of it) is rank deficient.
    #[error("rank-deficient design: {0}")]
    DegenerateDesign(String),

    /// An iterative solver hit its iteration cap above tolerance.
    #[error("no convergence after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged { iterations: usize, gradient_norm: f64 },

    /// The censored calibration equation has no root: too few nonzero residuals.
    #[error("tau calibration has no solution: {nonzero} nonzero residuals, need more than {required:.3}")]
    NoSolution { nonzero: usize, required: f64 },

    /// The quadratic program has an empty feasible set.
    #[error("quadratic program is infeasible")]
    Infeasible,

    /// A linear contrast has (numerically) zero estimated variance.
    #[error("estimated variance of the contrast is zero")]
    ZeroVariance,

    #[error("Student-t degrees of freedom must exceed 2, got {0}")]
    BadDegrees(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Re-labels a factorization failure as a degenerate design.
    pub(crate) fn into_degenerate(self, context: &str) -> Self {
        match self {
            Error::NotPositiveDefinite { index, pivot } => Error::DegenerateDesign(format!(
                "{context}: Gram matrix pivot {pivot:e} at column {index}"
            )),
            other => other,
        }
    }
}
