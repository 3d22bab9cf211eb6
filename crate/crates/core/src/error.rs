use thiserror::Error;

use crate::planner::Trajectory;
use crate::qp::QpSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Cholesky hit a pivot at or below the positivity threshold.
    #[error("cholesky factorization failed at pivot {pivot} (value {value:e})")]
    Factorization { pivot: usize, value: f64 },

    /// The interior-point iteration cap was hit. Carries the best iterate seen.
    #[error("interior-point solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Box<QpSolution>,
    },

    /// The closed-form 2D active-set solver cannot handle this cost matrix.
    #[error("degenerate problem: {0}")]
    Degenerate(String),

    /// The backward system is singular at this solution.
    #[error("solution is not differentiable{}: {reason}", constraint.map(|j| format!(" at constraint {j}")).unwrap_or_default())]
    NonDifferentiable {
        constraint: Option<usize>,
        reason: String,
    },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("planning failed: {reason}")]
    PlanningFailure {
        reason: String,
        best: Box<Trajectory>,
    },
}
