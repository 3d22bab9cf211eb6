//! Differentiable proximity queries between capsules and padded polygons.
//!
//! Each query is a small convex QP whose optimal value is a signed proximity
//! measure `φ`: positive when the bodies are apart, non-positive when they
//! touch or overlap. The QP is solved in closed form (capsule pairs) or by a
//! primal-dual interior-point method, and the solution is differentiated
//! through its KKT conditions to give `∂φ/∂(r, q)` for both bodies.

pub mod active_set;
pub mod collision;
pub mod diff_qp;
pub mod error;
pub mod geometry;
pub mod planner;
pub mod qp;

pub use collision::{
    envelope_jacobians, finite_diff_jacobians, finite_diff_jacobians_with, proximity, proximity_and_jacobians, proximity_jacobians,
    proximity_with, PairKind, ProximityJacobians, ProximityResult, Shape,
};
pub use error::{Error, Result};
pub use geometry::{Capsule, PaddedPolygon, Pose};
pub use planner::{plan, plan_with, CarState, PlanProblem, PlanResult, Trajectory};
pub use qp::{pdip_solve, QpData, QpSolution, SolverOptions};
