//! Collision-constrained trajectory planning for a kinematic car.
//!
//! The car is a capsule in the z = 0 plane. Controls are optimized by projected
//! gradient descent on a single-shooting objective with a quadratic penalty on
//! negative proximity values; the penalty weight grows each outer round.
//! Collision gradients come from [`envelope_jacobians`] and
//! [`proximity_and_jacobians`], chained through the RK4 rollout.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{RowVector4, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::collision::{envelope_jacobians, proximity_and_jacobians, proximity_with, ProximityJacobians, Shape};
use crate::error::{Error, Result};
use crate::geometry::{Capsule, Pose};
use crate::qp::SolverOptions;

pub type StateVec = SVector<f64, 5>;
type StateJac = SMatrix<f64, 5, 5>;
type ControlJac = SMatrix<f64, 5, 2>;

/// Proximity values at or above this count as collision-free.
pub const PHI_FEASIBILITY_TOL: f64 = -1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarState {
    pub px: f64,
    pub py: f64,
    /// Heading (rad).
    pub psi: f64,
    /// Speed (m/s).
    pub v: f64,
    /// Steering angle (rad).
    pub gamma: f64,
}

impl CarState {
    pub fn new(px: f64, py: f64, psi: f64, v: f64, gamma: f64) -> Self {
        Self { px, py, psi, v, gamma }
    }

    pub fn to_vector(&self) -> StateVec {
        StateVec::new(self.px, self.py, self.psi, self.v, self.gamma)
    }

    pub fn from_vector(x: &StateVec) -> Self {
        Self::new(x[0], x[1], x[2], x[3], x[4])
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.px, self.py)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

fn check_steering(gamma: f64) -> Result<()> {
    if !(gamma.abs() < FRAC_PI_2) {
        return Err(Error::InvalidState(format!(
            "steering angle {gamma} is outside (-π/2, π/2)"
        )));
    }
    Ok(())
}

/// Kinematic bicycle: `ṗ = v (cos ψ, sin ψ)`, `ψ̇ = v tan(γ) / wheelbase`,
/// `v̇ = u1`, `γ̇ = u2`.
pub fn car_dynamics(x: &CarState, u: &Vector2<f64>, wheelbase: f64) -> Result<StateVec> {
    check_steering(x.gamma)?;
    Ok(StateVec::new(
        x.v * x.psi.cos(),
        x.v * x.psi.sin(),
        x.v * x.gamma.tan() / wheelbase,
        u[0],
        u[1],
    ))
}

fn dynamics_state_jacobian(x: &StateVec, wheelbase: f64) -> StateJac {
    let (psi, v, gamma) = (x[2], x[3], x[4]);
    let mut a = StateJac::zeros();
    a[(0, 2)] = -v * psi.sin();
    a[(0, 3)] = psi.cos();
    a[(1, 2)] = v * psi.cos();
    a[(1, 3)] = psi.sin();
    a[(2, 3)] = gamma.tan() / wheelbase;
    a[(2, 4)] = v / (wheelbase * gamma.cos().powi(2));
    a
}

fn control_jacobian() -> ControlJac {
    let mut b = ControlJac::zeros();
    b[(3, 0)] = 1.0;
    b[(4, 1)] = 1.0;
    b
}

/// Classical fourth-order Runge-Kutta step.
pub fn rk4_step(x: &CarState, u: &Vector2<f64>, dt: f64, wheelbase: f64) -> Result<CarState> {
    let f = |s: &StateVec| car_dynamics(&CarState::from_vector(s), u, wheelbase);
    let x0 = x.to_vector();
    let k1 = f(&x0)?;
    let k2 = f(&(x0 + 0.5 * dt * k1))?;
    let k3 = f(&(x0 + 0.5 * dt * k2))?;
    let k4 = f(&(x0 + dt * k3))?;
    Ok(CarState::from_vector(&(x0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))))
}

/// `(∂x⁺/∂x, ∂x⁺/∂u)` of [`rk4_step`].
fn rk4_jacobians(x: &CarState, u: &Vector2<f64>, dt: f64, wheelbase: f64) -> Result<(StateJac, ControlJac)> {
    let f = |s: &StateVec| car_dynamics(&CarState::from_vector(s), u, wheelbase);
    let fu = control_jacobian();
    let eye = StateJac::identity();
    let x0 = x.to_vector();

    let k1 = f(&x0)?;
    let k1x = dynamics_state_jacobian(&x0, wheelbase);
    let k1u = fu;

    let x2 = x0 + 0.5 * dt * k1;
    let a2 = dynamics_state_jacobian(&x2, wheelbase);
    let k2 = f(&x2)?;
    let k2x = a2 * (eye + 0.5 * dt * k1x);
    let k2u = a2 * (0.5 * dt * k1u) + fu;

    let x3 = x0 + 0.5 * dt * k2;
    let a3 = dynamics_state_jacobian(&x3, wheelbase);
    let k3 = f(&x3)?;
    let k3x = a3 * (eye + 0.5 * dt * k2x);
    let k3u = a3 * (0.5 * dt * k2u) + fu;

    let x4 = x0 + dt * k3;
    check_steering(x4[4])?;
    let a4 = dynamics_state_jacobian(&x4, wheelbase);
    let k4x = a4 * (eye + dt * k3x);
    let k4u = a4 * (dt * k3u) + fu;

    Ok((
        eye + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u),
    ))
}

/// Capsule of the car at state `x`, lying along its heading in the z = 0 plane.
pub fn car_pose_capsule(x: &CarState, length: f64, radius: f64) -> Result<Capsule> {
    Capsule::new(Pose::planar(Vector3::new(x.px, x.py, 0.0), x.psi), length, radius)
}

/// `dq/dψ` for `q = (cos ψ/2, 0, 0, sin ψ/2)`.
fn heading_quat_derivative(psi: f64) -> nalgebra::Vector4<f64> {
    nalgebra::Vector4::new(-0.5 * (0.5 * psi).sin(), 0.0, 0.0, 0.5 * (0.5 * psi).cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanWeights {
    /// Terminal position error.
    pub goal: f64,
    /// Terminal heading, speed and steering error.
    pub goal_state: f64,
    /// Control effort, per knot.
    pub control: f64,
    /// Initial collision penalty weight.
    pub penalty: f64,
}

impl Default for PlanWeights {
    fn default() -> Self {
        Self {
            goal: 100.0,
            goal_state: 10.0,
            control: 0.01,
            penalty: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub rounds: usize,
    pub inner_iterations: usize,
    pub penalty_growth: f64,
    pub armijo_c: f64,
    pub backtrack: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            rounds: 5,
            inner_iterations: 200,
            penalty_growth: 10.0,
            armijo_c: 1e-4,
            backtrack: 0.5,
        }
    }
}

/// A static capsule obstacle given by planar position, heading and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub length: f64,
    pub radius: f64,
}

impl Obstacle {
    pub fn capsule(&self) -> Result<Capsule> {
        Capsule::new(Pose::planar(Vector3::new(self.x, self.y, 0.0), self.heading), self.length, self.radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanProblem {
    pub x0: CarState,
    pub goal: CarState,
    pub knots: usize,
    pub dt: f64,
    pub wheelbase: f64,
    pub car_length: f64,
    pub car_radius: f64,
    pub obstacles: Vec<Obstacle>,
    pub weights: PlanWeights,
    pub gamma_max: f64,
    /// `(|u1|max, |u2|max)`
    pub u_bounds: [f64; 2],
    /// Required lower bound on φ at every knot.
    pub margin: f64,
    /// Allowed terminal position error (m).
    pub goal_tolerance: f64,
    pub optimizer: OptimizerSettings,
}

impl Default for PlanProblem {
    /// The obstructed-car scenario: drive from the left to a goal on the lower
    /// right with a bus-sized capsule parked across the direct path.
    fn default() -> Self {
        Self {
            x0: CarState::new(0.0, 0.0, 0.0, 0.0, 0.0),
            goal: CarState::new(10.0, -1.0, 0.0, 0.0, 0.0),
            knots: 60,
            dt: 0.1,
            wheelbase: 1.0,
            car_length: 1.0,
            car_radius: 0.3,
            obstacles: vec![Obstacle {
                x: 5.0,
                y: -0.5,
                heading: 0.3,
                length: 3.0,
                radius: 0.6,
            }],
            weights: PlanWeights::default(),
            gamma_max: 0.5,
            u_bounds: [4.0, 1.0],
            margin: 0.0,
            goal_tolerance: 0.1,
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl PlanProblem {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.knots < 2 {
            return bad(format!("need at least 2 knots, got {}", self.knots));
        }
        for (name, v) in [
            ("dt", self.dt),
            ("wheelbase", self.wheelbase),
            ("car_length", self.car_length),
            ("car_radius", self.car_radius),
            ("gamma_max", self.gamma_max),
            ("goal_tolerance", self.goal_tolerance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.gamma_max >= FRAC_PI_2 {
            return bad("gamma_max must be below π/2".into());
        }
        if self.u_bounds.iter().any(|b| !(*b > 0.0)) {
            return bad("control bounds must be positive".into());
        }
        if !self.margin.is_finite() || self.margin < 0.0 {
            return bad("margin must be non-negative".into());
        }
        if !self.x0.is_finite() || !self.goal.is_finite() {
            return bad("initial and goal states must be finite".into());
        }
        if self.x0.gamma.abs() > self.gamma_max {
            return bad("initial steering angle exceeds gamma_max".into());
        }
        if self.optimizer.rounds == 0 || !(self.optimizer.backtrack > 0.0 && self.optimizer.backtrack < 1.0) {
            return bad("optimizer needs at least one round and a backtrack factor in (0, 1)".into());
        }
        let car = Shape::from(car_pose_capsule(&self.x0, self.car_length, self.car_radius)?);
        for (i, obs) in self.obstacles.iter().enumerate() {
            let phi = proximity_with(&car, &obs.capsule()?.into(), &SolverOptions::default())?.phi;
            if phi <= 0.0 {
                return bad(format!("initial state collides with obstacle {i} (φ = {phi})"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub states: Vec<CarState>,
    /// `u1` acceleration, `u2` steering rate; one fewer than `states`.
    pub controls: Vec<Vector2<f64>>,
    /// Minimum φ over obstacles at each knot (`+∞` without obstacles).
    pub phis: Vec<f64>,
}

impl Trajectory {
    pub fn min_phi(&self) -> f64 {
        self.phis.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    /// Accepted optimizer steps over all rounds.
    pub iterations: usize,
    /// Objective after each accepted step, one list per penalty round (the
    /// first entry of each list is the value at the start of the round).
    pub objective_history: Vec<Vec<f64>>,
    pub goal_error: f64,
    /// Penalty term of the final objective, at the final weight.
    pub penalty: f64,
    pub final_penalty_weight: f64,
}

/// Rolls `controls` forward from `x0`.
pub fn rollout(problem: &PlanProblem, controls: &[Vector2<f64>]) -> Result<Vec<CarState>> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(problem.x0);
    for u in controls {
        let next = rk4_step(states.last().expect("nonempty"), u, problem.dt, problem.wheelbase)?;
        states.push(next);
    }
    Ok(states)
}

struct Evaluation {
    cost: f64,
    penalty: f64,
    states: Vec<CarState>,
    phis: Vec<f64>,
}

struct Objective<'a> {
    problem: &'a PlanProblem,
    obstacles: Vec<Shape>,
    options: SolverOptions,
}

impl<'a> Objective<'a> {
    fn new(problem: &'a PlanProblem, options: SolverOptions) -> Result<Self> {
        let obstacles = problem
            .obstacles
            .iter()
            .map(|o| o.capsule().map(Shape::from))
            .collect::<Result<_>>()?;
        Ok(Self {
            problem,
            obstacles,
            options,
        })
    }

    fn car(&self, x: &CarState) -> Result<Shape> {
        Ok(car_pose_capsule(x, self.problem.car_length, self.problem.car_radius)?.into())
    }

    fn terminal_cost(&self, x: &CarState) -> (f64, StateVec) {
        let w = &self.problem.weights;
        let err = x.to_vector() - self.problem.goal.to_vector();
        let weights = StateVec::new(w.goal, w.goal, w.goal_state, w.goal_state, w.goal_state);
        let cost = err.component_mul(&err).dot(&weights);
        (cost, 2.0 * err.component_mul(&weights))
    }

    fn gamma_violation(&self, gamma: f64) -> f64 {
        (gamma.abs() - self.problem.gamma_max).max(0.0)
    }

    fn evaluate(&self, controls: &[Vector2<f64>], rho: f64) -> Result<Evaluation> {
        let p = self.problem;
        let states = rollout(p, controls)?;
        let effort: f64 = controls.iter().map(|u| u.norm_squared()).sum::<f64>() * p.weights.control;
        let (terminal, _) = self.terminal_cost(states.last().expect("nonempty"));
        let mut penalty = 0.0;
        let mut phis = Vec::with_capacity(states.len());
        for x in &states {
            let car = self.car(x)?;
            let mut min_phi = f64::INFINITY;
            for obs in &self.obstacles {
                let phi = proximity_with(&car, obs, &self.options)?.phi;
                penalty += (p.margin - phi).max(0.0).powi(2);
                min_phi = min_phi.min(phi);
            }
            penalty += self.gamma_violation(x.gamma).powi(2);
            phis.push(min_phi);
        }
        Ok(Evaluation {
            cost: effort + terminal + rho * penalty,
            penalty,
            states,
            phis,
        })
    }

    fn collision_jacobian(&self, car: &Shape, obs: &Shape) -> Result<(f64, ProximityJacobians)> {
        match proximity_and_jacobians(car, obs, &self.options) {
            Ok((res, jac)) => Ok((res.phi, jac)),
            Err(Error::NonDifferentiable { .. }) => {
                let (res, jac) = envelope_jacobians(car, obs, &self.options)?;
                Ok((res.phi, jac))
            }
            Err(e) => Err(e),
        }
    }

    /// Gradient of the objective with respect to the controls, by a backward
    /// sweep through the rollout.
    fn gradient(&self, controls: &[Vector2<f64>], eval: &Evaluation, rho: f64) -> Result<Vec<Vector2<f64>>> {
        let p = self.problem;
        let states = &eval.states;
        let n = states.len();

        // ∂J/∂x_k from the penalty and terminal terms. Knot 0 is fixed.
        let mut state_grads = vec![StateVec::zeros(); n];
        for (k, x) in states.iter().enumerate().skip(1) {
            let car = self.car(x)?;
            for obs in &self.obstacles {
                if eval.phis[k] >= p.margin {
                    break;
                }
                let phi = proximity_with(&car, obs, &self.options)?.phi;
                let violation = p.margin - phi;
                if violation <= 0.0 {
                    continue;
                }
                let (_, jac) = self.collision_jacobian(&car, obs)?;
                let dq: RowVector4<f64> = jac.dphi_dq1;
                let dphi = StateVec::new(
                    jac.dphi_dr1[0],
                    jac.dphi_dr1[1],
                    dq.dot(&heading_quat_derivative(x.psi).transpose()),
                    0.0,
                    0.0,
                );
                state_grads[k] -= 2.0 * rho * violation * dphi;
            }
            let gv = self.gamma_violation(x.gamma);
            if gv > 0.0 {
                state_grads[k][4] += 2.0 * rho * gv * x.gamma.signum();
            }
        }
        let (_, terminal_grad) = self.terminal_cost(&states[n - 1]);
        state_grads[n - 1] += terminal_grad;

        let mut adjoint = state_grads[n - 1];
        let mut grads = vec![Vector2::zeros(); controls.len()];
        for k in (0..controls.len()).rev() {
            let (a, b) = rk4_jacobians(&states[k], &controls[k], p.dt, p.wheelbase)?;
            grads[k] = 2.0 * p.weights.control * controls[k] + b.transpose() * adjoint;
            adjoint = state_grads[k] + a.transpose() * adjoint;
        }
        Ok(grads)
    }

    fn project(&self, u: &Vector2<f64>) -> Vector2<f64> {
        let [b1, b2] = self.problem.u_bounds;
        Vector2::new(u[0].clamp(-b1, b1), u[1].clamp(-b2, b2))
    }
}

fn goal_error(problem: &PlanProblem, states: &[CarState]) -> f64 {
    (states.last().expect("nonempty").position() - problem.goal.position()).norm()
}

/// Plans a trajectory from `problem.x0` towards `problem.goal` that keeps
/// `φ >= margin` against every obstacle at every knot.
///
/// Fails with [`Error::PlanningFailure`], carrying the best trajectory found,
/// when the result still collides (`min φ < -1e-4`), misses the goal
/// tolerance, or exceeds the steering limit.
pub fn plan(problem: &PlanProblem) -> Result<PlanResult> {
    plan_with(problem, &SolverOptions::default())
}

/// [`plan`] with explicit proximity solver settings.
pub fn plan_with(problem: &PlanProblem, options: &SolverOptions) -> Result<PlanResult> {
    problem.validate()?;
    let objective = Objective::new(problem, *options)?;
    let settings = &problem.optimizer;

    let mut controls = vec![Vector2::zeros(); problem.knots - 1];
    let mut rho = problem.weights.penalty;
    let mut history = Vec::with_capacity(settings.rounds);
    let mut iterations = 0;
    let mut eval = objective.evaluate(&controls, rho)?;

    for round in 0..settings.rounds {
        if round > 0 {
            rho *= settings.penalty_growth;
            eval = objective.evaluate(&controls, rho)?;
        }
        let mut round_history = vec![eval.cost];
        let mut step: f64 = 1.0;
        for _ in 0..settings.inner_iterations {
            let grad = objective.gradient(&controls, &eval, rho)?;
            let mut alpha = (2.0 * step).min(1e3);
            let mut accepted = None;
            while alpha > 1e-14 {
                let trial: Vec<Vector2<f64>> = controls
                    .iter()
                    .zip(&grad)
                    .map(|(u, g)| objective.project(&(u - alpha * g)))
                    .collect();
                let decrease: f64 = trial
                    .iter()
                    .zip(&controls)
                    .zip(&grad)
                    .map(|((t, u), g)| g.dot(&(t - u)))
                    .sum();
                if decrease < 0.0 {
                    // A rollout that leaves the steering domain is a rejected step.
                    if let Ok(candidate) = objective.evaluate(&trial, rho) {
                        if candidate.cost <= eval.cost + settings.armijo_c * decrease {
                            accepted = Some((trial, candidate));
                            break;
                        }
                    }
                } else {
                    // Projection removed every descent component.
                    break;
                }
                alpha *= settings.backtrack;
            }
            let Some((trial, candidate)) = accepted else { break };
            let improvement = eval.cost - candidate.cost;
            controls = trial;
            eval = candidate;
            step = alpha;
            iterations += 1;
            round_history.push(eval.cost);
            if improvement <= 1e-12 * (1.0 + eval.cost.abs()) {
                break;
            }
        }
        history.push(round_history);
    }

    let goal_err = goal_error(problem, &eval.states);
    let trajectory = Trajectory {
        states: eval.states.clone(),
        controls,
        phis: eval.phis.clone(),
    };
    let min_phi = trajectory.min_phi() - problem.margin;
    let max_gamma = trajectory.states.iter().map(|x| x.gamma.abs()).fold(0.0, f64::max);

    let failure = if min_phi < PHI_FEASIBILITY_TOL {
        Some(format!("trajectory collides (min φ - margin = {min_phi:e})"))
    } else if goal_err > problem.goal_tolerance {
        Some(format!(
            "terminal position error {goal_err:.4} m exceeds tolerance {} m",
            problem.goal_tolerance
        ))
    } else if max_gamma > problem.gamma_max + 1e-6 {
        Some(format!("steering angle {max_gamma:.4} exceeds limit {}", problem.gamma_max))
    } else {
        None
    };
    if let Some(reason) = failure {
        return Err(Error::PlanningFailure {
            reason,
            best: Box::new(trajectory),
        });
    }
    Ok(PlanResult {
        trajectory,
        iterations,
        objective_history: history,
        goal_error: goal_err,
        penalty: eval.penalty,
        final_penalty_weight: rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dynamics_examples() {
        let at_rest = CarState::new(1.0, 2.0, 0.7, 0.0, 0.1);
        assert_eq!(car_dynamics(&at_rest, &Vector2::zeros(), 1.0).unwrap(), StateVec::zeros());

        let straight = CarState::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let d = car_dynamics(&straight, &Vector2::new(1.0, 0.1), 1.0).unwrap();
        assert_eq!(d, StateVec::new(1.0, 0.0, 0.0, 1.0, 0.1));

        let up = CarState::new(0.0, 0.0, FRAC_PI_2, 2.0, 0.0);
        let d = car_dynamics(&up, &Vector2::zeros(), 1.0).unwrap();
        assert!(d[0].abs() < 1e-15 && (d[1] - 2.0).abs() < 1e-15);

        let bad = CarState::new(0.0, 0.0, 0.0, 1.0, FRAC_PI_2);
        assert!(matches!(car_dynamics(&bad, &Vector2::zeros(), 1.0), Err(Error::InvalidState(_))));
    }

    #[test]
    fn rk4_examples() {
        let rest = CarState::new(1.0, -1.0, 0.3, 0.0, 0.0);
        assert_eq!(rk4_step(&rest, &Vector2::zeros(), 0.1, 1.0).unwrap(), rest);

        let moving = CarState::new(0.0, 0.0, 0.0, 1.0, 0.0);
        let next = rk4_step(&moving, &Vector2::zeros(), 0.1, 1.0).unwrap();
        assert!((next.px - 0.1).abs() < 1e-15);
        assert_eq!(next.py, 0.0);
    }

    fn integrate(x: &CarState, u: &Vector2<f64>, total: f64, dt: f64) -> CarState {
        let steps = (total / dt).round() as usize;
        (0..steps).fold(*x, |s, _| rk4_step(&s, u, dt, 1.0).unwrap())
    }

    #[test]
    fn rk4_is_fourth_order() {
        let x = CarState::new(0.0, 0.0, 0.2, 1.5, 0.1);
        let u = Vector2::new(0.5, 0.2);
        let reference = integrate(&x, &u, 1.0, 1e-4);
        let err = |dt: f64| (integrate(&x, &u, 1.0, dt).to_vector() - reference.to_vector()).norm();
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..20.0).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn rk4_jacobians_match_finite_differences() {
        let x = CarState::new(0.3, -0.2, 0.4, 1.2, 0.25);
        let u = Vector2::new(0.7, -0.3);
        let (a, b) = rk4_jacobians(&x, &u, 0.1, 1.0).unwrap();
        let h = 1e-6;
        for j in 0..5 {
            let mut xp = x.to_vector();
            let mut xm = x.to_vector();
            xp[j] += h;
            xm[j] -= h;
            let fp = rk4_step(&CarState::from_vector(&xp), &u, 0.1, 1.0).unwrap().to_vector();
            let fm = rk4_step(&CarState::from_vector(&xm), &u, 0.1, 1.0).unwrap().to_vector();
            assert!(((fp - fm) / (2.0 * h) - a.column(j)).amax() < 1e-8);
        }
        for j in 0..2 {
            let mut up = u;
            let mut um = u;
            up[j] += h;
            um[j] -= h;
            let fp = rk4_step(&x, &up, 0.1, 1.0).unwrap().to_vector();
            let fm = rk4_step(&x, &um, 0.1, 1.0).unwrap().to_vector();
            assert!(((fp - fm) / (2.0 * h) - b.column(j)).amax() < 1e-8);
        }
    }

    #[test]
    fn car_capsule_orientation() {
        let cap = car_pose_capsule(&CarState::new(0.0, 0.0, 0.0, 0.0, 0.0), 1.0, 0.3).unwrap();
        let (a, b) = cap.endpoints();
        assert!(((a - b).normalize() - Vector3::x()).amax() < 1e-15);

        let cap = car_pose_capsule(&CarState::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0), 1.0, 0.3).unwrap();
        let (a, b) = cap.endpoints();
        assert!(((a - b).normalize() - Vector3::y()).amax() < 1e-15);

        for psi in [-2.5, -0.4, 0.9, 3.0] {
            let cap = car_pose_capsule(&CarState::new(1.0, 2.0, psi, 0.0, 0.0), 1.0, 0.3).unwrap();
            let (a, b) = cap.endpoints();
            let axis = (a - b).normalize();
            assert!((axis - Vector3::new(psi.cos(), psi.sin(), 0.0)).amax() < 1e-12);
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let problem = PlanProblem {
            knots: 12,
            obstacles: vec![Obstacle { x: 1.0, y: 0.1, heading: 0.3, length: 1.0, radius: 0.3 }],
            ..PlanProblem::default()
        };
        let objective = Objective::new(&problem, SolverOptions::default()).unwrap();
        let controls: Vec<Vector2<f64>> = (0..11)
            .map(|k| Vector2::new(3.0 - 0.2 * k as f64, 0.1 * (k as f64).sin()))
            .collect();
        let rho = 10.0;
        let eval = objective.evaluate(&controls, rho).unwrap();
        assert!(eval.penalty > 0.0, "test needs an active penalty");
        let grad = objective.gradient(&controls, &eval, rho).unwrap();
        let h = 1e-6;
        for k in 0..controls.len() {
            for j in 0..2 {
                let mut up = controls.clone();
                let mut dn = controls.clone();
                up[k][j] += h;
                dn[k][j] -= h;
                let fd = (objective.evaluate(&up, rho).unwrap().cost - objective.evaluate(&dn, rho).unwrap().cost) / (2.0 * h);
                let tol = 1e-4 * (1.0 + fd.abs());
                assert!((fd - grad[k][j]).abs() < tol, "k={k} j={j}: fd {fd} vs {}", grad[k][j]);
            }
        }
    }

    #[test]
    fn rejects_invalid_problems() {
        let mut p = PlanProblem {
            knots: 1,
            ..PlanProblem::default()
        };
        assert!(p.validate().is_err());
        p.knots = 10;
        p.dt = 0.0;
        assert!(p.validate().is_err());
        p.dt = 0.1;
        p.x0 = CarState::new(5.0, -0.5, 0.0, 0.0, 0.0);
        assert!(p.validate().is_err(), "start inside the obstacle");
    }
}
