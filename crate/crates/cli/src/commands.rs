use std::fmt::Write as _;
use std::path::Path;

use diffprox::planner::Trajectory;
use diffprox::{
    finite_diff_jacobians_with, plan_with, proximity_and_jacobians, proximity_with, PairKind, PlanProblem,
    SolverOptions,
};
use nalgebra::Vector3;
use serde::Serialize;

use crate::report::{emit, fmt_f64};
use crate::scene::load_pair;
use crate::CliError;

/// Absolute error below which a derivative entry passes regardless of scale.
pub const CHECKGRAD_ABS_TOL: f64 = 1e-8;
pub const CHECKGRAD_REL_TOL: f64 = 1e-4;

const COORDINATES: [&str; 14] = [
    "r1.x", "r1.y", "r1.z", "q1.w", "q1.x", "q1.y", "q1.z", "r2.x", "r2.y", "r2.z", "q2.w", "q2.x", "q2.y", "q2.z",
];

fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[derive(Serialize)]
struct SolverReport {
    iterations: usize,
    kkt_residual: f64,
    tol: f64,
}

#[derive(Serialize)]
struct ProximityReport<'a> {
    command: &'static str,
    bodies: [&'a str; 2],
    pair_kind: PairKind,
    phi: f64,
    collision: bool,
    distance: f64,
    p1: [f64; 3],
    p2: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    p1_surf: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p2_surf: Option<[f64; 3]>,
    solver: SolverReport,
}

pub fn proximity(scene: &Path, options: &SolverOptions) -> Result<(), CliError> {
    let (a, b) = load_pair(scene)?;
    let res = proximity_with(&a.shape, &b.shape, options)?;
    emit(&ProximityReport {
        command: "proximity",
        bodies: [&a.name, &b.name],
        pair_kind: res.pair_kind,
        phi: res.phi,
        collision: res.in_collision(),
        distance: res.distance(),
        p1: arr3(&res.p1),
        p2: arr3(&res.p2),
        p1_surf: res.p1_surf.as_ref().map(arr3),
        p2_surf: res.p2_surf.as_ref().map(arr3),
        solver: SolverReport {
            iterations: res.qp.iterations,
            kkt_residual: res.qp.kkt_residual,
            tol: options.tol,
        },
    });
    Ok(())
}

#[derive(Serialize)]
struct JacobianReport<'a> {
    command: &'static str,
    bodies: [&'a str; 2],
    phi: f64,
    dphi_dr1: [f64; 3],
    dphi_dq1: [f64; 4],
    dphi_dr2: [f64; 3],
    dphi_dq2: [f64; 4],
    /// `‖∂φ/∂r1 + ∂φ/∂r2‖∞`, zero up to roundoff.
    translation_residual: f64,
}

pub fn jacobians(scene: &Path, options: &SolverOptions) -> Result<(), CliError> {
    let (a, b) = load_pair(scene)?;
    let (res, jac) = proximity_and_jacobians(&a.shape, &b.shape, options)?;
    let f = jac.flatten();
    emit(&JacobianReport {
        command: "jacobians",
        bodies: [&a.name, &b.name],
        phi: res.phi,
        dphi_dr1: [f[0], f[1], f[2]],
        dphi_dq1: [f[3], f[4], f[5], f[6]],
        dphi_dr2: [f[7], f[8], f[9]],
        dphi_dq2: [f[10], f[11], f[12], f[13]],
        translation_residual: (jac.dphi_dr1 + jac.dphi_dr2).amax(),
    });
    Ok(())
}

#[derive(Serialize)]
struct CheckEntry {
    command: &'static str,
    coordinate: &'static str,
    analytic: f64,
    finite_difference: f64,
    abs_error: f64,
    rel_error: f64,
    pass: bool,
}

#[derive(Serialize)]
struct CheckSummary {
    command: &'static str,
    step: f64,
    max_abs_error: f64,
    max_rel_error: f64,
    rel_tol: f64,
    pass: bool,
}

/// Error relative to the larger magnitude, with the scale floored so that
/// entries within the absolute tolerance count as passing.
fn relative_error(analytic: f64, fd: f64) -> f64 {
    let scale = analytic.abs().max(fd.abs()).max(CHECKGRAD_ABS_TOL / CHECKGRAD_REL_TOL);
    (analytic - fd).abs() / scale
}

pub fn checkgrad(scene: &Path, step: f64, options: &SolverOptions) -> Result<(), CliError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(CliError::Validation(format!("--step must be positive, got {step}")));
    }
    let (a, b) = load_pair(scene)?;
    let (_, jac) = proximity_and_jacobians(&a.shape, &b.shape, options)?;
    let fd = finite_diff_jacobians_with(&a.shape, &b.shape, step, options)?;
    let (mut max_abs, mut max_rel) = (0.0f64, 0.0f64);
    for ((name, x), y) in COORDINATES.iter().zip(jac.flatten()).zip(fd.flatten()) {
        let abs_error = (x - y).abs();
        let rel_error = relative_error(x, y);
        max_abs = max_abs.max(abs_error);
        max_rel = max_rel.max(rel_error);
        emit(&CheckEntry {
            command: "checkgrad",
            coordinate: name,
            analytic: x,
            finite_difference: y,
            abs_error,
            rel_error,
            pass: rel_error <= CHECKGRAD_REL_TOL,
        });
    }
    let pass = max_rel <= CHECKGRAD_REL_TOL;
    emit(&CheckSummary {
        command: "checkgrad",
        step,
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        rel_tol: CHECKGRAD_REL_TOL,
        pass,
    });
    if !pass {
        eprintln!(
            "warning: max relative error {} exceeds {}; the step {step} may be too coarse",
            fmt_f64(max_rel),
            CHECKGRAD_REL_TOL
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PlanSummary<'a> {
    command: &'static str,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
    min_phi: f64,
    goal_error: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    penalty: Option<f64>,
    knots: usize,
    dt: f64,
    margin: f64,
    obstacles: usize,
    out: String,
}

fn load_problem(path: &Path) -> Result<PlanProblem, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Validation(format!(
            "{}: invalid config (line {}, column {}): {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

/// Columns `k,t,px,py,psi,v,gamma,u1,u2,phi`; the controls of the last knot are empty.
pub fn trajectory_csv(traj: &Trajectory, dt: f64) -> String {
    let mut out = String::from("k,t,px,py,psi,v,gamma,u1,u2,phi\n");
    for (k, (x, phi)) in traj.states.iter().zip(&traj.phis).enumerate() {
        let (u1, u2) = traj
            .controls
            .get(k)
            .map(|u| (fmt_f64(u[0]), fmt_f64(u[1])))
            .unwrap_or_default();
        writeln!(
            out,
            "{k},{},{},{},{},{},{},{u1},{u2},{}",
            fmt_f64(k as f64 * dt),
            fmt_f64(x.px),
            fmt_f64(x.py),
            fmt_f64(x.psi),
            fmt_f64(x.v),
            fmt_f64(x.gamma),
            fmt_f64(*phi)
        )
        .expect("write to string");
    }
    out
}

fn write_csv(path: &Path, traj: &Trajectory, dt: f64) -> Result<(), CliError> {
    std::fs::write(path, trajectory_csv(traj, dt))
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

pub fn plan(config: &Path, out: &Path, options: &SolverOptions) -> Result<(), CliError> {
    let problem = load_problem(config)?;
    let summary = |status, reason, traj: &Trajectory| PlanSummary {
        command: "plan",
        status,
        reason,
        min_phi: traj.min_phi(),
        goal_error: traj
            .states
            .last()
            .map(|x| (x.position() - problem.goal.position()).norm())
            .unwrap_or(f64::NAN),
        iterations: None,
        final_objective: None,
        penalty: None,
        knots: problem.knots,
        dt: problem.dt,
        margin: problem.margin,
        obstacles: problem.obstacles.len(),
        out: out.display().to_string(),
    };
    match plan_with(&problem, options) {
        Ok(result) => {
            write_csv(out, &result.trajectory, problem.dt)?;
            emit(&PlanSummary {
                goal_error: result.goal_error,
                iterations: Some(result.iterations),
                final_objective: result.objective_history.last().and_then(|h| h.last().copied()),
                penalty: Some(result.penalty),
                ..summary("ok", None, &result.trajectory)
            });
            Ok(())
        }
        Err(diffprox::Error::PlanningFailure { reason, best }) => {
            write_csv(out, &best, problem.dt)?;
            emit(&summary("failed", Some(&reason), &best));
            Err(CliError::Planning(format!(
                "planning failed: {reason}; best trajectory written to {}",
                out.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}
