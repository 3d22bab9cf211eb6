//! Backward pass through a QP solution.
//!
//! Given `∂ℓ/∂x` at the optimum, the adjoint pair `(d_x, d_λ)` solves
//!
//! ```text
//! [ P   Gᵀ D(λ*)   ] [d_x]     [∂ℓ/∂x]
//! [ G   D(G x* - h)] [d_λ] = - [  0   ]
//! ```
//!
//! which is the transpose of the Jacobian of the stationarity and
//! complementarity conditions. Gradients with respect to the problem data then
//! follow in closed form.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::qp::{QpData, QpSolution};

/// A constraint with both `λ*_j` and `s*_j` at or below this is weakly active.
pub const WEAKLY_ACTIVE_TOL: f64 = 1e-9;

/// Below `max(λ*_j, s*_j) < NEAR_WEAK_TOL` the complementarity row gets a
/// small diagonal shift.
const NEAR_WEAK_TOL: f64 = 1e-6;
const NEAR_WEAK_SHIFT: f64 = 1e-12;

/// Relative curvature of `P` on the active null space below which the optimum
/// is treated as non-unique.
pub const UNIQUENESS_TOL: f64 = 1e-9;

/// Reciprocal condition number (smallest over largest singular value) below
/// which the backward system is treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardGrads {
    /// Symmetric; only the symmetric part of `P` enters the objective.
    pub dp: DMatrix<f64>,
    pub dg: DMatrix<f64>,
    pub dc: DVector<f64>,
    pub dh: DVector<f64>,
    pub dx: DVector<f64>,
    pub dlambda: DVector<f64>,
}

/// The optimum is unique (and the backward system well posed) only if `P` is
/// positive definite on the null space of the active constraint rows.
fn check_unique(data: &QpData, lambda: &DVector<f64>, gap: &DVector<f64>) -> Result<()> {
    let n = data.num_vars();
    let active: Vec<usize> = (0..lambda.len()).filter(|&j| -gap[j] < lambda[j]).collect();
    let z = if active.is_empty() {
        DMatrix::identity(n, n)
    } else {
        let ga = data.g.select_rows(&active);
        let svd = ga.svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&v| v > 1e-10 * smax).count();
        if rank >= n {
            return Ok(());
        }
        // Complete the row space to an orthonormal basis; the rest is the null space.
        let row_space = v_t.rows(0, rank).transpose();
        let projector = DMatrix::identity(n, n) - &row_space * row_space.transpose();
        let eig = projector.symmetric_eigen();
        let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
        eig.eigenvectors.select_columns(&cols)
    };
    let reduced = z.transpose() * &data.p * &z;
    let min_eig = reduced.symmetric_eigenvalues().min();
    if min_eig <= UNIQUENESS_TOL * data.p.amax().max(1.0) {
        return Err(Error::NonDifferentiable {
            constraint: None,
            reason: format!(
                "the optimum is not unique: cost is flat along a feasible direction (curvature {min_eig:e})"
            ),
        });
    }
    Ok(())
}

/// Gradients of `ℓ(x*)` with respect to `(P, G, c, h)`.
pub fn qp_backward(data: &QpData, sol: &QpSolution, dl_dx: &DVector<f64>) -> Result<BackwardGrads> {
    let n = data.num_vars();
    let l = data.num_constraints();
    if dl_dx.len() != n || sol.x.len() != n || sol.lambda.len() != l {
        return Err(Error::InvalidArgument(format!(
            "backward pass shape mismatch: n = {n}, l = {l}, ∂ℓ/∂x has {} entries",
            dl_dx.len()
        )));
    }
    if !dl_dx.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("∂ℓ/∂x must be finite".into()));
    }

    let x = &sol.x;
    let lambda = &sol.lambda;
    let gap = &data.g * x - &data.h;

    for j in 0..l {
        let lj = lambda[j].max(0.0);
        if lj <= WEAKLY_ACTIVE_TOL && gap[j].abs() <= WEAKLY_ACTIVE_TOL {
            return Err(Error::NonDifferentiable {
                constraint: Some(j),
                reason: format!(
                    "constraint is weakly active (λ = {:e}, slack = {:e})",
                    lambda[j], -gap[j]
                ),
            });
        }
    }

    check_unique(data, lambda, &gap)?;

    let mut m = DMatrix::zeros(n + l, n + l);
    m.view_mut((0, 0), (n, n)).copy_from(&data.p);
    for j in 0..l {
        for i in 0..n {
            m[(i, n + j)] = data.g[(j, i)] * lambda[j];
            m[(n + j, i)] = data.g[(j, i)];
        }
        let mut diag = gap[j];
        if lambda[j].max(-gap[j]) < NEAR_WEAK_TOL {
            diag -= NEAR_WEAK_SHIFT;
        }
        m[(n + j, n + j)] = diag;
    }

    let sv = m.clone().singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    if !(smax > 0.0) || smin < SINGULAR_RCOND * smax {
        return Err(Error::NonDifferentiable {
            constraint: None,
            reason: format!(
                "backward system is singular (rcond = {:e}); the optimum is not unique",
                if smax > 0.0 { smin / smax } else { 0.0 }
            ),
        });
    }

    let mut rhs = DVector::zeros(n + l);
    rhs.rows_mut(0, n).copy_from(&(-dl_dx));
    let sol_vec = m.lu().solve(&rhs).ok_or_else(|| Error::NonDifferentiable {
        constraint: None,
        reason: "backward system is singular".into(),
    })?;
    let dx = sol_vec.rows(0, n).into_owned();
    let dlambda = sol_vec.rows(n, l).into_owned();

    let dp = 0.5 * (&dx * x.transpose() + x * dx.transpose());
    let d_lam = lambda.component_mul(&dlambda);
    let dg = &d_lam * x.transpose() + lambda * dx.transpose();
    let dh = -d_lam;

    Ok(BackwardGrads {
        dp,
        dg,
        dc: dx.clone(),
        dh,
        dx,
        dlambda,
    })
}
