//! Closed-form solver for two-variable QPs on the unit box `[0, 1]²`.
//!
//! The minimizer is either the unconstrained one, the minimizer along one of
//! the four edges, or a corner. All nine candidates are cheap to evaluate.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::qp::{QpData, QpSolution};

/// Dual entries with `|y| < DUAL_DEADZONE` are treated as zero.
pub const DUAL_DEADZONE: f64 = 1e-12;

/// Denominators below this (relative to the diagonal scale) mark `P` as
/// degenerate.
pub const PIVOT_TOL: f64 = 1e-11;

/// Candidate coordinates this far outside `[0, 1]` are clamped back in.
const BOX_TOL: f64 = 1e-12;

fn objective(p: &Matrix2<f64>, c: &Vector2<f64>, x: &Vector2<f64>) -> f64 {
    0.5 * x.dot(&(p * x)) + c.dot(x)
}

fn clamp_into_box(v: f64) -> Option<f64> {
    if (-BOX_TOL..=1.0 + BOX_TOL).contains(&v) {
        Some(v.clamp(0.0, 1.0))
    } else {
        None
    }
}

/// Minimizes `½ xᵀPx + cᵀx` over `0 <= x <= 1`. Returns the primal point and
/// the multipliers of `[I; -I] x <= (1, 1, 0, 0)`.
///
/// Fails with [`Error::Degenerate`] when `P` is not safely positive definite,
/// which happens for parallel capsule axes.
pub fn active_set_2d(p: &Matrix2<f64>, c: &Vector2<f64>) -> Result<(Vector2<f64>, Vector4<f64>)> {
    let (p11, p12, p22) = (p[(0, 0)], p[(0, 1)], p[(1, 1)]);
    if (p12 - p[(1, 0)]).abs() > 1e-12 * (1.0 + p.amax()) {
        return Err(Error::InvalidArgument("P is not symmetric".into()));
    }
    let det = p11 * p22 - p12 * p12;
    let scale = 1.0f64.max(p11 * p22);
    if !(p11 > PIVOT_TOL && p22 > PIVOT_TOL && det > PIVOT_TOL * scale) {
        return Err(Error::Degenerate(format!(
            "cost matrix is not positive definite (P11 = {p11:e}, P22 = {p22:e}, det = {det:e})"
        )));
    }

    let unconstrained = Vector2::new(p22 * c[0] - p12 * c[1], p11 * c[1] - p12 * c[0]) / -det;
    if unconstrained.iter().all(|v| (0.0..=1.0).contains(v)) {
        return Ok((unconstrained, Vector4::zeros()));
    }

    let candidates = [
        (Some(1.0), clamp_into_box(-(p12 + c[1]) / p22)),
        (Some(0.0), clamp_into_box(-c[1] / p22)),
        (clamp_into_box(-(p12 + c[0]) / p11), Some(1.0)),
        (clamp_into_box(-c[0] / p11), Some(0.0)),
        (Some(0.0), Some(0.0)),
        (Some(0.0), Some(1.0)),
        (Some(1.0), Some(0.0)),
        (Some(1.0), Some(1.0)),
    ];
    // Strict `<` keeps the lowest index on ties.
    let mut best: Option<(f64, Vector2<f64>)> = None;
    for (x1, x2) in candidates {
        let (Some(x1), Some(x2)) = (x1, x2) else { continue };
        let x = Vector2::new(x1, x2);
        let cost = objective(p, c, &x);
        if best.map_or(true, |(b, _)| cost < b) {
            best = Some((cost, x));
        }
    }
    let (_, x) = best.expect("corners are always feasible");
    Ok((x, recover_duals(&x, p, c)))
}

/// Multipliers of the box constraints from an optimal primal point, via
/// `y = -P x - c`: positive entries go to the upper bounds, negative entries
/// to the lower bounds, and anything within [`DUAL_DEADZONE`] of zero is zero.
pub fn recover_duals(x: &Vector2<f64>, p: &Matrix2<f64>, c: &Vector2<f64>) -> Vector4<f64> {
    let y = -(p * x) - c;
    let mut lambda = Vector4::zeros();
    for i in 0..2 {
        if y[i] >= DUAL_DEADZONE {
            lambda[i] = y[i];
        }
        if y[i] <= -DUAL_DEADZONE {
            lambda[i + 2] = -y[i];
        }
    }
    lambda
}

/// `G = [I; -I]` for the unit box.
pub fn box_constraints() -> (DMatrix<f64>, DVector<f64>) {
    (
        DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
        DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]),
    )
}

/// Runs [`active_set_2d`] on a QP whose constraints are the unit box, packing
/// the result as a [`QpSolution`].
pub fn solve_box_qp(data: &QpData) -> Result<QpSolution> {
    let (g, h) = box_constraints();
    if data.num_vars() != 2 || data.g != g || data.h != h {
        return Err(Error::InvalidArgument(
            "active-set solver needs a 2-variable unit-box QP".into(),
        ));
    }
    let p = Matrix2::new(data.p[(0, 0)], data.p[(0, 1)], data.p[(1, 0)], data.p[(1, 1)]);
    let c = Vector2::new(data.c[0], data.c[1]);
    let (x, lambda) = active_set_2d(&p, &c)?;
    Ok(QpSolution::from_primal_dual(
        data,
        DVector::from_column_slice(x.as_slice()),
        DVector::from_column_slice(lambda.as_slice()),
        0,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qp::pdip_solve;
    use proptest::prelude::*;

    fn box_data(p: &Matrix2<f64>, c: &Vector2<f64>) -> QpData {
        let (g, h) = box_constraints();
        QpData::new(
            DMatrix::from_column_slice(2, 2, p.as_slice()),
            DVector::from_column_slice(c.as_slice()),
            g,
            h,
        )
        .unwrap()
    }

    #[test]
    fn interior_minimizer() {
        let (x, l) = active_set_2d(&Matrix2::new(2.0, 0.0, 0.0, 2.0), &Vector2::new(-1.0, -1.0)).unwrap();
        assert_eq!(x, Vector2::new(0.5, 0.5));
        assert_eq!(l, Vector4::zeros());
    }

    #[test]
    fn upper_corner() {
        let (x, l) = active_set_2d(&Matrix2::identity(), &Vector2::new(-4.0, -4.0)).unwrap();
        assert_eq!(x, Vector2::new(1.0, 1.0));
        assert_eq!(l, Vector4::new(3.0, 3.0, 0.0, 0.0));
    }

    #[test]
    fn lower_corner() {
        let (x, l) = active_set_2d(&Matrix2::identity(), &Vector2::new(1.0, 1.0)).unwrap();
        assert_eq!(x, Vector2::zeros());
        assert_eq!(l, Vector4::new(0.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn recover_duals_examples() {
        let p = Matrix2::identity();
        assert_eq!(
            recover_duals(&Vector2::new(1.0, 1.0), &p, &Vector2::new(-4.0, -4.0)),
            Vector4::new(3.0, 3.0, 0.0, 0.0)
        );
        assert_eq!(
            recover_duals(&Vector2::zeros(), &p, &Vector2::new(1.0, 1.0)),
            Vector4::new(0.0, 0.0, 1.0, 1.0)
        );
        assert_eq!(
            recover_duals(&Vector2::new(0.25, 0.5), &p, &Vector2::new(-0.25, -0.5)),
            Vector4::zeros()
        );
    }

    #[test]
    fn deadzone_suppresses_tiny_multipliers() {
        let p = Matrix2::identity();
        let x = Vector2::new(1.0, 0.0);
        // y = (5e-13, -5e-13) sits inside the dead zone.
        let l = recover_duals(&x, &p, &Vector2::new(-1.0 - 5e-13, 5e-13));
        assert_eq!(l, Vector4::zeros());
        // Exactly at the threshold counts.
        let l = recover_duals(&x, &p, &Vector2::new(-1.0 - 1e-12, 0.0));
        assert!(l[0] > 0.0);
    }

    #[test]
    fn singular_p_is_degenerate() {
        let p = Matrix2::new(4.0, -4.0, -4.0, 4.0);
        assert!(matches!(active_set_2d(&p, &Vector2::new(1.0, 0.0)), Err(Error::Degenerate(_))));
        assert!(matches!(active_set_2d(&Matrix2::zeros(), &Vector2::zeros()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn edge_solution_satisfies_kkt() {
        let p = Matrix2::new(2.0, 0.5, 0.5, 1.0);
        let c = Vector2::new(-5.0, -0.2);
        let (x, lambda) = active_set_2d(&p, &c).unwrap();
        assert_eq!(x[0], 1.0);
        let data = box_data(&p, &c);
        let sol = QpSolution::from_primal_dual(
            &data,
            DVector::from_column_slice(x.as_slice()),
            DVector::from_column_slice(lambda.as_slice()),
            0,
        );
        assert!(sol.kkt_residual <= 1e-9);
    }

    fn spd() -> impl Strategy<Value = Matrix2<f64>> {
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0)
            .prop_map(|(a, b, c, d)| {
                let m = Matrix2::new(a, b, c, d);
                m.transpose() * m + Matrix2::identity() * 0.05
            })
    }

    proptest! {
        #[test]
        fn beats_every_candidate(p in spd(), c1 in -5.0f64..5.0, c2 in -5.0f64..5.0) {
            let c = Vector2::new(c1, c2);
            let (x, _) = active_set_2d(&p, &c).unwrap();
            prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            let f = objective(&p, &c, &x);
            // Dense grid over the box is a superset of the candidate corners.
            for i in 0..=20 {
                for j in 0..=20 {
                    let y = Vector2::new(i as f64 / 20.0, j as f64 / 20.0);
                    prop_assert!(f <= objective(&p, &c, &y) + 1e-12);
                }
            }
        }

        #[test]
        fn agrees_with_interior_point(p in spd(), c1 in -5.0f64..5.0, c2 in -5.0f64..5.0) {
            let c = Vector2::new(c1, c2);
            let data = box_data(&p, &c);
            let exact = solve_box_qp(&data).unwrap();
            let ipm = pdip_solve(&data).unwrap();
            prop_assert!((data.objective(&exact.x) - data.objective(&ipm.x)).abs() <= 1e-9);
            prop_assert!(exact.residuals(&data).merit() <= 1e-9);
        }
    }
}
