//! Inequality-constrained convex QPs
//!
//! ```text
//! minimize    ½ xᵀ P x + cᵀ x
//! subject to  G x <= h
//! ```
//!
//! with slack `s = h - G x >= 0` and multipliers `λ >= 0`.

mod cholesky;
mod pdip;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub use cholesky::{cholesky_solve, Cholesky, PIVOT_TOL};
pub use pdip::{pdip_kkt_solve, pdip_solve, Iterate, KktFactor, KktStep, PdipSolver, SolverOptions, REFINE_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct QpData {
    pub p: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl QpData {
    /// Checks shapes and symmetry of `p`.
    pub fn new(p: DMatrix<f64>, c: DVector<f64>, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let n = c.len();
        let l = h.len();
        if n == 0 || l == 0 {
            return Err(Error::InvalidArgument(
                "QP needs at least one variable and one constraint".into(),
            ));
        }
        if p.shape() != (n, n) || g.shape() != (l, n) {
            return Err(Error::InvalidArgument(format!(
                "inconsistent QP shapes: P {:?}, c {n}, G {:?}, h {l}",
                p.shape(),
                g.shape()
            )));
        }
        let scale = 1.0 + p.amax();
        if (&p - p.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidArgument("P is not symmetric".into()));
        }
        Ok(Self { p, c, g, h })
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.c.dot(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub lambda: DVector<f64>,
    pub iterations: usize,
    /// `max(‖stationarity‖∞, ‖primal‖∞, sᵀλ/l)` at the returned point.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktResiduals {
    /// `P x + c + Gᵀ λ`
    pub stationarity: DVector<f64>,
    /// `s ∘ λ`
    pub complementarity: DVector<f64>,
    /// `G x + s - h`
    pub primal: DVector<f64>,
}

impl KktResiduals {
    /// The solver's convergence measure: stationarity, primal feasibility and
    /// the duality measure `sᵀλ/l`.
    pub fn merit(&self) -> f64 {
        let mu = self.complementarity.sum() / self.complementarity.len() as f64;
        self.stationarity.amax().max(self.primal.amax()).max(mu)
    }
}

pub fn kkt_residuals(data: &QpData, x: &DVector<f64>, s: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
    KktResiduals {
        stationarity: &data.p * x + &data.c + data.g.tr_mul(lambda),
        complementarity: s.component_mul(lambda),
        primal: &data.g * x + s - &data.h,
    }
}

impl QpSolution {
    /// Builds a solution record from a primal/dual pair, with `s = h - G x`.
    pub fn from_primal_dual(data: &QpData, x: DVector<f64>, lambda: DVector<f64>, iterations: usize) -> Self {
        let s = &data.h - &data.g * &x;
        let kkt_residual = kkt_residuals(data, &x, &s, &lambda).merit();
        Self {
            x,
            s,
            lambda,
            iterations,
            kkt_residual,
        }
    }

    pub fn residuals(&self, data: &QpData) -> KktResiduals {
        kkt_residuals(data, &self.x, &self.s, &self.lambda)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn box_qp(c: [f64; 2]) -> QpData {
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        QpData::new(
            DMatrix::identity(2, 2),
            DVector::from_column_slice(&c),
            g,
            DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]),
        )
        .unwrap()
    }

    #[test]
    fn origin_feasible_point_has_zero_residuals() {
        let data = box_qp([0.0, 0.0]);
        let r = kkt_residuals(&data, &DVector::zeros(2), &data.h.clone(), &DVector::zeros(4));
        assert_eq!(r.stationarity.amax(), 0.0);
        assert_eq!(r.complementarity.amax(), 0.0);
        assert_eq!(r.primal.amax(), 0.0);
    }

    #[test]
    fn clipped_corner_residuals() {
        let data = box_qp([-4.0, -4.0]);
        let x = DVector::from_vec(vec![1.0, 1.0]);
        let s = DVector::from_vec(vec![0.0, 0.0, 1.0, 1.0]);
        let lambda = DVector::from_vec(vec![3.0, 3.0, 0.0, 0.0]);
        let r = kkt_residuals(&data, &x, &s, &lambda);
        assert_eq!(r.merit(), 0.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        let g = DMatrix::zeros(3, 2);
        assert!(QpData::new(DMatrix::identity(2, 2), DVector::zeros(2), g, DVector::zeros(4)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QpData::new(asym, DVector::zeros(2), DMatrix::zeros(1, 2), DVector::zeros(1)).is_err());
        assert!(QpData::new(DMatrix::zeros(0, 0), DVector::zeros(0), DMatrix::zeros(1, 0), DVector::zeros(1)).is_err());
    }
}
