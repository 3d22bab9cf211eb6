//! Primal-dual interior-point method with Mehrotra predictor-corrector steps.
//!
//! Each iteration solves the Newton system
//!
//! ```text
//! [ P    0     Gᵀ  ] [Δx]   [v1]
//! [ 0   D(λ)  D(s) ] [Δs] = [v2]
//! [ G    I     0   ] [Δλ]   [v3]
//! ```
//!
//! twice (affine, then centering-correcting) with one Cholesky factorization of
//! the reduced matrix `P + Gᵀ D(λ/s) G`.

use nalgebra::{DMatrix, DVector};

use super::cholesky::Cholesky;
use super::{kkt_residuals, QpData, QpSolution};
use crate::error::{Error, Result};

/// Relative residual above which one refinement step runs. The regularization
/// alone leaves a residual of `ε‖Δx‖`, which the step removes.
pub const REFINE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on `max(‖stationarity‖∞, ‖primal‖∞, sᵀλ/l)` at termination.
    pub tol: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary factor of the line search.
    pub step_fraction: f64,
    /// Diagonal shift added to `P + GᵀWG` before factoring.
    pub regularization: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 30,
            step_fraction: 0.99,
            regularization: 1e-10,
        }
    }
}

/// Cached factorization of `P + Gᵀ D(λ/s) G + εI` for one `(λ, s)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct KktFactor {
    chol: Cholesky,
}

impl KktFactor {
    pub fn new(
        p: &DMatrix<f64>,
        g: &DMatrix<f64>,
        lambda: &DVector<f64>,
        s: &DVector<f64>,
        regularization: f64,
    ) -> Result<Self> {
        let w = lambda.component_div(s);
        let mut gw = g.clone();
        for (i, mut row) in gw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut reduced = p + g.tr_mul(&gw);
        for i in 0..reduced.nrows() {
            reduced[(i, i)] += regularization;
        }
        Ok(Self {
            chol: Cholesky::factor(&reduced)?,
        })
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktStep {
    pub dx: DVector<f64>,
    pub ds: DVector<f64>,
    pub dlambda: DVector<f64>,
}

struct KktSystem<'a> {
    p: &'a DMatrix<f64>,
    g: &'a DMatrix<f64>,
    lambda: &'a DVector<f64>,
    s: &'a DVector<f64>,
}

impl KktSystem<'_> {
    /// Eliminates `Δs = v3 - GΔx` and `Δλ = (v2 - λ∘Δs)/s`, leaving
    /// `(P + GᵀWG) Δx = v1 + GᵀW(v3 - v2/λ)` with `W = D(λ/s)`.
    fn eliminate(&self, factor: &KktFactor, v1: &DVector<f64>, v2: &DVector<f64>, v3: &DVector<f64>) -> KktStep {
        let w = self.lambda.component_div(self.s);
        let inner = (v3 - v2.component_div(self.lambda)).component_mul(&w);
        let mut dx = v1 + self.g.tr_mul(&inner);
        factor.chol.solve_in_place(&mut dx);
        let ds = v3 - self.g * &dx;
        let dlambda = (v2 - self.lambda.component_mul(&ds)).component_div(self.s);
        KktStep { dx, ds, dlambda }
    }

    fn residual(&self, step: &KktStep, v1: &DVector<f64>, v2: &DVector<f64>, v3: &DVector<f64>) -> [DVector<f64>; 3] {
        [
            v1 - (self.p * &step.dx + self.g.tr_mul(&step.dlambda)),
            v2 - (self.lambda.component_mul(&step.ds) + self.s.component_mul(&step.dlambda)),
            v3 - (self.g * &step.dx + &step.ds),
        ]
    }
}

fn amax3(v: &[DVector<f64>; 3]) -> f64 {
    v.iter().map(|x| x.amax()).fold(0.0, f64::max)
}

/// Solves the interior-point Newton system for the right-hand side
/// `(v1, v2, v3)`. Passing `cached` skips the factorization; it must have been
/// built from the same `(P, G, λ, s)`.
///
/// One step of iterative refinement against the unregularized system runs when
/// the residual exceeds [`REFINE_TOL`]` · (1 + ‖v‖∞)`.
#[allow(clippy::too_many_arguments)]
pub fn pdip_kkt_solve(
    p: &DMatrix<f64>,
    g: &DMatrix<f64>,
    lambda: &DVector<f64>,
    s: &DVector<f64>,
    v1: &DVector<f64>,
    v2: &DVector<f64>,
    v3: &DVector<f64>,
    cached: Option<&KktFactor>,
) -> Result<(KktStep, KktFactor)> {
    kkt_solve_with(p, g, lambda, s, v1, v2, v3, cached, SolverOptions::default().regularization)
}

#[allow(clippy::too_many_arguments)]
fn kkt_solve_with(
    p: &DMatrix<f64>,
    g: &DMatrix<f64>,
    lambda: &DVector<f64>,
    s: &DVector<f64>,
    v1: &DVector<f64>,
    v2: &DVector<f64>,
    v3: &DVector<f64>,
    cached: Option<&KktFactor>,
    regularization: f64,
) -> Result<(KktStep, KktFactor)> {
    if s.iter().chain(lambda.iter()).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument(
            "slacks and multipliers must be strictly positive".into(),
        ));
    }
    let factor = match cached {
        Some(f) => f.clone(),
        None => KktFactor::new(p, g, lambda, s, regularization)?,
    };
    let sys = KktSystem { p, g, lambda, s };
    let mut step = sys.eliminate(&factor, v1, v2, v3);

    let scale = 1.0 + v1.amax().max(v2.amax()).max(v3.amax());
    let [r1, r2, r3] = sys.residual(&step, v1, v2, v3);
    if amax3(&[r1.clone(), r2.clone(), r3.clone()]) > REFINE_TOL * scale {
        let corr = sys.eliminate(&factor, &r1, &r2, &r3);
        step.dx += corr.dx;
        step.ds += corr.ds;
        step.dlambda += corr.dlambda;
    }
    Ok((step, factor))
}

/// Largest `α ∈ [0, 1]` keeping `v + α Δv >= 0`.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&vi, &d)| -vi / d)
        .fold(1.0, f64::min)
}

/// View of one interior-point iterate.
#[derive(Debug)]
pub struct Iterate<'a> {
    pub s: &'a DVector<f64>,
    pub lambda: &'a DVector<f64>,
    /// `sᵀλ / l`
    pub mu: f64,
}

#[derive(Debug, Clone, Default)]
pub struct PdipSolver {
    pub options: SolverOptions,
}

impl PdipSolver {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }

    pub fn solve(&self, data: &QpData) -> Result<QpSolution> {
        self.solve_traced(data, |_| {})
    }

    /// Like [`solve`](Self::solve), calling `on_iterate` on every iterate,
    /// including the final one, before any polishing.
    pub fn solve_traced(&self, data: &QpData, mut on_iterate: impl FnMut(&Iterate)) -> Result<QpSolution> {
        let opts = &self.options;
        let n = data.num_vars();
        let l = data.num_constraints();

        let mut x = DVector::zeros(n);
        let mut s = DVector::from_element(l, 1.0);
        let mut lambda = DVector::from_element(l, 1.0);
        let mut best: Option<QpSolution> = None;

        for iter in 0..=opts.max_iter {
            let res = kkt_residuals(data, &x, &s, &lambda);
            let mu = s.dot(&lambda) / l as f64;
            let merit = res.merit();
            on_iterate(&Iterate {
                s: &s,
                lambda: &lambda,
                mu,
            });

            if best.as_ref().map_or(true, |b| merit < b.kkt_residual) {
                best = Some(QpSolution {
                    x: x.clone(),
                    s: s.clone(),
                    lambda: lambda.clone(),
                    iterations: iter,
                    kkt_residual: merit,
                });
            }
            if merit <= opts.tol {
                return Ok(polish(data, best.expect("set above")));
            }
            if iter == opts.max_iter || !merit.is_finite() {
                break;
            }

            let factor = KktFactor::new(&data.p, &data.g, &lambda, &s, opts.regularization)?;

            // Predictor.
            let (aff, factor) = kkt_solve_with(
                &data.p,
                &data.g,
                &lambda,
                &s,
                &(-&res.stationarity),
                &(-&res.complementarity),
                &(-&res.primal),
                Some(&factor),
                opts.regularization,
            )?;
            let alpha_aff = max_step(&s, &aff.ds).min(max_step(&lambda, &aff.dlambda));
            let gap_aff = (&s + alpha_aff * &aff.ds).dot(&(&lambda + alpha_aff * &aff.dlambda));
            let sigma = (gap_aff / s.dot(&lambda)).powi(3);

            // Centering-corrector, reusing the factorization.
            let v2 = DVector::from_element(l, sigma * mu) - aff.ds.component_mul(&aff.dlambda);
            let (cc, _) = kkt_solve_with(
                &data.p,
                &data.g,
                &lambda,
                &s,
                &DVector::zeros(n),
                &v2,
                &DVector::zeros(l),
                Some(&factor),
                opts.regularization,
            )?;

            let dx = aff.dx + cc.dx;
            let ds = aff.ds + cc.ds;
            let dlambda = aff.dlambda + cc.dlambda;
            let alpha_max = max_step(&s, &ds).min(max_step(&lambda, &dlambda));
            let alpha = (opts.step_fraction * alpha_max).min(1.0);

            x += alpha * dx;
            s += alpha * ds;
            lambda += alpha * dlambda;
        }

        let best = best.expect("at least one iterate");
        Err(Error::NonConvergence {
            iterations: opts.max_iter,
            residual: best.kkt_residual,
            best: Box::new(best),
        })
    }
}

/// Re-solves the equality-constrained problem on the active set read off the
/// converged iterate (`λ_j > s_j`). Interior-point iterates stop with
/// multipliers of order `μ / s_j` on inactive constraints, which bias `x` by
/// roughly that over the curvature of `P`; the polished point removes the
/// bias. It is kept only if it is primal and dual feasible and its KKT merit
/// is no worse than the iterate's.
fn polish(data: &QpData, sol: QpSolution) -> QpSolution {
    let n = data.num_vars();
    let active: Vec<usize> = (0..data.num_constraints())
        .filter(|&j| sol.lambda[j] > sol.s[j])
        .collect();
    let k = active.len();
    if k > n {
        return sol;
    }
    let mut m = DMatrix::zeros(n + k, n + k);
    m.view_mut((0, 0), (n, n)).copy_from(&data.p);
    let mut rhs = DVector::zeros(n + k);
    rhs.rows_mut(0, n).copy_from(&(-&data.c));
    for (row, &j) in active.iter().enumerate() {
        for i in 0..n {
            m[(n + row, i)] = data.g[(j, i)];
            m[(i, n + row)] = data.g[(j, i)];
        }
        rhs[n + row] = data.h[j];
    }
    let Some(z) = m.full_piv_lu().solve(&rhs) else {
        return sol;
    };
    if !z.iter().all(|v| v.is_finite()) {
        return sol;
    }
    let x = z.rows(0, n).into_owned();
    let mut lambda = DVector::zeros(data.num_constraints());
    for (row, &j) in active.iter().enumerate() {
        lambda[j] = z[n + row];
    }
    let s = &data.h - &data.g * &x;
    let scale = 1.0 + data.h.amax();
    if lambda.iter().any(|&v| v < -POLISH_TOL * scale) || s.iter().any(|&v| v < -POLISH_TOL * scale) {
        return sol;
    }
    let lambda = lambda.map(|v| v.max(0.0));
    let s = s.map(|v| v.max(0.0));
    let merit = kkt_residuals(data, &x, &s, &lambda).merit();
    if merit <= sol.kkt_residual {
        QpSolution {
            x,
            s,
            lambda,
            iterations: sol.iterations,
            kkt_residual: merit,
        }
    } else {
        sol
    }
}

/// Feasibility slack allowed for a polished solution, relative to `1 + ‖h‖∞`.
const POLISH_TOL: f64 = 1e-12;

/// Solves `data` with default [`SolverOptions`].
pub fn pdip_solve(data: &QpData) -> Result<QpSolution> {
    PdipSolver::default().solve(data)
}
