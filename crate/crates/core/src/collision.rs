//! Proximity queries between capsules and padded polygons.
//!
//! Every pair reduces to finding the closest points between two convex sets
//! parameterized by a primal vector `x`, where the difference of the points is
//! affine: `p1 - p2 = F x + g`. Eliminating the points gives a QP with
//! `P = FᵀF` and `c = Fᵀg`. The proximity value is
//! `φ = ‖p1 - p2‖² - (R1 + R2)²`, positive when the shapes are separated.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3x2, Matrix3x4, RowVector3, RowVector4, Vector2, Vector3};
use serde::Serialize;

use crate::active_set::{active_set_2d, box_constraints};
use crate::diff_qp::qp_backward;
use crate::error::{Error, Result};
use crate::geometry::{rotation_column_jacobian, Capsule, PaddedPolygon, Pose};
use crate::qp::{PdipSolver, QpData, QpSolution, SolverOptions};

/// Below this separation the surface points are left undefined.
pub const SURFACE_POINT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Capsule(Capsule),
    Polygon(PaddedPolygon),
}

impl Shape {
    pub fn pose(&self) -> &Pose {
        match self {
            Shape::Capsule(c) => &c.pose,
            Shape::Polygon(p) => &p.pose,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            Shape::Capsule(c) => c.radius(),
            Shape::Polygon(p) => p.radius(),
        }
    }

    pub fn with_pose(&self, pose: Pose) -> Shape {
        match self {
            Shape::Capsule(c) => Shape::Capsule(c.with_pose(pose)),
            Shape::Polygon(p) => Shape::Polygon(p.with_pose(pose)),
        }
    }
}

impl From<Capsule> for Shape {
    fn from(c: Capsule) -> Self {
        Shape::Capsule(c)
    }
}

impl From<PaddedPolygon> for Shape {
    fn from(p: PaddedPolygon) -> Self {
        Shape::Polygon(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PairKind {
    CapsuleCapsule,
    PolygonPolygon,
    CapsulePolygon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityResult {
    /// Squared distance between the inner primitives minus `(R1 + R2)²`.
    pub phi: f64,
    /// Closest point on body 1's segment or polygon.
    pub p1: Vector3<f64>,
    pub p2: Vector3<f64>,
    /// Closest points on the padded surfaces; `None` when `p1 ≈ p2`.
    pub p1_surf: Option<Vector3<f64>>,
    pub p2_surf: Option<Vector3<f64>>,
    pub qp: QpSolution,
    pub pair_kind: PairKind,
}

impl ProximityResult {
    pub fn in_collision(&self) -> bool {
        self.phi <= 0.0
    }

    /// Distance between the inner primitives.
    pub fn distance(&self) -> f64 {
        (self.p1 - self.p2).norm()
    }
}

/// Total derivatives of φ with respect to both poses. Quaternion derivatives
/// are taken in ambient 4-space with no tangent projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityJacobians {
    pub dphi_dr1: RowVector3<f64>,
    pub dphi_dq1: RowVector4<f64>,
    pub dphi_dr2: RowVector3<f64>,
    pub dphi_dq2: RowVector4<f64>,
}

impl ProximityJacobians {
    /// The 14 entries in the order `r1, q1, r2, q2`.
    pub fn flatten(&self) -> [f64; 14] {
        let mut out = [0.0; 14];
        out[0..3].copy_from_slice(self.dphi_dr1.as_slice());
        out[3..7].copy_from_slice(self.dphi_dq1.as_slice());
        out[7..10].copy_from_slice(self.dphi_dr2.as_slice());
        out[10..14].copy_from_slice(self.dphi_dq2.as_slice());
        out
    }

    fn swapped(self) -> Self {
        Self {
            dphi_dr1: self.dphi_dr2,
            dphi_dq1: self.dphi_dq2,
            dphi_dr2: self.dphi_dr1,
            dphi_dq2: self.dphi_dq1,
        }
    }
}

fn cost_from_f(f: &DMatrix<f64>, g: &Vector3<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let p = f.tr_mul(f);
    let c = f.tr_mul(&DVector::from_column_slice(g.as_slice()));
    (p, c)
}

fn check_segment(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<()> {
    if (a - b).norm() == 0.0 {
        return Err(Error::InvalidArgument("segment endpoints coincide".into()));
    }
    Ok(())
}

fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

fn stack(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

fn columns(cols: &[Vector3<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(3, cols.len(), |i, j| cols[j][i])
}

/// QP over `θ = (θ1, θ2)` for the segments `θ1 a1 + (1-θ1) b1` and
/// `θ2 a2 + (1-θ2) b2`, with `F = [a1 - b1, b2 - a2]` and `g = b1 - b2`.
pub fn capsule_capsule_qp(a1: &Vector3<f64>, b1: &Vector3<f64>, a2: &Vector3<f64>, b2: &Vector3<f64>) -> Result<QpData> {
    check_segment(a1, b1)?;
    check_segment(a2, b2)?;
    let f = columns(&[a1 - b1, b2 - a2]);
    let (p, c) = cost_from_f(&f, &(b1 - b2));
    let (g, h) = box_constraints();
    QpData::new(p, c, g, h)
}

/// QP over `(y1, y2)` for points `r_i + Q̃_i y_i` with `C_i y_i <= d_i`.
#[allow(clippy::too_many_arguments)]
pub fn polygon_polygon_qp(
    r1: &Vector3<f64>,
    basis1: &Matrix3x2<f64>,
    r2: &Vector3<f64>,
    basis2: &Matrix3x2<f64>,
    c1: &DMatrix<f64>,
    d1: &DVector<f64>,
    c2: &DMatrix<f64>,
    d2: &DVector<f64>,
) -> Result<QpData> {
    let f = columns(&[
        basis1.column(0).into_owned(),
        basis1.column(1).into_owned(),
        -basis2.column(0),
        -basis2.column(1),
    ]);
    let (p, c) = cost_from_f(&f, &(r1 - r2));
    QpData::new(p, c, block_diag(c1, c2), stack(d1, d2))
}

/// QP over `(θ1, y2)`: a segment against a polygon.
pub fn capsule_polygon_qp(
    a1: &Vector3<f64>,
    b1: &Vector3<f64>,
    r2: &Vector3<f64>,
    basis2: &Matrix3x2<f64>,
    c2: &DMatrix<f64>,
    d2: &DVector<f64>,
) -> Result<QpData> {
    check_segment(a1, b1)?;
    let f = columns(&[a1 - b1, -basis2.column(0), -basis2.column(1)]);
    let (p, c) = cost_from_f(&f, &(b1 - r2));
    let bounds = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
    let h = stack(&DVector::from_vec(vec![1.0, 0.0]), d2);
    QpData::new(p, c, block_diag(&bounds, c2), h)
}

/// One body's contribution to `p1 - p2 = F x + g`: its point is
/// `offset + Σ_k cols[k] x_k`.
struct BodyTerms {
    cols: Vec<Vector3<f64>>,
    offset: Vector3<f64>,
    /// `∂cols[k]/∂q`
    col_jacs: Vec<Matrix3x4<f64>>,
    /// `∂offset/∂q`; `∂offset/∂r` is the identity for every body type.
    offset_jac: Matrix3x4<f64>,
}

impl BodyTerms {
    fn of(shape: &Shape) -> Self {
        let pose = shape.pose();
        let q = pose.q();
        match shape {
            Shape::Capsule(cap) => {
                let (a, b) = cap.endpoints();
                let j0 = rotation_column_jacobian(&q, 0);
                BodyTerms {
                    cols: vec![a - b],
                    offset: b,
                    col_jacs: vec![j0 * cap.length()],
                    offset_jac: j0 * (-0.5 * cap.length()),
                }
            }
            Shape::Polygon(poly) => {
                let basis = poly.tangent_basis();
                BodyTerms {
                    cols: vec![basis.column(0).into_owned(), basis.column(1).into_owned()],
                    offset: pose.r(),
                    col_jacs: vec![rotation_column_jacobian(&q, 0), rotation_column_jacobian(&q, 1)],
                    offset_jac: Matrix3x4::zeros(),
                }
            }
        }
    }

    fn point(&self, x: &[f64]) -> Vector3<f64> {
        self.cols
            .iter()
            .zip(x)
            .fold(self.offset, |acc, (col, &xi)| acc + col * xi)
    }
}

/// A pair ordered so that a capsule always comes first in mixed pairs.
struct Pair<'a> {
    first: &'a Shape,
    second: &'a Shape,
    swapped: bool,
    kind: PairKind,
}

impl<'a> Pair<'a> {
    fn new(a: &'a Shape, b: &'a Shape) -> Self {
        match (a, b) {
            (Shape::Capsule(_), Shape::Capsule(_)) => Pair { first: a, second: b, swapped: false, kind: PairKind::CapsuleCapsule },
            (Shape::Polygon(_), Shape::Polygon(_)) => Pair { first: a, second: b, swapped: false, kind: PairKind::PolygonPolygon },
            (Shape::Capsule(_), Shape::Polygon(_)) => Pair { first: a, second: b, swapped: false, kind: PairKind::CapsulePolygon },
            (Shape::Polygon(_), Shape::Capsule(_)) => Pair { first: b, second: a, swapped: true, kind: PairKind::CapsulePolygon },
        }
    }

    fn qp_data(&self) -> Result<QpData> {
        match (self.first, self.second) {
            (Shape::Capsule(c1), Shape::Capsule(c2)) => {
                let (a1, b1) = c1.endpoints();
                let (a2, b2) = c2.endpoints();
                capsule_capsule_qp(&a1, &b1, &a2, &b2)
            }
            (Shape::Polygon(p1), Shape::Polygon(p2)) => polygon_polygon_qp(
                &p1.pose.r(),
                &p1.tangent_basis(),
                &p2.pose.r(),
                &p2.tangent_basis(),
                p1.c(),
                p1.d(),
                p2.c(),
                p2.d(),
            ),
            (Shape::Capsule(c1), Shape::Polygon(p2)) => {
                let (a1, b1) = c1.endpoints();
                capsule_polygon_qp(&a1, &b1, &p2.pose.r(), &p2.tangent_basis(), p2.c(), p2.d())
            }
            (Shape::Polygon(_), Shape::Capsule(_)) => unreachable!("pairs are reordered capsule-first"),
        }
    }

    fn solve(&self, data: &QpData, options: &SolverOptions) -> Result<QpSolution> {
        let solver = PdipSolver::new(*options);
        if self.kind == PairKind::CapsuleCapsule {
            let p = Matrix2::new(data.p[(0, 0)], data.p[(0, 1)], data.p[(1, 0)], data.p[(1, 1)]);
            let c = Vector2::new(data.c[0], data.c[1]);
            match active_set_2d(&p, &c) {
                Ok((x, lambda)) => {
                    let x = DVector::from_column_slice(x.as_slice());
                    return Ok(QpSolution::from_primal_dual(data, x, DVector::from_column_slice(lambda.as_slice()), 0));
                }
                Err(Error::Degenerate(_)) => {}
                Err(e) => return Err(e),
            }
        }
        solver.solve(data)
    }
}

/// Everything one solve produces, in capsule-first order.
struct Solved {
    terms1: BodyTerms,
    terms2: BodyTerms,
    f: DMatrix<f64>,
    g: Vector3<f64>,
    data: QpData,
    sol: QpSolution,
    p1: Vector3<f64>,
    p2: Vector3<f64>,
}

fn solve_pair(pair: &Pair, options: &SolverOptions) -> Result<Solved> {
    let data = pair.qp_data()?;
    let sol = pair.solve(&data, options)?;
    let terms1 = BodyTerms::of(pair.first);
    let terms2 = BodyTerms::of(pair.second);
    let n1 = terms1.cols.len();
    let cols: Vec<Vector3<f64>> = terms1
        .cols
        .iter()
        .copied()
        .chain(terms2.cols.iter().map(|c| -c))
        .collect();
    let f = columns(&cols);
    let g = terms1.offset - terms2.offset;
    let p1 = terms1.point(&sol.x.as_slice()[..n1]);
    let p2 = terms2.point(&sol.x.as_slice()[n1..]);
    Ok(Solved { terms1, terms2, f, g, data, sol, p1, p2 })
}

fn surface_points(p1: &Vector3<f64>, p2: &Vector3<f64>, r1: f64, r2: f64) -> (Option<Vector3<f64>>, Option<Vector3<f64>>) {
    let delta = p2 - p1;
    let dist = delta.norm();
    if dist < SURFACE_POINT_TOL {
        return (None, None);
    }
    let dir = delta / dist;
    (Some(p1 + dir * r1), Some(p2 - dir * r2))
}

fn assemble_result(pair: &Pair, solved: Solved) -> ProximityResult {
    let (r1, r2) = (pair.first.radius(), pair.second.radius());
    let phi = (solved.p1 - solved.p2).norm_squared() - (r1 + r2).powi(2);
    let (s1, s2) = surface_points(&solved.p1, &solved.p2, r1, r2);
    let result = ProximityResult {
        phi,
        p1: solved.p1,
        p2: solved.p2,
        p1_surf: s1,
        p2_surf: s2,
        qp: solved.sol,
        pair_kind: pair.kind,
    };
    if pair.swapped {
        ProximityResult {
            p1: result.p2,
            p2: result.p1,
            p1_surf: result.p2_surf,
            p2_surf: result.p1_surf,
            ..result
        }
    } else {
        result
    }
}

pub fn proximity(a: &Shape, b: &Shape) -> Result<ProximityResult> {
    proximity_with(a, b, &SolverOptions::default())
}

/// Capsule pairs go through the closed-form active-set solver, falling back to
/// the interior-point solver when the axes are parallel. Pairs involving a
/// polygon always use the interior-point solver.
pub fn proximity_with(a: &Shape, b: &Shape, options: &SolverOptions) -> Result<ProximityResult> {
    let pair = Pair::new(a, b);
    let solved = solve_pair(&pair, options)?;
    Ok(assemble_result(&pair, solved))
}

/// Assembles `dφ/d(r, q)` from the primal point. With `include_backward`, the
/// implicit sensitivities of `x*` through `(P, c)` are added; `G` and `h` do
/// not depend on the poses.
fn jacobians_from(solved: &Solved, include_backward: bool) -> Result<ProximityJacobians> {
    let n1 = solved.terms1.cols.len();
    let x = &solved.sol.x;
    let e = &solved.f * x + DVector::from_column_slice(solved.g.as_slice());
    let e = Vector3::new(e[0], e[1], e[2]);

    // Weights on ∂F and ∂g: direct partials of φ at fixed x.
    let mut w_f = (2.0 * e) * x.transpose();
    let mut w_g = 2.0 * e;

    if include_backward {
        let dl_dx = 2.0 * solved.f.tr_mul(&DVector::from_column_slice(e.as_slice()));
        let grads = qp_backward(&solved.data, &solved.sol, &dl_dx)?;
        let g_col = DVector::from_column_slice(solved.g.as_slice());
        w_f += 2.0 * &solved.f * &grads.dp + &g_col * grads.dc.transpose();
        let fdc = &solved.f * &grads.dc;
        w_g += Vector3::new(fdc[0], fdc[1], fdc[2]);
    }

    let body_q = |terms: &BodyTerms, start: usize| -> RowVector4<f64> {
        let mut acc = w_g.transpose() * terms.offset_jac;
        for (k, jac) in terms.col_jacs.iter().enumerate() {
            let w: Vector3<f64> = w_f.column(start + k).fixed_rows::<3>(0).into_owned();
            acc += w.transpose() * jac;
        }
        acc
    };

    Ok(ProximityJacobians {
        dphi_dr1: w_g.transpose(),
        dphi_dq1: body_q(&solved.terms1, 0),
        dphi_dr2: -w_g.transpose(),
        dphi_dq2: -body_q(&solved.terms2, n1),
    })
}

pub fn proximity_jacobians(a: &Shape, b: &Shape) -> Result<ProximityJacobians> {
    Ok(proximity_and_jacobians(a, b, &SolverOptions::default())?.1)
}

/// Solves once and returns both the proximity result and its pose Jacobians.
pub fn proximity_and_jacobians(a: &Shape, b: &Shape, options: &SolverOptions) -> Result<(ProximityResult, ProximityJacobians)> {
    let pair = Pair::new(a, b);
    let solved = solve_pair(&pair, options)?;
    let jac = jacobians_from(&solved, true)?;
    let jac = if pair.swapped { jac.swapped() } else { jac };
    Ok((assemble_result(&pair, solved), jac))
}

/// Pose derivatives of φ holding the primal solution fixed.
///
/// At any minimizer this is a valid (sub)gradient of φ, including at points
/// where the closest points are not unique and the full Jacobian does not
/// exist; it agrees with [`proximity_jacobians`] wherever that succeeds.
pub fn envelope_jacobians(a: &Shape, b: &Shape, options: &SolverOptions) -> Result<(ProximityResult, ProximityJacobians)> {
    let pair = Pair::new(a, b);
    let solved = solve_pair(&pair, options)?;
    let jac = jacobians_from(&solved, false)?;
    let jac = if pair.swapped { jac.swapped() } else { jac };
    Ok((assemble_result(&pair, solved), jac))
}

/// Central differences of φ in every pose coordinate. Quaternions are
/// perturbed in ambient 4-space without renormalization.
pub fn finite_diff_jacobians(a: &Shape, b: &Shape, step: f64) -> Result<ProximityJacobians> {
    finite_diff_jacobians_with(a, b, step, &SolverOptions::default())
}

pub fn finite_diff_jacobians_with(a: &Shape, b: &Shape, step: f64, options: &SolverOptions) -> Result<ProximityJacobians> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    let phi_at = |which: usize, coord: usize, delta: f64| -> Result<f64> {
        let shape = if which == 0 { a } else { b };
        let pose = shape.pose();
        let (mut r, mut q) = (pose.r(), pose.q());
        if coord < 3 {
            r[coord] += delta;
        } else {
            q[coord - 3] += delta;
        }
        let moved = shape.with_pose(Pose::from_raw(r, q));
        let phi = if which == 0 {
            proximity_with(&moved, b, options)?.phi
        } else {
            proximity_with(a, &moved, options)?.phi
        };
        Ok(phi)
    };
    let mut grads = [[0.0; 7]; 2];
    for (which, out) in grads.iter_mut().enumerate() {
        for (coord, slot) in out.iter_mut().enumerate() {
            *slot = (phi_at(which, coord, step)? - phi_at(which, coord, -step)?) / (2.0 * step);
        }
    }
    Ok(ProximityJacobians {
        dphi_dr1: RowVector3::from_row_slice(&grads[0][..3]),
        dphi_dq1: RowVector4::from_row_slice(&grads[0][3..]),
        dphi_dr2: RowVector3::from_row_slice(&grads[1][..3]),
        dphi_dq2: RowVector4::from_row_slice(&grads[1][3..]),
    })
}
