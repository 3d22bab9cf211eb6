//! Rigid-body poses and the two shape primitives.
//!
//! Quaternions are scalar-first Hamilton quaternions `(w, x, y, z)` that rotate
//! body-frame vectors into the world frame.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Matrix3x4, Vector2, Vector3, Vector4};

use crate::error::{Error, Result};

/// Allowed deviation of `‖q‖` from one.
pub const UNIT_QUAT_TOL: f64 = 1e-9;

/// Length used to represent a sphere as a capsule. A zero-length capsule has an
/// identically zero quadratic cost in the capsule-capsule QP.
pub const SPHERE_LENGTH: f64 = 1e-6;

fn check_unit(q: &Vector4<f64>) -> Result<()> {
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_QUAT_TOL {
        return Err(Error::InvalidArgument(format!(
            "quaternion must have unit norm, got ‖q‖ = {norm}"
        )));
    }
    Ok(())
}

/// Position and orientation of a rigid body in the world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    r: Vector3<f64>,
    q: Vector4<f64>,
}

impl Pose {
    /// Rejects quaternions whose norm is not one within [`UNIT_QUAT_TOL`].
    pub fn new(r: Vector3<f64>, q: Vector4<f64>) -> Result<Self> {
        if !r.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("position must be finite".into()));
        }
        check_unit(&q)?;
        Ok(Self { r, q })
    }

    /// Normalizes `q` instead of rejecting it.
    pub fn normalized(r: Vector3<f64>, q: Vector4<f64>) -> Result<Self> {
        let norm = q.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidArgument("quaternion must be nonzero".into()));
        }
        Self::new(r, q / norm)
    }

    pub fn identity() -> Self {
        Self {
            r: Vector3::zeros(),
            q: Vector4::new(1.0, 0.0, 0.0, 0.0),
        }
    }

    pub fn from_translation(r: Vector3<f64>) -> Self {
        Self {
            r,
            ..Self::identity()
        }
    }

    /// Rotation by `angle` radians about the world z axis, placed at `r`.
    pub fn planar(r: Vector3<f64>, angle: f64) -> Self {
        let half = 0.5 * angle;
        Self {
            r,
            q: Vector4::new(half.cos(), 0.0, 0.0, half.sin()),
        }
    }

    /// Skips the unit-norm check. Used for ambient finite differences in `q`.
    pub(crate) fn from_raw(r: Vector3<f64>, q: Vector4<f64>) -> Self {
        Self { r, q }
    }

    pub fn r(&self) -> Vector3<f64> {
        self.r
    }

    pub fn q(&self) -> Vector4<f64> {
        self.q
    }

    /// Rotation matrix of this pose. Uses the homogeneous quaternion formula,
    /// so it stays smooth when `q` is perturbed off the unit sphere.
    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_raw(&self.q)
    }

    /// Maps a body-frame point into the world frame.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r + self.rotation() * p
    }

    /// Applies the rigid transform `x ↦ rot·x + t` to this pose.
    pub fn premultiply(&self, rot: &Pose) -> Pose {
        Pose {
            r: rot.r + rot.rotation() * self.r,
            q: quat_mul(&rot.q, &self.q),
        }
    }
}

/// Hamilton product `a ⊗ b`, scalar first.
pub fn quat_mul(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector4<f64> {
    let (aw, ax, ay, az) = (a[0], a[1], a[2], a[3]);
    let (bw, bx, by, bz) = (b[0], b[1], b[2], b[3]);
    Vector4::new(
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )
}

pub(crate) fn rotation_raw(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        w * w + x * x - y * y - z * z,
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        w * w - x * x + y * y - z * z,
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        w * w - x * x - y * y + z * z,
    )
}

/// Derivative of column `k` of [`Pose::rotation`] with respect to the ambient
/// quaternion coordinates `(w, x, y, z)`.
pub(crate) fn rotation_column_jacobian(q: &Vector4<f64>, k: usize) -> Matrix3x4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let m = match k {
        0 => Matrix3x4::new(
            w, x, -y, -z, //
            z, y, x, w, //
            -y, z, -w, x,
        ),
        1 => Matrix3x4::new(
            -z, y, x, -w, //
            w, -x, y, -z, //
            x, w, z, y,
        ),
        2 => Matrix3x4::new(
            y, z, w, x, //
            -x, -w, z, y, //
            w, -x, -y, z,
        ),
        _ => panic!("rotation column index {k} out of range"),
    };
    2.0 * m
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_rotmat(q: &Vector4<f64>) -> Result<Matrix3<f64>> {
    check_unit(q)?;
    Ok(rotation_raw(q))
}

/// First two columns of the rotation matrix: the world-frame basis of a
/// polygon's plane.
pub fn basis_tangent_cols(q: &Vector4<f64>) -> Result<Matrix3x2<f64>> {
    Ok(quat_to_rotmat(q)?.fixed_columns::<2>(0).into_owned())
}

/// Endpoints `(a, b)` of a capsule's central segment. `a` lies along the body
/// +x axis, `b` along -x.
pub fn capsule_endpoints(pose: &Pose, length: f64) -> Result<(Vector3<f64>, Vector3<f64>)> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "capsule length must be positive, got {length}"
        )));
    }
    Ok(endpoints_unchecked(pose, length))
}

pub(crate) fn endpoints_unchecked(pose: &Pose, length: f64) -> (Vector3<f64>, Vector3<f64>) {
    let axis = pose.rotation().column(0) * (0.5 * length);
    (pose.r + axis, pose.r - axis)
}

/// Points within `radius` of a line segment of length `length` centered on the
/// pose origin and aligned with the body x axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Capsule {
    pub pose: Pose,
    length: f64,
    radius: f64,
}

impl Capsule {
    pub fn new(pose: Pose, length: f64, radius: f64) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "capsule length must be positive, got {length}"
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "capsule radius must be positive, got {radius}"
            )));
        }
        Ok(Self {
            pose,
            length,
            radius,
        })
    }

    /// A sphere, stored as a capsule of length [`SPHERE_LENGTH`].
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Result<Self> {
        Self::new(Pose::from_translation(center), SPHERE_LENGTH, radius)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn endpoints(&self) -> (Vector3<f64>, Vector3<f64>) {
        endpoints_unchecked(&self.pose, self.length)
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        Self {
            pose,
            ..self.clone()
        }
    }
}

/// A planar convex polygon `{y : C y <= d}` in the body xy-plane, padded by
/// `radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedPolygon {
    pub pose: Pose,
    c: DMatrix<f64>,
    d: DVector<f64>,
    radius: f64,
}

impl PaddedPolygon {
    /// Normalizes each halfspace row to unit length, then checks that the body
    /// origin is strictly inside and that the polygon is bounded.
    pub fn new(pose: Pose, c: DMatrix<f64>, d: DVector<f64>, radius: f64) -> Result<Self> {
        if c.ncols() != 2 {
            return Err(Error::InvalidArgument(format!(
                "halfspace matrix must have 2 columns, got {}",
                c.ncols()
            )));
        }
        if c.nrows() != d.len() {
            return Err(Error::InvalidArgument(format!(
                "halfspace matrix has {} rows but offset vector has {} entries",
                c.nrows(),
                d.len()
            )));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "padding radius must be positive, got {radius}"
            )));
        }
        let (c, d) = normalize_halfspaces(c, d)?;
        if let Some(i) = d.iter().position(|&di| di <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "halfspace {i} does not contain the origin strictly (d = {})",
                d[i]
            )));
        }
        if !is_bounded(&c) {
            return Err(Error::InvalidArgument(
                "halfspaces do not bound a polygon".into(),
            ));
        }
        Ok(Self { pose, c, d, radius })
    }

    /// Regular `n`-gon with circumradius `circumradius`.
    pub fn regular(pose: Pose, n: usize, circumradius: f64, radius: f64) -> Result<Self> {
        let (c, d) = regular_polygon(n, circumradius)?;
        Self::new(pose, c, d, radius)
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn num_sides(&self) -> usize {
        self.d.len()
    }

    /// World-frame basis of the polygon plane.
    pub fn tangent_basis(&self) -> Matrix3x2<f64> {
        self.pose.rotation().fixed_columns::<2>(0).into_owned()
    }

    pub fn with_pose(&self, pose: Pose) -> Self {
        Self {
            pose,
            ..self.clone()
        }
    }

    /// Polygon vertices in the body plane, counter-clockwise. Adjacent
    /// halfspaces are intersected after sorting normals by angle; redundant
    /// rows are skipped.
    pub fn vertices(&self) -> Vec<Vector2<f64>> {
        let mut rows: Vec<(f64, Vector2<f64>, f64)> = (0..self.c.nrows())
            .map(|i| {
                let n = Vector2::new(self.c[(i, 0)], self.c[(i, 1)]);
                (n.y.atan2(n.x), n, self.d[i])
            })
            .collect();
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let m = rows.len();
        let mut out = Vec::with_capacity(m);
        for i in 0..m {
            let (_, n1, d1) = rows[i];
            let (_, n2, d2) = rows[(i + 1) % m];
            let det = n1.x * n2.y - n1.y * n2.x;
            if det.abs() < 1e-14 {
                continue;
            }
            let v = Vector2::new((d1 * n2.y - d2 * n1.y) / det, (n1.x * d2 - n2.x * d1) / det);
            if polygon_contains(&self.c, &self.d, &v, 1e-9) {
                out.push(v);
            }
        }
        out
    }
}

fn normalize_halfspaces(
    mut c: DMatrix<f64>,
    mut d: DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    for i in 0..c.nrows() {
        let norm = (c[(i, 0)].powi(2) + c[(i, 1)].powi(2)).sqrt();
        if !(norm > 0.0 && norm.is_finite() && d[i].is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "halfspace {i} has a zero or non-finite normal"
            )));
        }
        c[(i, 0)] /= norm;
        c[(i, 1)] /= norm;
        d[i] /= norm;
    }
    Ok((c, d))
}

/// The recession cone `{y : C y <= 0}` is trivial iff consecutive normal
/// directions never leave an angular gap of π or more.
fn is_bounded(c: &DMatrix<f64>) -> bool {
    if c.nrows() < 3 {
        return false;
    }
    let mut angles: Vec<f64> = (0..c.nrows())
        .map(|i| c[(i, 1)].atan2(c[(i, 0)]))
        .collect();
    angles.sort_by(f64::total_cmp);
    let wrap = angles[0] + 2.0 * PI - angles[angles.len() - 1];
    let max_gap = angles
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(wrap, f64::max);
    max_gap < PI - 1e-12
}

/// Unit-normal halfspaces of a regular `n`-gon centered at the origin. Normals
/// point along angles `2πk/n`, so the first face is perpendicular to +x.
pub fn regular_polygon(n: usize, circumradius: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "a polygon needs at least 3 vertices, got {n}"
        )));
    }
    if !(circumradius > 0.0 && circumradius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "circumradius must be positive, got {circumradius}"
        )));
    }
    let apothem = circumradius * (PI / n as f64).cos();
    let c = DMatrix::from_fn(n, 2, |k, j| {
        let angle = 2.0 * PI * k as f64 / n as f64;
        if j == 0 {
            angle.cos()
        } else {
            angle.sin()
        }
    });
    Ok((c, DVector::from_element(n, apothem)))
}

/// Whether `C y <= d + tol` holds row by row.
pub fn polygon_contains(c: &DMatrix<f64>, d: &DVector<f64>, y: &Vector2<f64>, tol: f64) -> bool {
    (0..c.nrows()).all(|i| c[(i, 0)] * y.x + c[(i, 1)] * y.y <= d[i] + tol)
}
