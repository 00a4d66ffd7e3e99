//! Two-view epipolar geometry.
//!
//! Cameras follow the world-to-camera convention `X_cam = R X + t` and the
//! relative pose of a pair maps camera-1 coordinates into camera 2, so that
//! `P1 = K1 [I | 0]` and `P2 = K2 [R | t]`. Pixel coordinates are continuous:
//! pixel `(i, j)` covers `[i, i + 1) x [j, j + 1)` and its centre sits at
//! `(i + 0.5, j + 0.5)`.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector3, Vector4};
use thiserror::Error;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;
pub type Point3 = nalgebra::Point3<f64>;

/// Translations shorter than this (in scene units) carry no epipolar constraint.
pub const BASELINE_EPSILON: f64 = 1e-8;

/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("baseline {0:e} is below the degenerate threshold (pure rotation)")]
    DegenerateBaseline(f64),
    #[error("query point is the epipole: F x vanishes")]
    EpipoleQuery,
    #[error("line has vanishing normal (a, b)")]
    DegenerateLine,
    #[error("point at infinity (w = 0)")]
    PointAtInfinity,
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("cheirality vote is ambiguous ({0} points in front for two candidates)")]
    AmbiguousCheirality(usize),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("matrix is not a proper rotation")]
    InvalidRotation,
    #[error("fundamental matrix is zero or non-finite")]
    InvalidFundamental,
    #[error("pose file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for GeometryError {
    fn from(e: std::io::Error) -> Self {
        GeometryError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, GeometryError>;

/// Homogeneous image point `(u, v, w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomPoint2 {
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

impl HomPoint2 {
    pub fn new(u: f64, v: f64, w: f64) -> Self {
        Self { u, v, w }
    }

    /// Finite point with `w = 1`.
    pub fn pixel(u: f64, v: f64) -> Self {
        Self { u, v, w: 1.0 }
    }

    pub fn from_vector(v: &Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(self) -> Vec3 {
        Vec3::new(self.u, self.v, self.w)
    }

    /// Rescaled so that `w = 1`.
    pub fn normalized(self) -> Result<Self> {
        if self.w == 0.0 || !self.w.is_finite() {
            return Err(GeometryError::PointAtInfinity);
        }
        Ok(Self::pixel(self.u / self.w, self.v / self.w))
    }

    /// Inhomogeneous coordinates.
    pub fn xy(self) -> Result<[f64; 2]> {
        let p = self.normalized()?;
        Ok([p.u, p.v])
    }
}

/// Image line `a u + b v + c w = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2 {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn from_vector(v: &Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn to_vector(self) -> Vec3 {
        Vec3::new(self.a, self.b, self.c)
    }

    pub fn normal_norm(&self) -> f64 {
        self.a.hypot(self.b)
    }
}

/// Pinhole intrinsics with zero skew.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn identity() -> Self {
        Self { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if !(self.fx.is_finite() && self.fy.is_finite() && self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics("non-finite entry"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Rotation plus translation. Used both for world-to-camera poses and for the
/// camera-1-to-camera-2 relative pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativePose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RelativePose {
    /// Validates `RᵀR = I` and `det R = +1`.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        check_rotation(&rotation)?;
        if !translation.iter().all(|x| x.is_finite()) {
            return Err(GeometryError::DegenerateConfiguration("non-finite translation"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self { rotation: q.to_rotation_matrix().into_inner(), translation }
    }

    /// Copy with the translation scaled to unit norm.
    pub fn with_unit_translation(&self) -> Result<Self> {
        let n = self.translation.norm();
        if n <= BASELINE_EPSILON {
            return Err(GeometryError::DegenerateBaseline(n));
        }
        Ok(Self { rotation: self.rotation, translation: self.translation / n })
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RelativePose) -> RelativePose {
        RelativePose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RelativePose {
        let rt = self.rotation.transpose();
        RelativePose { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform(&self, x: &Point3) -> Point3 {
        Point3::from(self.rotation * x.coords + self.translation)
    }
}

pub fn check_rotation(r: &Mat3) -> Result<()> {
    let err = (r.transpose() * r - Mat3::identity()).abs().max();
    if !(err < ROTATION_TOLERANCE) || (r.determinant() - 1.0).abs() >= ROTATION_TOLERANCE {
        return Err(GeometryError::InvalidRotation);
    }
    Ok(())
}

/// Rotation angle of `r` in radians.
pub fn rotation_angle(r: &Mat3) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into_inner()
}

/// A calibrated camera with a world-to-camera pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: RelativePose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: RelativePose) -> Self {
        Self { intrinsics, pose }
    }

    /// `P = K [R | t]`.
    pub fn projection_matrix(&self) -> nalgebra::Matrix3x4<f64> {
        let mut rt = nalgebra::Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.pose.rotation);
        rt.set_column(3, &self.pose.translation);
        self.intrinsics.matrix() * rt
    }

    pub fn centre(&self) -> Point3 {
        Point3::from(-(self.pose.rotation.transpose() * self.pose.translation))
    }

    /// Unit ray direction (world frame) through pixel `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        let k = &self.intrinsics;
        let d_cam = Vec3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        (self.pose.rotation.transpose() * d_cam).normalize()
    }

    /// Optical axis in the world frame.
    pub fn forward(&self) -> Vec3 {
        self.pose.rotation.row(2).transpose()
    }
}

/// Pose of camera 2 relative to camera 1.
pub fn relative_pose(cam1: &Camera, cam2: &Camera) -> RelativePose {
    cam2.pose.compose(&cam1.pose.inverse())
}

/// `[t]ₓ`, the matrix form of `v ↦ t × v`.
pub fn cross_matrix(t: &Vec3) -> Mat3 {
    Mat3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// A 3×3 matrix relating the two views through `x₂ᵀ F x₁ = 0`.
///
/// The stored matrix is kept as given; [`FundamentalMatrix::canonical`]
/// produces the unit-Frobenius, positive-largest-entry representative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix {
    m: Mat3,
}

impl FundamentalMatrix {
    pub fn new(m: Mat3) -> Result<Self> {
        let n = m.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(GeometryError::InvalidFundamental);
        }
        Ok(Self { m })
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn transpose(&self) -> Self {
        Self { m: self.m.transpose() }
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.m * s)
    }

    /// Frobenius norm 1, largest-magnitude entry positive (first in row-major
    /// order on exact ties).
    pub fn canonical(&self) -> Self {
        Self { m: canonicalize(&self.m) }
    }

    /// `|det|` of the Frobenius-normalized matrix.
    pub fn normalized_det(&self) -> f64 {
        (self.m / self.m.norm()).determinant().abs()
    }

    pub fn is_rank2(&self) -> bool {
        self.normalized_det() < 1e-9
    }

    /// Largest entry difference between canonical forms, minimized over the
    /// overall sign so near-ties in the largest entry do not matter.
    pub fn max_abs_diff(&self, other: &FundamentalMatrix) -> f64 {
        let a = self.m / self.m.norm();
        let b = other.m / other.m.norm();
        (a - b).abs().max().min((a + b).abs().max())
    }

    /// Right null vector (the epipole in image 1).
    pub fn right_epipole(&self) -> Vec3 {
        let svd = self.m.svd(false, true);
        let v_t = svd.v_t.expect("requested v_t");
        let (idx, _) = svd.singular_values.argmin();
        v_t.row(idx).transpose()
    }
}

impl fmt::Display for FundamentalMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.m;
        for r in 0..3 {
            writeln!(f, "{:.12e} {:.12e} {:.12e}", m[(r, 0)], m[(r, 1)], m[(r, 2)])?;
        }
        Ok(())
    }
}

pub(crate) fn canonicalize(m: &Mat3) -> Mat3 {
    let n = m.norm();
    let mut out = m / n;
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for r in 0..3 {
        for c in 0..3 {
            let a = out[(r, c)].abs();
            if a > best_abs {
                best_abs = a;
                best = r * 3 + c;
            }
        }
    }
    if out[(best / 3, best % 3)] < 0.0 {
        out = -out;
    }
    out
}

/// `F = K₂⁻ᵀ [t]ₓ R K₁⁻¹`, canonicalized.
pub fn fundamental_from_pose(
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    pose: &RelativePose,
) -> Result<FundamentalMatrix> {
    let tn = pose.translation.norm();
    if !(tn > BASELINE_EPSILON) {
        return Err(GeometryError::DegenerateBaseline(tn));
    }
    let e = cross_matrix(&pose.translation) * pose.rotation;
    let f = k2.inverse_matrix().transpose() * e * k1.inverse_matrix();
    Ok(FundamentalMatrix::new(f)?.canonical())
}

/// Calibrated counterpart of the fundamental matrix (`E = [t]ₓ R`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix {
    pub m: Mat3,
}

impl EssentialMatrix {
    pub fn from_pose(pose: &RelativePose) -> Result<Self> {
        let tn = pose.translation.norm();
        if !(tn > BASELINE_EPSILON) {
            return Err(GeometryError::DegenerateBaseline(tn));
        }
        Ok(Self { m: cross_matrix(&pose.translation) * pose.rotation })
    }

    /// `E = K₂ᵀ F K₁`.
    pub fn from_fundamental(f: &FundamentalMatrix, k1: &CameraIntrinsics, k2: &CameraIntrinsics) -> Self {
        Self { m: k2.matrix().transpose() * f.matrix() * k1.matrix() }
    }

    pub fn singular_values(&self) -> Vec3 {
        let mut s = self.m.singular_values();
        s.as_mut_slice().sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    }

    /// Whether the singular values are `(s, s, 0)` up to relative `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let s = self.singular_values();
        s[0] > 0.0 && (s[0] - s[1]).abs() <= tol * s[0] && s[2] <= tol * s[0]
    }

    pub fn as_fundamental(&self) -> Result<FundamentalMatrix> {
        FundamentalMatrix::new(self.m)
    }
}

/// Epipolar line `l₁₂ = F x₁` in image 2.
pub fn epipolar_line(f: &FundamentalMatrix, x1: &HomPoint2) -> Result<Line2> {
    let x = x1.to_vector();
    let l = f.matrix() * x;
    if l.norm() <= 1e-13 * f.matrix().norm() * x.norm() {
        return Err(GeometryError::EpipoleQuery);
    }
    Ok(Line2::from_vector(&l))
}

/// `x₂ᵀ F x₁`.
pub fn epipolar_residual(f: &FundamentalMatrix, x1: &HomPoint2, x2: &HomPoint2) -> f64 {
    x2.to_vector().dot(&(f.matrix() * x1.to_vector()))
}

/// Perpendicular distance from `x` to `l`.
pub fn point_line_distance(l: &Line2, x: &HomPoint2) -> Result<f64> {
    let nn = l.normal_norm();
    if !(nn > 0.0) {
        return Err(GeometryError::DegenerateLine);
    }
    let p = x.normalized()?;
    Ok((l.a * p.u + l.b * p.v + l.c).abs() / nn)
}

/// Squared symmetric epipolar distance
/// `r² · (1/‖(Fx₁)₁,₂‖² + 1/‖(Fᵀx₂)₁,₂‖²)` with both points taken at `w = 1`.
pub fn symmetric_epipolar_distance_sq(f: &FundamentalMatrix, x1: &HomPoint2, x2: &HomPoint2) -> Result<f64> {
    let p1 = x1.normalized()?.to_vector();
    let p2 = x2.normalized()?.to_vector();
    let l2 = f.matrix() * p1;
    let l1 = f.matrix().tr_mul(&p2);
    let d2 = l2.x * l2.x + l2.y * l2.y;
    let d1 = l1.x * l1.x + l1.y * l1.y;
    if !(d1 > 0.0) || !(d2 > 0.0) {
        return Err(GeometryError::DegenerateLine);
    }
    let r = p2.dot(&l2);
    Ok(r * r * (1.0 / d2 + 1.0 / d1))
}

/// `K⁻¹ x` with `w = 1`.
pub fn normalize_point(k: &CameraIntrinsics, x: &HomPoint2) -> Result<HomPoint2> {
    let p = x.normalized()?;
    Ok(HomPoint2::pixel((p.u - k.cx) / k.fx, (p.v - k.cy) / k.fy))
}

/// Inverse of [`normalize_point`].
pub fn denormalize_point(k: &CameraIntrinsics, x: &HomPoint2) -> Result<HomPoint2> {
    let p = x.normalized()?;
    Ok(HomPoint2::pixel(p.u * k.fx + k.cx, p.v * k.fy + k.cy))
}

/// Projects a world point; returns the pixel and its depth along the optical axis.
pub fn project(camera: &Camera, x: &Point3) -> Result<(HomPoint2, f64)> {
    if !(x.x.is_finite() && x.y.is_finite() && x.z.is_finite()) {
        return Err(GeometryError::DegenerateConfiguration("non-finite point"));
    }
    let xc = camera.pose.transform(x);
    let depth = xc.z;
    if !(depth > 0.0) {
        return Err(GeometryError::BehindCamera(depth));
    }
    let k = &camera.intrinsics;
    Ok((HomPoint2::pixel(k.fx * xc.x / depth + k.cx, k.fy * xc.y / depth + k.cy), depth))
}

/// Linear triangulation. The DLT system is assembled in normalized image
/// coordinates (`[R | t]` per camera), which is the same least-squares problem
/// up to a per-row scaling and is much better conditioned than the pixel form.
pub fn triangulate(cam1: &Camera, cam2: &Camera, x1: &HomPoint2, x2: &HomPoint2) -> Result<Point3> {
    if (cam1.centre() - cam2.centre()).norm() <= BASELINE_EPSILON {
        return Err(GeometryError::DegenerateConfiguration("coincident camera centres"));
    }
    let n1 = normalize_point(&cam1.intrinsics, x1)?;
    let n2 = normalize_point(&cam2.intrinsics, x2)?;
    triangulate_normalized(&cam1.pose, &cam2.pose, &n1, &n2)
}

pub(crate) fn triangulate_normalized(
    p1: &RelativePose,
    p2: &RelativePose,
    x1: &HomPoint2,
    x2: &HomPoint2,
) -> Result<Point3> {
    let row = |pose: &RelativePose, r: usize| -> Vector4<f64> {
        let rr = pose.rotation.row(r);
        Vector4::new(rr[0], rr[1], rr[2], pose.translation[r])
    };
    let mut a = Matrix4::zeros();
    for (k, (pose, x)) in [(p1, x1), (p2, x2)].into_iter().enumerate() {
        let r0 = row(pose, 0);
        let r1 = row(pose, 1);
        let r2 = row(pose, 2);
        let e0 = r2 * x.u - r0 * x.w;
        let e1 = r2 * x.v - r1 * x.w;
        a.set_row(2 * k, &(e0 / e0.norm().max(f64::MIN_POSITIVE)).transpose());
        a.set_row(2 * k + 1, &(e1 / e1.norm().max(f64::MIN_POSITIVE)).transpose());
    }
    let svd = a.svd(false, true);
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    if !(s[order[2]] > 1e-12 * s[order[0]]) {
        return Err(GeometryError::DegenerateConfiguration("rank-deficient triangulation system"));
    }
    let v_t = svd.v_t.expect("requested v_t");
    let h = v_t.row(order[3]);
    if h[3].abs() <= 1e-14 * h.norm() {
        return Err(GeometryError::DegenerateConfiguration("triangulated point at infinity"));
    }
    Ok(Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

/// Recovers `(R, t)` from an essential matrix by cheirality voting over the
/// four factorizations. `matches` are normalized (`K⁻¹ x`) correspondences.
/// The returned translation has unit norm.
pub fn decompose_essential(e: &EssentialMatrix, matches: &[(HomPoint2, HomPoint2)]) -> Result<RelativePose> {
    if matches.is_empty() {
        return Err(GeometryError::DegenerateConfiguration("no correspondences for cheirality"));
    }
    let candidates = essential_factorizations(e)?;
    let identity = RelativePose::identity();
    let mut counts = [0usize; 4];
    for (c, pose) in candidates.iter().enumerate() {
        for (x1, x2) in matches {
            let Ok(p) = triangulate_normalized(&identity, pose, x1, x2) else {
                continue;
            };
            let z2 = (pose.rotation * p.coords + pose.translation).z;
            if p.z > 0.0 && z2 > 0.0 {
                counts[c] += 1;
            }
        }
    }
    let mut best = 0;
    for c in 1..4 {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    let ties = counts.iter().filter(|&&n| n == counts[best]).count();
    if ties > 1 {
        return Err(GeometryError::AmbiguousCheirality(counts[best]));
    }
    Ok(candidates[best])
}

/// The four `(R, ±t)` candidates of `E = U diag(1,1,0) Vᵀ`.
pub fn essential_factorizations(e: &EssentialMatrix) -> Result<[RelativePose; 4]> {
    let svd = e.m.svd(true, true);
    let (mut u, mut v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // sort singular values descending
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    if !(s[order[1]] > 0.0) {
        return Err(GeometryError::DegenerateConfiguration("essential matrix has rank < 2"));
    }
    u = Mat3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    v_t = Mat3::from_rows(&[v_t.row(order[0]), v_t.row(order[1]), v_t.row(order[2])]);
    if u.determinant() < 0.0 {
        u = -u;
    }
    if v_t.determinant() < 0.0 {
        v_t = -v_t;
    }
    let w = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vec3 = u.column(2).into_owned().normalize();
    Ok([
        RelativePose { rotation: r1, translation: t },
        RelativePose { rotation: r1, translation: -t },
        RelativePose { rotation: r2, translation: t },
        RelativePose { rotation: r2, translation: -t },
    ])
}

/// One entry of a pose file.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEntry {
    pub id: String,
    pub camera: Camera,
}

/// Reads `id fx fy cx cy qw qx qy qz tx ty tz` lines (world-to-camera,
/// unit quaternion). Blank lines and `#` comments are skipped.
pub fn read_pose_file<R: BufRead>(reader: R) -> Result<Vec<PoseEntry>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| GeometryError::Parse { line: n + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 12 {
            return Err(parse_err(format!("expected 12 fields, found {}", fields.len())));
        }
        let mut vals = [0.0f64; 11];
        for (i, f) in fields[1..].iter().enumerate() {
            vals[i] = f.parse().map_err(|e| parse_err(format!("field {}: {e}", i + 2)))?;
        }
        let k = CameraIntrinsics::new(vals[0], vals[1], vals[2], vals[3])
            .map_err(|e| parse_err(e.to_string()))?;
        let q = nalgebra::Quaternion::new(vals[4], vals[5], vals[6], vals[7]);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(parse_err("quaternion is not unit-norm".into()));
        }
        let pose = RelativePose::from_quaternion(UnitQuaternion::new_normalize(q), Vec3::new(vals[8], vals[9], vals[10]));
        out.push(PoseEntry { id: fields[0].to_string(), camera: Camera::new(k, pose) });
    }
    Ok(out)
}

pub fn write_pose_file<W: Write>(mut w: W, entries: &[PoseEntry]) -> Result<()> {
    for e in entries {
        let k = &e.camera.intrinsics;
        let q = UnitQuaternion::from_matrix(&e.camera.pose.rotation);
        let t = &e.camera.pose.translation;
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {} {} {}",
            e.id, k.fx, k.fy, k.cx, k.cy, q.w, q.i, q.j, q.k, t.x, t.y, t.z
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t_x() -> FundamentalMatrix {
        FundamentalMatrix::new(cross_matrix(&Vec3::new(1.0, 0.0, 0.0))).unwrap()
    }

    #[test]
    fn cross_matrix_expansion() {
        let m = cross_matrix(&Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(m, Mat3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        assert_eq!(cross_matrix(&Vec3::zeros()), Mat3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let t = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            assert!((cross_matrix(&t) * t).norm() < 1e-12);
            let m = cross_matrix(&t);
            assert_eq!(m, -m.transpose());
        }
    }

    #[test]
    fn fundamental_identity_sideways() {
        let k = CameraIntrinsics::identity();
        let pose = RelativePose::new(Mat3::identity(), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let f = fundamental_from_pose(&k, &k, &pose).unwrap();
        let expected = Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert!(f.max_abs_diff(&FundamentalMatrix::new(expected).unwrap()) < 1e-15);
        assert!((f.matrix().norm() - 1.0).abs() < 1e-15);
        let zero = RelativePose::identity();
        assert!(matches!(fundamental_from_pose(&k, &k, &zero), Err(GeometryError::DegenerateBaseline(_))));
    }

    #[test]
    fn canonical_sign_is_positive_on_largest_entry() {
        let f = FundamentalMatrix::new(Mat3::new(0.1, -3.0, 0.2, 1.0, 0.0, 0.5, 0.0, 0.3, -0.1)).unwrap();
        let c = f.canonical();
        assert!(c.matrix()[(0, 1)] > 0.0);
        assert!((c.matrix().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn epipolar_line_worked_examples() {
        let f = t_x();
        let l = epipolar_line(&f, &HomPoint2::pixel(0.0, 0.0)).unwrap();
        assert_eq!(l, Line2::new(0.0, -1.0, 0.0));
        let e = f.right_epipole();
        assert_eq!(epipolar_line(&f, &HomPoint2::from_vector(&e)), Err(GeometryError::EpipoleQuery));
    }

    #[test]
    fn residual_and_distances_worked_examples() {
        let f = t_x();
        let x1 = HomPoint2::pixel(0.0, 0.0);
        let x2 = HomPoint2::pixel(0.3, 0.5);
        assert!((epipolar_residual(&f, &x1, &x2) + 0.5).abs() < 1e-15);
        assert_eq!(epipolar_residual(&f.transpose(), &x2, &x1), epipolar_residual(&f, &x1, &x2));

        let l = Line2::new(0.0, -1.0, 0.0);
        assert!((point_line_distance(&l, &x2).unwrap() - 0.5).abs() < 1e-15);
        let l7 = Line2::new(0.0, -7.0, 0.0);
        let xm2 = HomPoint2::new(-0.6, -1.0, -2.0);
        assert!((point_line_distance(&l7, &xm2).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(point_line_distance(&l, &HomPoint2::pixel(3.0, 0.0)).unwrap(), 0.0);
        assert_eq!(point_line_distance(&Line2::new(0.0, 0.0, 1.0), &x2), Err(GeometryError::DegenerateLine));
        assert_eq!(point_line_distance(&l, &HomPoint2::new(1.0, 1.0, 0.0)), Err(GeometryError::PointAtInfinity));

        // Fx1 = (0, -1, 0) and Fᵀx2 = (0, 1, -0.5): both line normals have unit norm
        let s = symmetric_epipolar_distance_sq(&f, &x1, &x2).unwrap();
        assert!((s - 0.5).abs() < 1e-15, "{s}");
        let st = symmetric_epipolar_distance_sq(&f.transpose(), &x2, &x1).unwrap();
        assert!((s - st).abs() < 1e-15);
        let s10 = symmetric_epipolar_distance_sq(&f.scaled(-10.0).unwrap(), &x1, &x2).unwrap();
        assert!((s - s10).abs() < 1e-14);
    }

    #[test]
    fn normalize_round_trip() {
        let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0).unwrap();
        let p = normalize_point(&k, &HomPoint2::pixel(320.0, 240.0)).unwrap();
        assert_eq!((p.u, p.v, p.w), (0.0, 0.0, 1.0));
        let x = HomPoint2::new(123.4, 56.7, 1.0);
        let back = denormalize_point(&k, &normalize_point(&k, &x).unwrap()).unwrap();
        assert!((back.u - x.u).abs() < 1e-12 && (back.v - x.v).abs() < 1e-12);
        let id = CameraIntrinsics::identity();
        assert_eq!(normalize_point(&id, &x).unwrap(), x);
        assert_eq!(normalize_point(&k, &HomPoint2::new(1.0, 1.0, 0.0)), Err(GeometryError::PointAtInfinity));
    }

    #[test]
    fn project_worked_examples() {
        let cam = Camera::new(CameraIntrinsics::identity(), RelativePose::identity());
        let (x, d) = project(&cam, &Point3::new(0.0, 0.0, 5.0)).unwrap();
        assert_eq!((x.u, x.v, x.w, d), (0.0, 0.0, 1.0, 5.0));
        assert_eq!(project(&cam, &Point3::new(0.0, 0.0, -1.0)), Err(GeometryError::BehindCamera(-1.0)));
    }

    #[test]
    fn triangulation_rejects_coincident_centres() {
        let cam = Camera::new(CameraIntrinsics::identity(), RelativePose::identity());
        let x = HomPoint2::pixel(0.0, 0.0);
        assert!(matches!(triangulate(&cam, &cam, &x, &x), Err(GeometryError::DegenerateConfiguration(_))));
    }

    #[test]
    fn essential_from_pose_has_equal_singular_values() {
        let pose = RelativePose::new(axis_angle(Vec3::new(0.3, 1.0, -0.2), 0.4), Vec3::new(0.5, -0.2, 0.1)).unwrap();
        let e = EssentialMatrix::from_pose(&pose).unwrap();
        assert!(e.is_valid(1e-6));
    }

    #[test]
    fn pose_file_round_trip() {
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0).unwrap();
        let pose = RelativePose::new(axis_angle(Vec3::new(0.0, 0.0, 1.0), 0.3), Vec3::new(1.0, 2.0, 3.0)).unwrap();
        let entries = vec![PoseEntry { id: "cam0".into(), camera: Camera::new(k, pose) }];
        let mut buf = Vec::new();
        write_pose_file(&mut buf, &entries).unwrap();
        let back = read_pose_file(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back[0].id, "cam0");
        assert!((back[0].camera.pose.rotation - pose.rotation).abs().max() < 1e-12);
        let bad = read_pose_file(std::io::Cursor::new("x 1 2 3\n")).unwrap_err();
        assert!(matches!(bad, GeometryError::Parse { line: 1, .. }));
    }
}
