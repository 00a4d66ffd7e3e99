//! Pose-only pair mining with pseudo-depth overlap.
//!
//! The scene is replaced by a simple surface (a hemisphere over a ground
//! plane, or an open-topped box around a street) so that overlap between two
//! views can be scored from their poses alone. The world frame is z-up.

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{project, Camera, PoseEntry, Point3, Vec3};

pub const DEFAULT_SAMPLES: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairgenError {
    #[error("invalid pseudo-depth model: {0}")]
    InvalidModel(&'static str),
    #[error("invalid overlap range [{0}, {1}]")]
    InvalidRange(f64, f64),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for PairgenError {
    fn from(e: std::io::Error) -> Self {
        PairgenError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PseudoDepthModel {
    /// Ground plane `z = z_plane` under a dome of radius `r_sphere` centred
    /// at the world origin.
    Hemisphere { z_plane: f64, r_sphere: f64 },
    /// Box centred on the reference camera: walls at `±side` across the
    /// driving direction, ground `bottom` below the camera, front and back
    /// planes at `±longitudinal`, no top.
    Box { side: f64, bottom: f64, longitudinal: f64, driving_dir: [f64; 3] },
}

impl PseudoDepthModel {
    pub fn preset(name: &str) -> Result<Self, PairgenError> {
        match name {
            "euroc-machine" => Ok(Self::Hemisphere { z_plane: -2.0, r_sphere: 10.0 }),
            "euroc-room" => Ok(Self::Hemisphere { z_plane: 0.0, r_sphere: 3.0 }),
            "sf-street" => {
                Ok(Self::Box { side: 10.0, bottom: 2.0, longitudinal: 25.0, driving_dir: [1.0, 0.0, 0.0] })
            }
            other => Err(PairgenError::UnknownPreset(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), PairgenError> {
        match *self {
            Self::Hemisphere { z_plane, r_sphere } => {
                if !(r_sphere > 0.0) || !z_plane.is_finite() {
                    return Err(PairgenError::InvalidModel("sphere radius must be positive"));
                }
            }
            Self::Box { side, bottom, longitudinal, driving_dir } => {
                if !(side > 0.0 && bottom > 0.0 && longitudinal > 0.0) {
                    return Err(PairgenError::InvalidModel("box extents must be positive"));
                }
                let d = Vec3::from(driving_dir);
                if !(Vec3::new(d.x, d.y, 0.0).norm() > 1e-9) {
                    return Err(PairgenError::InvalidModel("driving direction must have a horizontal component"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OverlapRange {
    pub min: f64,
    pub max: f64,
}

impl Default for OverlapRange {
    fn default() -> Self {
        Self { min: 0.3, max: 0.8 }
    }
}

impl OverlapRange {
    pub fn new(min: f64, max: f64) -> Result<Self, PairgenError> {
        if !(0.0..=1.0).contains(&min) || !(0.0..=1.0).contains(&max) || !(min < max) {
            return Err(PairgenError::InvalidRange(min, max));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Smallest positive `t` with `|o + t d| = r`.
fn sphere_exit(o: &Vec3, d: &Vec3, r: f64) -> Option<f64> {
    let b = o.dot(d);
    let c = o.norm_squared() - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    [-b - s, -b + s].into_iter().find(|&t| t > 0.0)
}

/// Distance along the unit ray `dir` from `origin` to the model surface, or
/// `None` for no hit (or a box front/back hit). The box is centred on
/// `origin`.
fn surface_distance(model: &PseudoDepthModel, origin: &Point3, dir: &Vec3) -> Option<f64> {
    match *model {
        PseudoDepthModel::Hemisphere { z_plane, r_sphere } => {
            let plane = (dir.z < 0.0 && origin.z > z_plane).then(|| (z_plane - origin.z) / dir.z);
            let dome = sphere_exit(&origin.coords, dir, r_sphere);
            match (plane, dome) {
                (Some(p), Some(s)) => Some(p.min(s)),
                (p, s) => p.or(s),
            }
        }
        PseudoDepthModel::Box { side, bottom, longitudinal, driving_dir } => {
            let fwd = Vec3::new(driving_dir[0], driving_dir[1], 0.0).normalize();
            let lat = Vec3::z().cross(&fwd);
            // Exit distance from the slab `lo <= p <= hi` starting at 0.
            let exit = |vel: f64, lo: f64, hi: f64| -> f64 {
                if vel > 0.0 {
                    hi / vel
                } else if vel < 0.0 {
                    lo / vel
                } else {
                    f64::INFINITY
                }
            };
            let t_lat = exit(dir.dot(&lat), -side, side);
            let t_bottom = exit(dir.z, -bottom, f64::INFINITY);
            let t_long = exit(dir.dot(&fwd), -longitudinal, longitudinal);
            let t = t_lat.min(t_bottom);
            (t.is_finite() && t > 0.0 && t < t_long).then_some(t)
        }
    }
}

/// Image size implied by the principal point (`2 cx x 2 cy`).
fn image_size(cam: &Camera) -> (f64, f64) {
    (2.0 * cam.intrinsics.cx, 2.0 * cam.intrinsics.cy)
}

/// Pseudo-depth (distance along the ray) of pixel `(u, v)` of `camera`.
pub fn pseudo_depth(model: &PseudoDepthModel, camera: &Camera, u: f64, v: f64) -> Option<f64> {
    let c = camera.centre();
    surface_distance(model, &c, &camera.ray_direction(u, v))
}

/// Fraction of an `n x n` grid of `cam_i` pixels whose pseudo-depth point
/// lands inside `cam_j`, in front of it.
pub fn pseudo_overlap_with(model: &PseudoDepthModel, cam_i: &Camera, cam_j: &Camera, n: usize) -> f64 {
    let (wi, hi) = image_size(cam_i);
    let (wj, hj) = image_size(cam_j);
    let c = cam_i.centre();
    let mut hits = 0;
    for r in 0..n {
        for k in 0..n {
            let u = (k as f64 + 0.5) * wi / n as f64;
            let v = (r as f64 + 0.5) * hi / n as f64;
            let dir = cam_i.ray_direction(u, v);
            let Some(t) = surface_distance(model, &c, &dir) else {
                continue;
            };
            let Ok((p, _)) = project(cam_j, &(c + dir * t)) else {
                continue;
            };
            if p.u >= 0.0 && p.v >= 0.0 && p.u < wj && p.v < hj {
                hits += 1;
            }
        }
    }
    hits as f64 / (n * n) as f64
}

pub fn pseudo_overlap(model: &PseudoDepthModel, cam_i: &Camera, cam_j: &Camera) -> f64 {
    pseudo_overlap_with(model, cam_i, cam_j, DEFAULT_SAMPLES)
}

/// `min` of both directions.
pub fn symmetric_overlap(model: &PseudoDepthModel, a: &Camera, b: &Camera, n: usize) -> f64 {
    pseudo_overlap_with(model, a, b, n).min(pseudo_overlap_with(model, b, a, n))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MinedPair {
    pub i: usize,
    pub j: usize,
    pub overlap: f64,
}

/// Pairs `(i, j)`, `i < j`, among every `stride`-th pose whose symmetric
/// overlap lies in `range`, ordered by `(i, j)`.
pub fn generate_pairs(
    poses: &[PoseEntry],
    model: &PseudoDepthModel,
    range: &OverlapRange,
    stride: usize,
    samples: usize,
) -> Result<Vec<MinedPair>, PairgenError> {
    model.validate()?;
    let stride = stride.max(1);
    let ids: Vec<usize> = (0..poses.len()).step_by(stride).collect();
    let candidates: Vec<(usize, usize)> =
        ids.iter().enumerate().flat_map(|(a, &i)| ids[a + 1..].iter().map(move |&j| (i, j))).collect();
    Ok(candidates
        .par_iter()
        .filter_map(|&(i, j)| {
            let overlap = symmetric_overlap(model, &poses[i].camera, &poses[j].camera, samples);
            range.contains(overlap).then_some(MinedPair { i, j, overlap })
        })
        .collect())
}

/// Writes `id_i id_j overlap` lines.
pub fn write_pairs<W: Write>(mut w: W, poses: &[PoseEntry], pairs: &[MinedPair]) -> Result<(), PairgenError> {
    for p in pairs {
        writeln!(w, "{} {} {:.6}", poses[p.i].id, poses[p.j].id, p.overlap)?;
    }
    Ok(())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && values[idx[e + 1]] == values[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0;
        for &i in &idx[k..=e] {
            out[i] = avg;
        }
        k = e + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `NaN` when
/// either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Mat3, RelativePose};

    fn camera(centre: Point3, forward: Vec3, up: Vec3) -> Camera {
        let z = forward.normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 48.0).unwrap();
        Camera::new(k, RelativePose { rotation: r, translation: -(r * centre.coords) })
    }

    fn hemi(z_plane: f64, r_sphere: f64) -> PseudoDepthModel {
        PseudoDepthModel::Hemisphere { z_plane, r_sphere }
    }

    #[test]
    fn hemisphere_depths() {
        let down = camera(Point3::new(0.5, 0.0, 1.5), -Vec3::z(), Vec3::x());
        let d = pseudo_depth(&hemi(0.0, 3.0), &down, 64.0, 48.0).unwrap();
        assert!((d - 1.5).abs() < 1e-12);
        let level = camera(Point3::origin(), Vec3::x(), Vec3::z());
        let d = pseudo_depth(&hemi(-2.0, 3.0), &level, 64.0, 48.0).unwrap();
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn box_front_plane_is_not_overlap() {
        let m = PseudoDepthModel::preset("sf-street").unwrap();
        let cam = camera(Point3::new(3.0, 1.0, 0.0), Vec3::x(), Vec3::z());
        assert_eq!(pseudo_depth(&m, &cam, 64.0, 48.0), None);
        let side = camera(Point3::origin(), Vec3::y(), Vec3::z());
        assert!((pseudo_depth(&m, &side, 64.0, 48.0).unwrap() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn identical_and_opposed_cameras() {
        let m = PseudoDepthModel::preset("euroc-machine").unwrap();
        let a = camera(Point3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.2, -0.3), Vec3::z());
        assert_eq!(pseudo_overlap(&m, &a, &a), 1.0);
        let b = camera(Point3::new(0.0, 0.0, 0.0), Vec3::new(-1.0, -0.2, -0.3), Vec3::z());
        assert_eq!(pseudo_overlap(&m, &a, &b), 0.0);
        assert_eq!(symmetric_overlap(&m, &a, &b, 32), 0.0);
    }

    #[test]
    fn overlap_can_be_asymmetric() {
        let m = hemi(-2.0, 10.0);
        let wide = camera(Point3::origin(), Vec3::x(), Vec3::z());
        let mut narrow = wide;
        narrow.intrinsics = CameraIntrinsics::new(400.0, 400.0, 64.0, 48.0).unwrap();
        let ab = pseudo_overlap(&m, &wide, &narrow);
        let ba = pseudo_overlap(&m, &narrow, &wide);
        assert_eq!(ba, 1.0);
        assert!(ab < 0.2);
        assert_eq!(symmetric_overlap(&m, &wide, &narrow, 32), ab);
    }

    #[test]
    fn forward_translation_is_monotone() {
        let m = hemi(-2.0, 10.0);
        let a = camera(Point3::origin(), Vec3::x(), Vec3::z());
        let mut last = f64::INFINITY;
        for k in 0..12 {
            let b = camera(Point3::new(0.6 * k as f64, 0.0, 0.0), Vec3::x(), Vec3::z());
            let o = symmetric_overlap(&m, &a, &b, 32);
            assert!(o <= last + 1e-12, "step {k}: {o} > {last}");
            last = o;
        }
        assert!(last < 1.0);
    }

    #[test]
    fn mining_filters_and_orders() {
        let m = hemi(-2.0, 10.0);
        let poses: Vec<PoseEntry> = (0..6)
            .map(|k| PoseEntry {
                id: format!("f{k}"),
                camera: camera(Point3::origin(), Vec3::new((0.3 * k as f64).cos(), (0.3 * k as f64).sin(), 0.0), Vec3::z()),
            })
            .collect();
        assert!(generate_pairs(&poses[..1], &m, &OverlapRange::default(), 1, 32).unwrap().is_empty());
        let all = generate_pairs(&poses, &m, &OverlapRange::new(0.0, 1.0).unwrap(), 1, 32).unwrap();
        assert_eq!(all.len(), 15);
        assert!(all.windows(2).all(|w| (w[0].i, w[0].j) < (w[1].i, w[1].j)));
        let strict = generate_pairs(&poses, &m, &OverlapRange::new(0.3, 0.9).unwrap(), 1, 32).unwrap();
        assert!(strict.iter().all(|p| p.overlap >= 0.3 && p.overlap <= 0.9));
        let strided = generate_pairs(&poses, &m, &OverlapRange::new(0.0, 1.0).unwrap(), 2, 32).unwrap();
        assert_eq!(strided.len(), 3);
        let mut buf = Vec::new();
        write_pairs(&mut buf, &poses, &strided).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("f0 f2 "));
    }

    #[test]
    fn near_identical_frames_are_excluded() {
        let m = hemi(-2.0, 10.0);
        let a = camera(Point3::origin(), Vec3::x(), Vec3::z());
        let b = camera(Point3::new(0.01, 0.0, 0.0), Vec3::x(), Vec3::z());
        let poses = vec![PoseEntry { id: "a".into(), camera: a }, PoseEntry { id: "b".into(), camera: b }];
        assert!(generate_pairs(&poses, &m, &OverlapRange::new(0.3, 0.9).unwrap(), 1, 32).unwrap().is_empty());
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![1.5, 0.0, 1.5]);
    }

    #[test]
    fn presets_validate() {
        for p in ["euroc-machine", "euroc-room", "sf-street"] {
            PseudoDepthModel::preset(p).unwrap().validate().unwrap();
        }
        assert!(PseudoDepthModel::preset("nope").is_err());
        assert!(hemi(0.0, -1.0).validate().is_err());
        assert!(OverlapRange::new(0.8, 0.3).is_err());
    }
}
