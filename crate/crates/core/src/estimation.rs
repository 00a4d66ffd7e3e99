//! Fundamental-matrix estimation from putative matches.
//!
//! Hartley-normalized eight-point solver inside a fixed-iteration, seeded
//! RANSAC loop, followed by relative pose recovery through the essential
//! matrix.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, Matrix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{
    decompose_essential, normalize_point, symmetric_epipolar_distance_sq, CameraIntrinsics,
    EssentialMatrix, FundamentalMatrix, GeometryError, HomPoint2, Mat3, RelativePose,
};

/// Size of the minimal sample.
pub const MIN_SAMPLE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("need at least {MIN_SAMPLE} matches, got {0}")]
    NotEnoughMatches(usize),
    #[error("every RANSAC hypothesis was degenerate")]
    NoValidHypothesis,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("invalid RANSAC config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("match file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for EstimationError {
    fn from(e: std::io::Error) -> Self {
        EstimationError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, EstimationError>;

/// A putative match between image 1 and image 2, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x1: HomPoint2,
    pub x2: HomPoint2,
    pub confidence: f64,
}

impl Correspondence {
    pub fn new(x1: HomPoint2, x2: HomPoint2, confidence: f64) -> Self {
        Self { x1, x2, confidence }
    }

    pub fn from_pixels(u1: f64, v1: f64, u2: f64, v2: f64, confidence: f64) -> Self {
        Self::new(HomPoint2::pixel(u1, v1), HomPoint2::pixel(u2, v2), confidence)
    }

    /// Whether both points fall inside `[0, w) x [0, h)` of their images.
    pub fn in_bounds(&self, size1: (f64, f64), size2: (f64, f64)) -> bool {
        let inside = |p: &HomPoint2, (w, h): (f64, f64)| match p.xy() {
            Ok([u, v]) => u >= 0.0 && v >= 0.0 && u < w && v < h,
            Err(_) => false,
        };
        inside(&self.x1, size1) && inside(&self.x2, size2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Squared symmetric epipolar distance in normalized image coordinates.
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { iterations: 1000, inlier_threshold: 1e-5, seed: 0 }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(EstimationError::InvalidConfig("iterations must be >= 1"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(EstimationError::InvalidConfig("inlier_threshold must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub f: FundamentalMatrix,
    pub inlier_mask: Vec<bool>,
    pub inlier_count: usize,
    pub num_input_matches: usize,
    /// Set when the best model explains no more than a minimal sample.
    pub no_consensus: bool,
}

impl RansacResult {
    pub fn inlier_ratio(&self) -> f64 {
        self.inlier_count as f64 / self.num_input_matches.max(1) as f64
    }
}

/// Similarity that moves the centroid to the origin and the mean distance to √2.
fn hartley_transform(points: &[[f64; 2]]) -> Result<Mat3> {
    let n = points.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in points {
        mx += p[0];
        my += p[1];
    }
    mx /= n;
    my /= n;
    let mean_dist = points.iter().map(|p| (p[0] - mx).hypot(p[1] - my)).sum::<f64>() / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(EstimationError::DegenerateConfiguration("coincident points"));
    }
    // collinearity: second moment matrix must have full rank
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = ((p[0] - mx) / mean_dist, (p[1] - my) / mean_dist);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx * syy - sxy * sxy <= 1e-12 * (sxx + syy).powi(2) {
        return Err(EstimationError::DegenerateConfiguration("collinear points"));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Mat3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

/// Normalized eight-point algorithm on at least eight matches.
pub fn eight_point(matches: &[Correspondence]) -> Result<FundamentalMatrix> {
    if matches.len() < MIN_SAMPLE {
        return Err(EstimationError::NotEnoughMatches(matches.len()));
    }
    let mut p1 = Vec::with_capacity(matches.len());
    let mut p2 = Vec::with_capacity(matches.len());
    for m in matches {
        p1.push(m.x1.xy()?);
        p2.push(m.x2.xy()?);
    }
    let t1 = hartley_transform(&p1)?;
    let t2 = hartley_transform(&p2)?;

    // pad to 9 rows so the thin SVD still exposes the full right singular basis
    let rows = matches.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (q1, q2)) in p1.iter().zip(&p2).enumerate() {
        let x = t1[(0, 0)] * q1[0] + t1[(0, 2)];
        let y = t1[(1, 1)] * q1[1] + t1[(1, 2)];
        let xp = t2[(0, 0)] * q2[0] + t2[(0, 2)];
        let yp = t2[(1, 1)] * q2[1] + t2[(1, 2)];
        let row = [xp * x, xp * y, xp, yp * x, yp * y, yp, x, y, 1.0];
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(EstimationError::DegenerateConfiguration("svd failed"))?;
    let (idx, _) = svd.singular_values.argmin();
    let f = v_t.row(idx);
    let f_hat = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);

    let f_rank2 = enforce_rank2(&f_hat)?;
    let f_pix = t2.transpose() * f_rank2 * t1;
    if !f_pix.iter().all(|x| x.is_finite()) || f_pix.norm() == 0.0 {
        return Err(EstimationError::DegenerateConfiguration("null solution"));
    }
    Ok(FundamentalMatrix::new(f_pix)?.canonical())
}

fn enforce_rank2(m: &Mat3) -> Result<Mat3> {
    let mut svd = m.svd(true, true);
    let (idx, _) = svd.singular_values.argmin();
    svd.singular_values[idx] = 0.0;
    svd.recompose().map_err(|_| EstimationError::DegenerateConfiguration("svd recomposition failed"))
}

/// Matches mapped to normalized coordinates, plus `E = K₂ᵀ F K₁` helpers.
struct NormalizedMatches {
    points: Vec<(HomPoint2, HomPoint2)>,
}

impl NormalizedMatches {
    fn new(matches: &[Correspondence], k1: &CameraIntrinsics, k2: &CameraIntrinsics) -> Result<Self> {
        let points = matches
            .iter()
            .map(|m| Ok((normalize_point(k1, &m.x1)?, normalize_point(k2, &m.x2)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points })
    }

    fn score(&self, f: FundamentalMatrix, k1: &CameraIntrinsics, k2: &CameraIntrinsics, threshold: f64) -> Consensus {
        let e = EssentialMatrix::from_fundamental(&f, k1, k2);
        let distances: Vec<f64> = match e.as_fundamental() {
            Ok(e) => self
                .points
                .iter()
                .map(|(a, b)| symmetric_epipolar_distance_sq(&e, a, b).unwrap_or(f64::INFINITY))
                .collect(),
            Err(_) => vec![f64::INFINITY; self.points.len()],
        };
        let mask: Vec<bool> = distances.iter().map(|&d| d < threshold).collect();
        Consensus {
            f,
            count: mask.iter().filter(|&&b| b).count(),
            mask,
            cost: distances.iter().map(|&d| d.min(threshold)).sum(),
        }
    }
}

/// A model with its inliers and truncated quadratic cost `Σ min(d², threshold)`.
#[derive(Debug, Clone)]
pub struct Consensus {
    pub f: FundamentalMatrix,
    pub mask: Vec<bool>,
    pub count: usize,
    pub cost: f64,
}

/// Rounds of least-squares refitting on the consensus set.
pub const REFIT_ROUNDS: usize = 5;

/// Output of the RANSAC loop before the choice between refit and minimal model.
#[derive(Debug, Clone)]
pub struct RansacTrace {
    pub minimal: Consensus,
    pub best_iteration: usize,
    pub refit: Option<Consensus>,
    pub degenerate_samples: usize,
}

/// Runs the hypothesis loop and the final refit, exposing both models.
/// Hypotheses are ranked by truncated quadratic cost.
pub fn ransac_trace(
    matches: &[Correspondence],
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RansacTrace> {
    cfg.validate()?;
    if matches.len() < MIN_SAMPLE {
        return Err(EstimationError::NotEnoughMatches(matches.len()));
    }
    let normalized = NormalizedMatches::new(matches, k1, k2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Consensus)> = None;
    let mut degenerate = 0;
    let mut sample = Vec::with_capacity(MIN_SAMPLE);
    for it in 0..cfg.iterations {
        let idx = rand::seq::index::sample(&mut rng, matches.len(), MIN_SAMPLE);
        sample.clear();
        sample.extend(idx.iter().map(|i| matches[i]));
        let f = match eight_point(&sample) {
            Ok(f) => f,
            Err(_) => {
                degenerate += 1;
                continue;
            }
        };
        let c = normalized.score(f, k1, k2, cfg.inlier_threshold);
        // strict improvement keeps the lowest iteration on ties
        if best.as_ref().is_none_or(|b| c.cost < b.1.cost) {
            best = Some((it, c));
        }
    }
    let (best_iteration, minimal) = best.ok_or(EstimationError::NoValidHypothesis)?;
    let mut refit: Option<Consensus> = None;
    let mut mask = minimal.mask.clone();
    for _ in 0..REFIT_ROUNDS {
        if mask.iter().filter(|&&b| b).count() < MIN_SAMPLE {
            break;
        }
        let inl: Vec<Correspondence> = matches.iter().zip(&mask).filter(|(_, &b)| b).map(|(m, _)| *m).collect();
        let Ok(f) = eight_point(&inl) else {
            break;
        };
        let c = normalized.score(f, k1, k2, cfg.inlier_threshold);
        let converged = c.mask == mask;
        mask = c.mask.clone();
        if refit.as_ref().is_none_or(|r| c.cost < r.cost) {
            refit = Some(c);
        }
        if converged {
            break;
        }
    }
    Ok(RansacTrace { minimal, best_iteration, refit, degenerate_samples: degenerate })
}

/// Seeded RANSAC over eight-point hypotheses ranked by truncated quadratic
/// cost, followed by iterated least-squares refits on the consensus set. The
/// refit is kept unless it costs more than the minimal hypothesis.
pub fn ransac_fundamental(
    matches: &[Correspondence],
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<RansacResult> {
    let trace = ransac_trace(matches, k1, k2, cfg)?;
    let (f, mask) = match trace.refit {
        Some(r) if r.cost <= trace.minimal.cost => (r.f, r.mask),
        _ => (trace.minimal.f, trace.minimal.mask),
    };
    let inlier_count = mask.iter().filter(|&&b| b).count();
    Ok(RansacResult {
        f,
        inlier_mask: mask,
        inlier_count,
        num_input_matches: matches.len(),
        no_consensus: inlier_count <= MIN_SAMPLE,
    })
}

/// RANSAC fundamental matrix, then `E = K₂ᵀ F K₁` and cheirality-voted
/// decomposition over the inliers. The returned translation is unit-norm.
pub fn estimate_relative_pose(
    matches: &[Correspondence],
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<(RelativePose, RansacResult)> {
    let result = ransac_fundamental(matches, k1, k2, cfg)?;
    let e = EssentialMatrix::from_fundamental(&result.f, k1, k2);
    let normalized = NormalizedMatches::new(matches, k1, k2)?;
    let inliers: Vec<(HomPoint2, HomPoint2)> = normalized
        .points
        .iter()
        .zip(&result.inlier_mask)
        .filter(|(_, &b)| b)
        .map(|(p, _)| *p)
        .collect();
    let pose = decompose_essential(&e, &inliers)?;
    Ok((pose, result))
}

/// Reads `u1 v1 u2 v2 conf` lines.
pub fn read_matches<R: BufRead>(reader: R) -> Result<Vec<Correspondence>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| EstimationError::Parse { line: n + 1, msg: e.to_string() })?;
        if vals.len() != 5 {
            return Err(EstimationError::Parse { line: n + 1, msg: format!("expected 5 fields, found {}", vals.len()) });
        }
        out.push(Correspondence::from_pixels(vals[0], vals[1], vals[2], vals[3], vals[4]));
    }
    Ok(out)
}

pub fn write_matches<W: Write>(mut w: W, matches: &[Correspondence]) -> Result<()> {
    for m in matches {
        let [u1, v1] = m.x1.xy()?;
        let [u2, v2] = m.x2.xy()?;
        writeln!(w, "{u1} {v1} {u2} {v2} {}", m.confidence)?;
    }
    Ok(())
}
