//! Pose errors, pose AUC, matching precision and dataset-level reports.

use rayon::prelude::*;
use thiserror::Error;

use crate::estimation::{estimate_relative_pose, Correspondence, RansacConfig};
use crate::geometry::{
    normalize_point, rotation_angle, symmetric_epipolar_distance_sq, CameraIntrinsics, EssentialMatrix, FundamentalMatrix, HomPoint2,
    Mat3, RelativePose, Vec3,
};
use crate::matcher::{forward_features, FeatureGrids, MatcherConfig, MatcherParams};
use crate::synth::RenderedPair;

pub const AUC_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];
/// Precision threshold on the squared symmetric epipolar distance
/// (normalized coordinates).
pub const PRECISION_THRESHOLD: f64 = 5e-4;
/// RANSAC inlier threshold used for evaluation, same units.
pub const EVAL_RANSAC_THRESHOLD: f64 = 3e-4;

pub fn eval_ransac() -> RansacConfig {
    RansacConfig { inlier_threshold: EVAL_RANSAC_THRESHOLD, ..RansacConfig::default() }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("translation has zero length")]
    ZeroTranslation,
    #[error("empty error list")]
    EmptyInput,
}

pub fn rotation_error(r_gt: &Mat3, r_est: &Mat3) -> f64 {
    rotation_angle(&(r_gt.transpose() * r_est)).to_degrees()
}

/// Angle between translation directions, ignoring sign.
pub fn translation_error(t_gt: &Vec3, t_est: &Vec3) -> Result<f64, MetricsError> {
    let n = t_gt.norm() * t_est.norm();
    if !(n > 0.0) {
        return Err(MetricsError::ZeroTranslation);
    }
    Ok((t_gt.dot(t_est).abs() / n).clamp(0.0, 1.0).acos().to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseError {
    pub rotation_deg: f64,
    pub translation_deg: f64,
    pub combined: f64,
}

impl PoseError {
    pub fn new(gt: &RelativePose, est: &RelativePose) -> Result<Self, MetricsError> {
        let rotation_deg = rotation_error(&gt.rotation, &est.rotation);
        let translation_deg = translation_error(&gt.translation, &est.translation)?;
        Ok(Self { rotation_deg, translation_deg, combined: rotation_deg.max(translation_deg) })
    }

    pub fn failure() -> Self {
        Self { rotation_deg: f64::INFINITY, translation_deg: f64::INFINITY, combined: f64::INFINITY }
    }
}

/// Area under the recall curve on `[0, T]`, normalized by `T`, in percent.
/// The recall curve is a step function, so the area is `Σ (T - e)₊ / n`.
pub fn pose_auc(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>, MetricsError> {
    if errors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let area: f64 = errors.iter().map(|&e| (t - e).max(0.0)).sum();
            100.0 * area / (n * t)
        })
        .collect())
}

/// Whether the squared symmetric epipolar distance of `m` under `f`
/// (normalized coordinates, e.g. an essential matrix) is below `threshold`.
pub fn is_epipolar_inlier(
    m: &Correspondence,
    f: &FundamentalMatrix,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    threshold: f64,
) -> bool {
    let (Ok(a), Ok(b)) = (normalize_point(k1, &m.x1), normalize_point(k2, &m.x2)) else {
        return false;
    };
    symmetric_epipolar_distance_sq(f, &a, &b).is_ok_and(|d| d < threshold)
}

/// Percentage of matches whose squared symmetric epipolar distance under
/// `e`, in normalized coordinates, is below `threshold`. `None` for an
/// empty match set.
pub fn matching_precision(
    matches: &[Correspondence],
    e: &EssentialMatrix,
    k1: &CameraIntrinsics,
    k2: &CameraIntrinsics,
    threshold: f64,
) -> Option<f64> {
    if matches.is_empty() {
        return None;
    }
    let f = e.as_fundamental().ok()?;
    let good = matches.iter().filter(|m| is_epipolar_inlier(m, &f, k1, k2, threshold)).count();
    Some(100.0 * good as f64 / matches.len() as f64)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub auc5: f64,
    pub auc10: f64,
    pub auc20: f64,
    pub precision: f64,
    pub median_rot_deg: f64,
    pub median_trans_deg: f64,
    pub n_pairs: usize,
    pub n_failed: usize,
    pub mean_matches: f64,
}

impl EvalReport {
    /// Non-finite medians are written as `null`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self, label: &str) -> String {
        let header = format!(
            "{:<16} {:>7} {:>7} {:>7} {:>7} {:>9} {:>9} {:>6} {:>6} {:>8}",
            "model", "AUC@5", "AUC@10", "AUC@20", "P(%)", "rot_med", "trans_med", "pairs", "failed", "matches"
        );
        let row = format!(
            "{:<16} {:>7.2} {:>7.2} {:>7.2} {:>7.2} {:>9.2} {:>9.2} {:>6} {:>6} {:>8.1}",
            label,
            self.auc5,
            self.auc10,
            self.auc20,
            self.precision,
            self.median_rot_deg,
            self.median_trans_deg,
            self.n_pairs,
            self.n_failed,
            self.mean_matches
        );
        format!("{header}\n{row}\n")
    }
}

/// Outcome for a single pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEval {
    pub error: PoseError,
    pub precision: f64,
    pub num_matches: usize,
    pub failed: bool,
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Scores matches of one pair against its ground truth.
pub fn evaluate_matches(matches: &[Correspondence], pair: &RenderedPair, ransac: &RansacConfig) -> PairEval {
    let k = &pair.intrinsics;
    let e = EssentialMatrix::from_pose(&pair.pose).ok();
    let precision = e.and_then(|e| matching_precision(matches, &e, k, k, PRECISION_THRESHOLD));
    let error = estimate_relative_pose(matches, k, k, ransac)
        .ok()
        .and_then(|(est, _)| PoseError::new(&pair.pose, &est).ok());
    PairEval {
        failed: error.is_none(),
        error: error.unwrap_or_else(PoseError::failure),
        precision: precision.unwrap_or(0.0),
        num_matches: matches.len(),
    }
}

pub fn aggregate(evals: &[PairEval]) -> Result<EvalReport, MetricsError> {
    let combined: Vec<f64> = evals.iter().map(|e| e.error.combined).collect();
    let auc = pose_auc(&combined, &AUC_THRESHOLDS)?;
    let n = evals.len() as f64;
    let mut rot: Vec<f64> = evals.iter().map(|e| e.error.rotation_deg).collect();
    let mut trans: Vec<f64> = evals.iter().map(|e| e.error.translation_deg).collect();
    Ok(EvalReport {
        auc5: auc[0],
        auc10: auc[1],
        auc20: auc[2],
        precision: evals.iter().map(|e| e.precision).sum::<f64>() / n,
        median_rot_deg: median(&mut rot),
        median_trans_deg: median(&mut trans),
        n_pairs: evals.len(),
        n_failed: evals.iter().filter(|e| e.failed).count(),
        mean_matches: evals.iter().map(|e| e.num_matches as f64).sum::<f64>() / n,
    })
}

/// Fine matches of the matcher as pixel correspondences.
pub fn predict_matches(pair: &RenderedPair, params: &MatcherParams, cfg: &MatcherConfig) -> Vec<Correspondence> {
    let Ok(grids) = FeatureGrids::new(&pair.image1, &pair.image2, cfg) else {
        return Vec::new();
    };
    let (pred, _, _) = forward_features(&grids, params, cfg);
    pred.fine_matches
        .iter()
        .map(|m| Correspondence::new(HomPoint2::pixel(m.x1[0], m.x1[1]), HomPoint2::pixel(m.x2_hat[0], m.x2_hat[1]), m.confidence))
        .collect()
}

/// Runs the matcher on every pair and aggregates pose and precision metrics.
pub fn evaluate(
    params: &MatcherParams,
    cfg: &MatcherConfig,
    pairs: &[RenderedPair],
    ransac: &RansacConfig,
) -> Result<EvalReport, MetricsError> {
    let evals: Vec<PairEval> =
        pairs.par_iter().map(|p| evaluate_matches(&predict_matches(p, params, cfg), p, ransac)).collect();
    aggregate(&evals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::axis_angle;

    #[test]
    fn rotation_error_cases() {
        let r = axis_angle(Vec3::new(0.3, -1.0, 0.2), 0.7);
        assert!(rotation_error(&r, &r) < 1e-6);
        let rz = axis_angle(Vec3::z(), 10f64.to_radians());
        assert!((rotation_error(&Mat3::identity(), &rz) - 10.0).abs() < 1e-9);
        let d = axis_angle(Vec3::new(1.0, 2.0, 3.0), 0.25);
        assert!((rotation_error(&r, &(r * d)) - 0.25f64.to_degrees()).abs() < 1e-9);
    }

    #[test]
    fn translation_error_cases() {
        let t = Vec3::new(1.0, 2.0, -0.5);
        assert!(translation_error(&t, &(t * 3.0)).unwrap() < 1e-6);
        assert!(translation_error(&t, &(-t)).unwrap() < 1e-6);
        assert!((translation_error(&Vec3::x(), &Vec3::y()).unwrap() - 90.0).abs() < 1e-12);
        assert_eq!(translation_error(&Vec3::zeros(), &t), Err(MetricsError::ZeroTranslation));
    }

    #[test]
    fn auc_edge_cases() {
        assert_eq!(pose_auc(&[0.0; 4], &AUC_THRESHOLDS).unwrap(), vec![100.0; 3]);
        assert_eq!(pose_auc(&[f64::INFINITY; 3], &AUC_THRESHOLDS).unwrap(), vec![0.0; 3]);
        assert_eq!(pose_auc(&[], &AUC_THRESHOLDS), Err(MetricsError::EmptyInput));
    }

    /// Recall curve integrated on a dense midpoint grid.
    fn dense_auc(errors: &[f64], t: f64) -> f64 {
        let steps = 200_000;
        let dt = t / steps as f64;
        let n = errors.len() as f64;
        let area: f64 = (0..steps)
            .map(|k| {
                let x = (k as f64 + 0.5) * dt;
                errors.iter().filter(|&&e| e <= x).count() as f64 / n * dt
            })
            .sum();
        100.0 * area / t
    }

    #[test]
    fn auc_matches_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.random_range(1..12);
            let errors: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.15) { f64::INFINITY } else { rng.random_range(0.0..25.0) })
                .collect();
            let exact = pose_auc(&errors, &AUC_THRESHOLDS).unwrap();
            for (a, &t) in exact.iter().zip(&AUC_THRESHOLDS) {
                assert!((a - dense_auc(&errors, t)).abs() < 0.01, "{errors:?} @ {t}");
            }
            assert!(exact[0] <= exact[1] && exact[1] <= exact[2]);
        }
    }

    #[test]
    fn auc_frozen_value() {
        let auc = pose_auc(&[2.0, 4.0, 8.0], &[5.0]).unwrap()[0];
        assert!((auc - 26.667).abs() < 1e-3, "{auc}");
    }

    #[test]
    fn precision_straddles_threshold() {
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0).unwrap();
        let pose = RelativePose { rotation: Mat3::identity(), translation: Vec3::new(1.0, 0.0, 0.0) };
        let e = EssentialMatrix::from_pose(&pose).unwrap();
        // With a horizontal baseline the squared symmetric distance of a
        // vertical offset `d` (normalized) is `2 d²`.
        let d_at = |thr: f64| (thr / 2.0).sqrt() * 100.0;
        let below = Correspondence::from_pixels(10.0, 20.0, 50.0, 20.0 + 0.99 * d_at(PRECISION_THRESHOLD), 1.0);
        let above = Correspondence::from_pixels(10.0, 20.0, 50.0, 20.0 + 1.01 * d_at(PRECISION_THRESHOLD), 1.0);
        assert_eq!(matching_precision(&[below, above], &e, &k, &k, PRECISION_THRESHOLD), Some(50.0));
        let loose = matching_precision(&[below, above], &e, &k, &k, 2.0 * PRECISION_THRESHOLD).unwrap();
        assert_eq!(loose, 100.0);
    }

    fn oracle_matches(pair: &RenderedPair) -> Vec<Correspondence> {
        let grid = crate::losses::GridSpec::for_image(pair.height(), pair.width(), 8);
        pair.gt_targets(&grid)
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                let [u, v] = grid.centre(i);
                t.map(|t| Correspondence::from_pixels(u, v, t.point[0], t.point[1], 1.0))
            })
            .collect()
    }

    #[test]
    fn oracle_and_random_matchers() {
        use rand::{Rng, SeedableRng};
        let spec = crate::synth::make_domain("A").unwrap();
        let pairs: Vec<RenderedPair> = (0..6).map(|i| crate::synth::sample_pair(&spec, i).unwrap()).collect();
        let ransac = RansacConfig::default();
        let evals: Vec<PairEval> = pairs.iter().map(|p| evaluate_matches(&oracle_matches(p), p, &ransac)).collect();
        let report = aggregate(&evals).unwrap();
        assert!(report.auc20 > 99.0 && report.precision > 99.9, "{report:?}");

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let evals: Vec<PairEval> = pairs
            .iter()
            .map(|p| {
                let m: Vec<Correspondence> = (0..100)
                    .map(|_| {
                        let mut r = || rng.random_range(0.0..128.0);
                        Correspondence::from_pixels(r(), r(), r(), r(), 1.0)
                    })
                    .collect();
                evaluate_matches(&m, p, &ransac)
            })
            .collect();
        let report = aggregate(&evals).unwrap();
        assert!(report.auc5 < 5.0, "{report:?}");
        assert!(report.auc5 <= report.auc10 && report.auc10 <= report.auc20);
    }

    #[test]
    fn report_json_round_trip() {
        let r = EvalReport {
            auc5: 1.0,
            auc10: 2.0,
            auc20: 3.0,
            precision: 50.0,
            median_rot_deg: 1.5,
            median_trans_deg: 2.5,
            n_pairs: 4,
            n_failed: 1,
            mean_matches: 10.0,
        };
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert!(r.table("x").contains("AUC@20"));
    }

    #[test]
    fn precision_empty_and_exact() {
        let k = CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0).unwrap();
        let pose = RelativePose { rotation: Mat3::identity(), translation: Vec3::new(1.0, 0.0, 0.0) };
        let e = EssentialMatrix::from_pose(&pose).unwrap();
        assert_eq!(matching_precision(&[], &e, &k, &k, PRECISION_THRESHOLD), None);
        // Horizontal baseline: rows are epipolar lines.
        let m = [Correspondence::from_pixels(10.0, 20.0, 50.0, 20.0, 1.0)];
        assert_eq!(matching_precision(&m, &e, &k, &k, PRECISION_THRESHOLD), Some(100.0));
    }
}
