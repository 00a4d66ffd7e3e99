//! Finite-difference verification of the analytic gradients.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fixtures::{random_pair, IMAGE_HEIGHT, IMAGE_WIDTH};
use crate::geometry::{fundamental_from_pose, HomPoint2};
use crate::image::Image;
use crate::losses::d_epi;
use crate::matcher::{
    backward, coarse_forward, refine_fine, CoarseMatch, FeatureGrids, MatcherConfig, MatcherGrads, MatcherParams,
};

/// Denominator floor for relative errors of near-zero gradients.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub const EPI_STEP: f64 = 1e-6;
pub const EPI_TOLERANCE: f64 = 1e-5;
pub const MATCHER_STEP: f64 = 1e-5;
pub const MATCHER_TOLERANCE: f64 = 1e-4;

/// Deliberate corruption of the analytic gradient, used to confirm that the
/// check can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    SignFlip,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub instances: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance
    }
}

/// Per-entry relative error with the denominator floored at [`RELATIVE_FLOOR`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// `d_epi` gradient on random pairs and points, compared as 2-vectors
/// (`|g - n| / max(|g|, |n|)`). Instances within `100 h` of
/// the line are resampled: the distance has a kink there.
pub fn epipolar_distance_suite(seed: u64, instances: usize, fault: Fault) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < instances {
        let pair = random_pair(&mut rng);
        let Ok(f) = fundamental_from_pose(&pair.cam1.intrinsics, &pair.cam2.intrinsics, &pair.relative()) else {
            continue;
        };
        let x1 = HomPoint2::pixel(rng.random_range(0.0..IMAGE_WIDTH), rng.random_range(0.0..IMAGE_HEIGHT));
        let (u, v) = (rng.random_range(0.0..IMAGE_WIDTH), rng.random_range(0.0..IMAGE_HEIGHT));
        let Ok((d, mut g)) = d_epi(&f, &x1, &HomPoint2::pixel(u, v)) else {
            continue;
        };
        if d < 100.0 * EPI_STEP {
            continue;
        }
        if fault == Fault::SignFlip {
            g = [-g[0], -g[1]];
        }
        let h = EPI_STEP;
        let eval = |u: f64, v: f64| d_epi(&f, &x1, &HomPoint2::pixel(u, v)).unwrap().0;
        let nu = (eval(u + h, v) - eval(u - h, v)) / (2.0 * h);
        let nv = (eval(u, v + h) - eval(u, v - h)) / (2.0 * h);
        let diff = (g[0] - nu).hypot(g[1] - nv);
        let scale = g[0].hypot(g[1]).max(nu.hypot(nv)).max(RELATIVE_FLOOR);
        worst = worst.max(diff / scale);
        done += 1;
    }
    SuiteReport {
        name: "epipolar distance".into(),
        instances,
        max_relative_error: worst,
        tolerance: EPI_TOLERANCE,
    }
}

/// Random toy instance: two noise images of 4x4 cells, a fixed set of coarse
/// pairs and random linear read-outs of `C` and `x̂2`.
struct MatcherInstance {
    grids: FeatureGrids,
    params: MatcherParams,
    pairs: Vec<CoarseMatch>,
    g_conf: DMatrix<f64>,
    g_fine: Vec<[f64; 2]>,
    radius: usize,
}

impl MatcherInstance {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = MatcherConfig::default();
        let size = 4 * cfg.patch_width;
        let mut noise = || Image::from_fn(size, size, |_, _| rng.random::<f64>());
        let (img1, img2) = (noise(), noise());
        let grids = FeatureGrids::new(&img1, &img2, &cfg).unwrap();
        let mut params = MatcherParams::init(&cfg, seed ^ 0x9e37_79b9);
        params.tau = rng.random_range(0.1..0.5);
        let m = grids.first.grid.len();
        let pairs: Vec<CoarseMatch> =
            (0..m).map(|i| CoarseMatch { i, j: rng.random_range(0..m), confidence: 1.0 }).collect();
        let g_conf = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let g_fine = (0..m).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        Self { grids, params, pairs, g_conf, g_fine, radius: cfg.window_radius }
    }

    fn objective(&self, params: &MatcherParams) -> f64 {
        let coarse = coarse_forward(&self.grids, params);
        let fine = refine_fine(&self.grids, params, &self.pairs, self.radius);
        let mut l = coarse.confidence.values.component_mul(&self.g_conf).sum();
        for (m, g) in fine.matches.iter().zip(&self.g_fine) {
            l += g[0] * m.x2_hat[0] + g[1] * m.x2_hat[1];
        }
        l
    }

    fn analytic(&self) -> MatcherGrads {
        let coarse = coarse_forward(&self.grids, &self.params);
        let fine = refine_fine(&self.grids, &self.params, &self.pairs, self.radius);
        let g_fine = &self.g_fine[..fine.matches.len()];
        backward(&self.grids, &self.params, &coarse, Some(&self.g_conf), &fine, g_fine).unwrap()
    }
}

/// Max relative error over every parameter of one toy instance.
pub fn matcher_instance_error(seed: u64, fault: Fault) -> f64 {
    let inst = MatcherInstance::new(seed);
    let mut grads = inst.analytic();
    if fault == Fault::SignFlip {
        grads.scale(-1.0);
    }
    let h = MATCHER_STEP;
    let mut p = inst.params.clone();
    let mut worst: f64 = 0.0;
    for k in 0..p.num_parameters() {
        let x = p.get_flat(k);
        p.set_flat(k, x + h);
        let up = inst.objective(&p);
        p.set_flat(k, x - h);
        let down = inst.objective(&p);
        p.set_flat(k, x);
        worst = worst.max(relative_error(grads.get_flat(k), (up - down) / (2.0 * h)));
    }
    worst
}

pub fn matcher_suite(seed: u64, instances: usize, fault: Fault) -> SuiteReport {
    let worst = (0..instances as u64)
        .map(|k| matcher_instance_error(seed.wrapping_add(k), fault))
        .fold(0.0, f64::max);
    SuiteReport { name: "matcher backward".into(), instances, max_relative_error: worst, tolerance: MATCHER_TOLERANCE }
}
