//! Minimal trainable coarse-to-fine matcher.
//!
//! Coarse stage: raw `w x w` patches are linearly embedded, L2-normalized and
//! compared by scaled inner products; a dual softmax turns the similarity
//! matrix into confidences `C`. Fine stage: for each coarse match, the fine
//! descriptor at the image-1 cell centre is correlated against a window of
//! fine descriptors around the image-2 cell centre, and the soft-argmax of the
//! resulting heatmap gives a subpixel position. Both stages are differentiable
//! end to end and [`backward`] computes exact parameter gradients.

mod checkpoint;
mod features;
mod model;
mod optim;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use features::{extract_features, FeatureGrids, FineGrid, ImageFeatures};
pub use model::{
    backward, coarse_forward, forward, forward_features, refine_fine, select_coarse, CoarseMatch, CoarseState,
    FineMatch, FineState, MatchPrediction,
};
pub use optim::Sgd;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatcherError {
    #[error("image {width}x{height} is not a multiple of the patch width {patch}")]
    BadDimensions { width: usize, height: usize, patch: usize },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(&'static str),
    #[error("invalid matcher config: {0}")]
    InvalidConfig(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Architecture and inference settings that are not learned.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    pub patch_width: usize,
    /// Coarse window size in cells; pooled back to `w x w` samples.
    pub coarse_context: usize,
    pub fine_stride: usize,
    pub fine_patch: usize,
    pub window_radius: usize,
    pub match_threshold: f64,
    pub coarse_dim: usize,
    pub fine_dim: usize,
    pub tau: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            patch_width: 8,
            coarse_context: 4,
            fine_stride: 2,
            fine_patch: 14,
            window_radius: 3,
            match_threshold: 0.2,
            coarse_dim: 32,
            fine_dim: 16,
            tau: 0.1,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<(), MatcherError> {
        if self.patch_width < 2 || self.patch_width % 2 != 0 {
            return Err(MatcherError::InvalidConfig("patch width must be even and >= 2"));
        }
        if self.fine_stride == 0 || (self.patch_width / 2) % self.fine_stride != 0 {
            return Err(MatcherError::InvalidConfig("cell centres must fall on the fine grid"));
        }
        if self.coarse_context == 0 || self.fine_patch == 0 || self.coarse_dim == 0 || self.fine_dim == 0 {
            return Err(MatcherError::InvalidConfig("zero dimension"));
        }
        if !(self.tau > 0.0) {
            return Err(MatcherError::InvalidConfig("tau must be positive"));
        }
        Ok(())
    }

    pub fn coarse_input_dim(&self) -> usize {
        self.patch_width * self.patch_width
    }

    pub fn fine_input_dim(&self) -> usize {
        self.fine_patch * self.fine_patch
    }
}

/// Learnable parameters: two linear embeddings and the softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherParams {
    /// `d_in x d`.
    pub w_coarse: DMatrix<f64>,
    /// `d_in_f x d_f`.
    pub w_fine: DMatrix<f64>,
    pub tau: f64,
}

impl MatcherParams {
    /// Gaussian initialization with variance `1/d_in`, seeded.
    pub fn init(cfg: &MatcherConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |rows: usize, cols: usize| {
            let n = Normal::new(0.0, 1.0 / (rows as f64).sqrt()).unwrap();
            DMatrix::from_fn(rows, cols, |_, _| n.sample(&mut rng))
        };
        let w_coarse = gauss(cfg.coarse_input_dim(), cfg.coarse_dim);
        let w_fine = gauss(cfg.fine_input_dim(), cfg.fine_dim);
        Self { w_coarse, w_fine, tau: cfg.tau }
    }

    /// Fails when the weight shapes do not fit `cfg`.
    pub fn check_shapes(&self, cfg: &MatcherConfig) -> Result<(), MatcherError> {
        if self.w_coarse.shape() != (cfg.coarse_input_dim(), cfg.coarse_dim)
            || self.w_fine.shape() != (cfg.fine_input_dim(), cfg.fine_dim)
        {
            return Err(MatcherError::Checkpoint("weight shapes do not match the matcher config".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite() && self.w_coarse.iter().chain(self.w_fine.iter()).all(|v| v.is_finite())
    }

    pub fn num_parameters(&self) -> usize {
        self.w_coarse.len() + self.w_fine.len() + 1
    }

    /// Flat view: coarse entries, fine entries, then `tau`.
    pub fn get_flat(&self, k: usize) -> f64 {
        let nc = self.w_coarse.len();
        let nf = self.w_fine.len();
        if k < nc {
            self.w_coarse.as_slice()[k]
        } else if k < nc + nf {
            self.w_fine.as_slice()[k - nc]
        } else {
            self.tau
        }
    }

    pub fn set_flat(&mut self, k: usize, v: f64) {
        let nc = self.w_coarse.len();
        let nf = self.w_fine.len();
        if k < nc {
            self.w_coarse.as_mut_slice()[k] = v;
        } else if k < nc + nf {
            self.w_fine.as_mut_slice()[k - nc] = v;
        } else {
            self.tau = v;
        }
    }
}

/// Gradient with the same layout as [`MatcherParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MatcherGrads {
    pub w_coarse: DMatrix<f64>,
    pub w_fine: DMatrix<f64>,
    pub tau: f64,
}

impl MatcherGrads {
    pub fn zeros_like(p: &MatcherParams) -> Self {
        Self {
            w_coarse: DMatrix::zeros(p.w_coarse.nrows(), p.w_coarse.ncols()),
            w_fine: DMatrix::zeros(p.w_fine.nrows(), p.w_fine.ncols()),
            tau: 0.0,
        }
    }

    pub fn add_assign(&mut self, other: &MatcherGrads) {
        self.w_coarse += &other.w_coarse;
        self.w_fine += &other.w_fine;
        self.tau += other.tau;
    }

    pub fn scale(&mut self, s: f64) {
        self.w_coarse *= s;
        self.w_fine *= s;
        self.tau *= s;
    }

    pub fn is_finite(&self) -> bool {
        self.tau.is_finite() && self.w_coarse.iter().chain(self.w_fine.iter()).all(|v| v.is_finite())
    }

    pub fn get_flat(&self, k: usize) -> f64 {
        let nc = self.w_coarse.len();
        let nf = self.w_fine.len();
        if k < nc {
            self.w_coarse.as_slice()[k]
        } else if k < nc + nf {
            self.w_fine.as_slice()[k - nc]
        } else {
            self.tau
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.w_coarse.iter().chain(self.w_fine.iter()).fold(self.tau.abs(), |m, v| m.max(v.abs()))
    }
}
