//! Raw patch descriptors on the coarse and fine grids.
//!
//! A coarse descriptor sees a window of `context * w` pixels centred on its
//! cell, average-pooled down to `w x w` samples.

use nalgebra::DMatrix;

use super::{MatcherConfig, MatcherError};
use crate::image::Image;
use crate::losses::GridSpec;

/// Patch norms below this are treated as textureless.
const TEXTURE_EPS: f64 = 1e-9;

/// Dense grid of fine sample positions at `(a * stride, b * stride)` pixel
/// corners, `a = 0..=W/stride`, `b = 0..=H/stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FineGrid {
    pub cols: usize,
    pub rows: usize,
    pub stride: usize,
}

impl FineGrid {
    pub fn position(&self, idx: usize) -> [f64; 2] {
        [((idx % self.cols) * self.stride) as f64, ((idx / self.cols) * self.stride) as f64]
    }

    /// Index of the sample at pixel corner `(u, v)` if it lies on the grid.
    pub fn index_of(&self, u: f64, v: f64) -> Option<usize> {
        let s = self.stride as f64;
        let (a, b) = (u / s, v / s);
        if a < 0.0 || b < 0.0 || a.fract() != 0.0 || b.fract() != 0.0 {
            return None;
        }
        let (a, b) = (a as usize, b as usize);
        (a < self.cols && b < self.rows).then_some(b * self.cols + a)
    }
}

/// Descriptors of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    pub grid: GridSpec,
    /// `m x w²` mean-subtracted, unit-norm coarse patches.
    pub coarse: DMatrix<f64>,
    pub coarse_textureless: Vec<bool>,
    pub fine_grid: FineGrid,
    /// One row per fine position; zero rows where the patch leaves the image
    /// or has no texture.
    pub fine: DMatrix<f64>,
    /// Fine patch lies fully inside the image.
    pub fine_valid: Vec<bool>,
}

impl ImageFeatures {
    pub fn num_textured(&self) -> usize {
        self.coarse_textureless.iter().filter(|&&t| !t).count()
    }
}

/// Features of both images of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrids {
    pub first: ImageFeatures,
    pub second: ImageFeatures,
}

impl FeatureGrids {
    pub fn new(image1: &Image, image2: &Image, cfg: &MatcherConfig) -> Result<Self, MatcherError> {
        Ok(Self { first: extract_features(image1, cfg)?, second: extract_features(image2, cfg)? })
    }
}

/// Writes the normalized patch with top-left pixel `(x0, y0)` into `out`;
/// returns `false` when the patch is flat.
fn normalized_patch(image: &Image, x0: usize, y0: usize, size: usize, out: &mut [f64]) -> bool {
    let mut k = 0;
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            out[k] = image.get(x, y);
            k += 1;
        }
    }
    normalize(out)
}

/// `size x size` samples, each the mean of an `s x s` block, of the window
/// with top-left pixel `(x0, y0)`; pixels outside the image are clamped.
fn pooled_patch(image: &Image, x0: isize, y0: isize, size: usize, s: usize, out: &mut [f64]) -> bool {
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let inv = 1.0 / (s * s) as f64;
    for b in 0..size {
        for a in 0..size {
            let mut acc = 0.0;
            for dy in 0..s {
                for dx in 0..s {
                    let x = clamp(x0 + (a * s + dx) as isize, image.width);
                    let y = clamp(y0 + (b * s + dy) as isize, image.height);
                    acc += image.get(x, y);
                }
            }
            out[b * size + a] = acc * inv;
        }
    }
    normalize(out)
}

/// Mean-subtracts and scales to unit norm; zeroes and returns `false` for
/// flat input.
fn normalize(out: &mut [f64]) -> bool {
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    let mut norm = 0.0;
    for v in out.iter_mut() {
        *v -= mean;
        norm += *v * *v;
    }
    let norm = norm.sqrt();
    if norm < TEXTURE_EPS {
        out.iter_mut().for_each(|v| *v = 0.0);
        return false;
    }
    out.iter_mut().for_each(|v| *v /= norm);
    true
}

pub fn extract_features(image: &Image, cfg: &MatcherConfig) -> Result<ImageFeatures, MatcherError> {
    let w = cfg.patch_width;
    if w == 0 || image.width % w != 0 || image.height % w != 0 || image.width == 0 || image.height == 0 {
        return Err(MatcherError::BadDimensions { width: image.width, height: image.height, patch: w });
    }
    let grid = GridSpec::for_image(image.height, image.width, w);
    let mut coarse = DMatrix::zeros(grid.len(), w * w);
    let mut textureless = vec![false; grid.len()];
    let mut buf = vec![0.0; w * w];
    let s = cfg.coarse_context;
    for idx in 0..grid.len() {
        let (r, c) = (idx / grid.cols, idx % grid.cols);
        let x0 = (c * w + w / 2) as isize - (s * w / 2) as isize;
        let y0 = (r * w + w / 2) as isize - (s * w / 2) as isize;
        let textured = pooled_patch(image, x0, y0, w, s, &mut buf);
        textureless[idx] = !textured;
        for (k, v) in buf.iter().enumerate() {
            coarse[(idx, k)] = *v;
        }
    }

    let s = cfg.fine_stride;
    let pf = cfg.fine_patch;
    let fine_grid = FineGrid { cols: image.width / s + 1, rows: image.height / s + 1, stride: s };
    let n_fine = fine_grid.cols * fine_grid.rows;
    let mut fine = DMatrix::zeros(n_fine, pf * pf);
    let mut fine_valid = vec![false; n_fine];
    let mut buf = vec![0.0; pf * pf];
    let half = pf / 2;
    for idx in 0..n_fine {
        let [u, v] = fine_grid.position(idx);
        let (u, v) = (u as usize, v as usize);
        if u < half || v < half || u + (pf - half) > image.width || v + (pf - half) > image.height {
            continue;
        }
        fine_valid[idx] = true;
        if normalized_patch(image, u - half, v - half, pf, &mut buf) {
            for (k, val) in buf.iter().enumerate() {
                fine[(idx, k)] = *val;
            }
        }
    }
    Ok(ImageFeatures { grid, coarse, coarse_textureless: textureless, fine_grid, fine, fine_valid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(width: usize, height: usize) -> Image {
        Image::from_fn(width, height, |x, y| {
            let (x, y) = (x as f64, y as f64);
            0.5 + 0.2 * (0.37 * x + 0.11 * y * y * 0.05).sin() + 0.2 * (0.23 * y + 0.05 * x * x * 0.1).cos()
        })
    }

    #[test]
    fn constant_image_is_textureless() {
        let img = Image::from_fn(32, 32, |_, _| 0.4);
        let f = extract_features(&img, &MatcherConfig::default()).unwrap();
        assert!(f.coarse_textureless.iter().all(|&t| t));
        assert_eq!(f.coarse.norm(), 0.0);
        assert_eq!(f.fine.norm(), 0.0);
    }

    #[test]
    fn grid_arithmetic() {
        let f = extract_features(&textured(64, 64), &MatcherConfig::default()).unwrap();
        assert_eq!((f.grid.rows, f.grid.cols, f.grid.len()), (8, 8, 64));
        assert_eq!(f.coarse.ncols(), 64);
        for r in 0..64 {
            assert!((f.coarse.row(r).norm() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(
            extract_features(&textured(60, 64), &MatcherConfig::default()),
            Err(MatcherError::BadDimensions { .. })
        ));
    }

    #[test]
    fn shift_by_patch_width_shifts_grid() {
        let cfg = MatcherConfig::default();
        let img = textured(64, 64);
        let shifted = img.shifted(8, 8, 0.0);
        let a = extract_features(&img, &cfg).unwrap();
        let b = extract_features(&shifted, &cfg).unwrap();
        for r in 2..5 {
            for c in 2..5 {
                let i = r * 8 + c;
                let j = (r + 1) * 8 + (c + 1);
                assert_eq!(a.coarse.row(i), b.coarse.row(j));
            }
        }
    }

    #[test]
    fn fine_validity_follows_bounds() {
        let cfg = MatcherConfig::default();
        let f = extract_features(&textured(32, 32), &cfg).unwrap();
        let fg = f.fine_grid;
        assert_eq!((fg.cols, fg.rows), (17, 17));
        assert!(!f.fine_valid[fg.index_of(6.0, 16.0).unwrap()]);
        assert!(f.fine_valid[fg.index_of(8.0, 8.0).unwrap()]);
        assert!(f.fine_valid[fg.index_of(24.0, 24.0).unwrap()]);
        assert!(!f.fine_valid[fg.index_of(26.0, 24.0).unwrap()]);
        assert_eq!(fg.index_of(3.0, 4.0), None);
    }
}
