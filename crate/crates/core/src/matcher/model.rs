//! Forward and reverse passes of the matcher.

use nalgebra::DMatrix;

use super::features::{FeatureGrids, ImageFeatures};
use super::{MatcherConfig, MatcherError, MatcherGrads, MatcherParams};
use crate::image::Image;
use crate::losses::ConfidenceMatrix;

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseMatch {
    pub i: usize,
    pub j: usize,
    pub confidence: f64,
}

/// Coarse-stage intermediates kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct CoarseState {
    pub confidence: ConfidenceMatrix,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    n1: Vec<f64>,
    n2: Vec<f64>,
    s: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

/// One refined correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct FineMatch {
    pub cell1: usize,
    pub cell2: usize,
    /// Image-1 cell centre, pixels.
    pub x1: [f64; 2],
    /// Soft-argmax position in image 2, pixels.
    pub x2_hat: [f64; 2],
    pub confidence: f64,
    centre1: usize,
    candidates: Vec<usize>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl FineMatch {
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }
}

/// Fine-stage intermediates kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct FineState {
    pub matches: Vec<FineMatch>,
    /// Coarse matches whose refinement window held no valid fine sample.
    pub dropped: usize,
    d1: DMatrix<f64>,
    d2: DMatrix<f64>,
    n1: Vec<f64>,
    n2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchPrediction {
    pub confidence: ConfidenceMatrix,
    pub coarse_matches: Vec<CoarseMatch>,
    pub fine_matches: Vec<FineMatch>,
    pub dropped: usize,
}

impl MatchPrediction {
    /// `(x1, x̂2)` pixel pairs with their coarse confidence.
    pub fn pixel_matches(&self) -> Vec<([f64; 2], [f64; 2], f64)> {
        self.fine_matches.iter().map(|m| (m.x1, m.x2_hat, m.confidence)).collect()
    }
}

fn normalize_rows(e: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut d = e.clone();
    let mut norms = Vec::with_capacity(e.nrows());
    for r in 0..e.nrows() {
        let n = e.row(r).norm();
        norms.push(n);
        if n > NORM_EPS {
            d.row_mut(r).unscale_mut(n);
        } else {
            d.row_mut(r).fill(0.0);
        }
    }
    (d, norms)
}

/// Reverse of [`normalize_rows`]: `(g - d <d, g>) / n` per row.
fn normalize_rows_backward(d: &DMatrix<f64>, norms: &[f64], gd: &DMatrix<f64>) -> DMatrix<f64> {
    let mut ge = DMatrix::zeros(d.nrows(), d.ncols());
    for r in 0..d.nrows() {
        let n = norms[r];
        if n <= NORM_EPS {
            continue;
        }
        let dot = d.row(r).dot(&gd.row(r));
        for k in 0..d.ncols() {
            ge[(r, k)] = (gd[(r, k)] - d[(r, k)] * dot) / n;
        }
    }
    ge
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

fn row_softmax(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = s.clone();
    let mut buf = vec![0.0; s.ncols()];
    for r in 0..s.nrows() {
        for c in 0..s.ncols() {
            buf[c] = s[(r, c)];
        }
        softmax_in_place(&mut buf);
        for c in 0..s.ncols() {
            out[(r, c)] = buf[c];
        }
    }
    out
}

fn col_softmax(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = s.clone();
    for mut col in out.column_iter_mut() {
        softmax_in_place(col.as_mut_slice());
    }
    out
}

pub fn coarse_forward(grids: &FeatureGrids, params: &MatcherParams) -> CoarseState {
    let (d1, n1) = normalize_rows(&(&grids.first.coarse * &params.w_coarse));
    let (d2, n2) = normalize_rows(&(&grids.second.coarse * &params.w_coarse));
    let s = (&d1 * d2.transpose()) / params.tau;
    let a = row_softmax(&s);
    let b = col_softmax(&s);
    let values = a.component_mul(&b).map(|v| v.clamp(0.0, 1.0));
    let confidence = ConfidenceMatrix::new(values, grids.first.grid, grids.second.grid)
        .expect("grid shapes agree by construction");
    CoarseState { confidence, d1, d2, n1, n2, s, a, b }
}

/// Mutual nearest neighbours of `C` with confidence at least `threshold`.
pub fn select_coarse(c: &ConfidenceMatrix, threshold: f64) -> Vec<CoarseMatch> {
    let v = &c.values;
    let argmax = |it: &mut dyn Iterator<Item = f64>| {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, x) in it.enumerate() {
            if x > best.1 {
                best = (k, x);
            }
        }
        best.0
    };
    let col_best: Vec<usize> = (0..v.ncols()).map(|j| argmax(&mut v.column(j).iter().cloned())).collect();
    let mut out = Vec::new();
    for i in 0..v.nrows() {
        if v.ncols() == 0 {
            break;
        }
        let j = argmax(&mut v.row(i).iter().cloned());
        if col_best[j] == i && v[(i, j)] >= threshold {
            out.push(CoarseMatch { i, j, confidence: v[(i, j)] });
        }
    }
    out
}

fn fine_embeddings(f: &ImageFeatures, params: &MatcherParams) -> (DMatrix<f64>, Vec<f64>) {
    normalize_rows(&(&f.fine * &params.w_fine))
}

/// Soft-argmax refinement of `pairs` (image-1 cell, image-2 cell). The window
/// is centred on the image-2 cell centre and clipped to valid fine samples.
pub fn refine_fine(
    grids: &FeatureGrids,
    params: &MatcherParams,
    pairs: &[CoarseMatch],
    window_radius: usize,
) -> FineState {
    let (d1, n1) = fine_embeddings(&grids.first, params);
    let (d2, n2) = fine_embeddings(&grids.second, params);
    let fg1 = grids.first.fine_grid;
    let fg2 = grids.second.fine_grid;
    let r = window_radius as isize;
    let mut matches = Vec::with_capacity(pairs.len());
    let mut dropped = 0;
    for m in pairs {
        let x1 = grids.first.grid.centre(m.i);
        let c2 = grids.second.grid.centre(m.j);
        let centre1 = match fg1.index_of(x1[0], x1[1]) {
            Some(k) if grids.first.fine_valid[k] => k,
            _ => {
                dropped += 1;
                continue;
            }
        };
        let (a0, b0) = ((c2[0] as usize / fg2.stride) as isize, (c2[1] as usize / fg2.stride) as isize);
        let mut candidates = Vec::new();
        for db in -r..=r {
            for da in -r..=r {
                let (a, b) = (a0 + da, b0 + db);
                if a < 0 || b < 0 || a as usize >= fg2.cols || b as usize >= fg2.rows {
                    continue;
                }
                let k = b as usize * fg2.cols + a as usize;
                if grids.second.fine_valid[k] {
                    candidates.push(k);
                }
            }
        }
        if candidates.is_empty() {
            dropped += 1;
            continue;
        }
        let logits: Vec<f64> = candidates.iter().map(|&k| d1.row(centre1).dot(&d2.row(k)) / params.tau).collect();
        let mut probs = logits.clone();
        softmax_in_place(&mut probs);
        let mut x2_hat = [0.0; 2];
        for (&k, &p) in candidates.iter().zip(&probs) {
            let pos = fg2.position(k);
            x2_hat[0] += p * pos[0];
            x2_hat[1] += p * pos[1];
        }
        matches.push(FineMatch {
            cell1: m.i,
            cell2: m.j,
            x1,
            x2_hat,
            confidence: m.confidence,
            centre1,
            candidates,
            logits,
            probs,
        });
    }
    FineState { matches, dropped, d1, d2, n1, n2 }
}

/// Full pass on precomputed features, keeping intermediates.
pub fn forward_features(
    grids: &FeatureGrids,
    params: &MatcherParams,
    cfg: &MatcherConfig,
) -> (MatchPrediction, CoarseState, FineState) {
    let coarse = coarse_forward(grids, params);
    let coarse_matches = select_coarse(&coarse.confidence, cfg.match_threshold);
    let fine = refine_fine(grids, params, &coarse_matches, cfg.window_radius);
    let prediction = MatchPrediction {
        confidence: coarse.confidence.clone(),
        coarse_matches,
        fine_matches: fine.matches.clone(),
        dropped: fine.dropped,
    };
    (prediction, coarse, fine)
}

pub fn forward(
    image1: &Image,
    image2: &Image,
    params: &MatcherParams,
    cfg: &MatcherConfig,
) -> Result<MatchPrediction, MatcherError> {
    let grids = FeatureGrids::new(image1, image2, cfg)?;
    Ok(forward_features(&grids, params, cfg).0)
}

/// Parameter gradients given upstream gradients with respect to the
/// confidence matrix (`None` for zero) and each fine match's `x̂2`
/// (empty for zero).
pub fn backward(
    grids: &FeatureGrids,
    params: &MatcherParams,
    coarse: &CoarseState,
    grad_confidence: Option<&DMatrix<f64>>,
    fine: &FineState,
    grad_fine: &[[f64; 2]],
) -> Result<MatcherGrads, MatcherError> {
    let mut grads = MatcherGrads::zeros_like(params);
    let tau = params.tau;

    if let Some(g) = grad_confidence {
        let (a, b) = (&coarse.a, &coarse.b);
        let ga = g.component_mul(b);
        let gb = g.component_mul(a);
        let mut gs = DMatrix::zeros(a.nrows(), a.ncols());
        for r in 0..a.nrows() {
            let dot: f64 = (0..a.ncols()).map(|c| ga[(r, c)] * a[(r, c)]).sum();
            for c in 0..a.ncols() {
                gs[(r, c)] = a[(r, c)] * (ga[(r, c)] - dot);
            }
        }
        for c in 0..b.ncols() {
            let dot: f64 = (0..b.nrows()).map(|r| gb[(r, c)] * b[(r, c)]).sum();
            for r in 0..b.nrows() {
                gs[(r, c)] += b[(r, c)] * (gb[(r, c)] - dot);
            }
        }
        grads.tau -= gs.component_mul(&coarse.s).sum() / tau;
        let gd1 = (&gs * &coarse.d2) / tau;
        let gd2 = (gs.transpose() * &coarse.d1) / tau;
        let ge1 = normalize_rows_backward(&coarse.d1, &coarse.n1, &gd1);
        let ge2 = normalize_rows_backward(&coarse.d2, &coarse.n2, &gd2);
        grads.w_coarse = grids.first.coarse.transpose() * ge1 + grids.second.coarse.transpose() * ge2;
    }

    if !grad_fine.is_empty() {
        let fg2 = grids.second.fine_grid;
        let mut gd1 = DMatrix::zeros(fine.d1.nrows(), fine.d1.ncols());
        let mut gd2 = DMatrix::zeros(fine.d2.nrows(), fine.d2.ncols());
        for (m, g) in fine.matches.iter().zip(grad_fine) {
            let gp: Vec<f64> = m
                .candidates
                .iter()
                .map(|&k| {
                    let pos = fg2.position(k);
                    g[0] * pos[0] + g[1] * pos[1]
                })
                .collect();
            let mean: f64 = m.probs.iter().zip(&gp).map(|(p, q)| p * q).sum();
            for (c, &k) in m.candidates.iter().enumerate() {
                let gs = m.probs[c] * (gp[c] - mean);
                if gs == 0.0 {
                    continue;
                }
                grads.tau -= gs * m.logits[c] / tau;
                for e in 0..fine.d1.ncols() {
                    gd1[(m.centre1, e)] += gs * fine.d2[(k, e)] / tau;
                    gd2[(k, e)] += gs * fine.d1[(m.centre1, e)] / tau;
                }
            }
        }
        let ge1 = normalize_rows_backward(&fine.d1, &fine.n1, &gd1);
        let ge2 = normalize_rows_backward(&fine.d2, &fine.n2, &gd2);
        grads.w_fine = grids.first.fine.transpose() * ge1 + grids.second.fine.transpose() * ge2;
    }

    if !grads.is_finite() {
        return Err(MatcherError::NonFiniteGradient("matcher backward"));
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(size: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(size, size, |_, _| rng.random::<f64>())
    }

    fn grid_of(m: usize) -> crate::losses::GridSpec {
        crate::losses::GridSpec::new(1, m, 8)
    }

    #[test]
    fn textureless_grids_give_uniform_confidence() {
        let cfg = MatcherConfig::default();
        let flat = Image::from_fn(32, 32, |_, _| 0.5);
        let grids = FeatureGrids::new(&flat, &flat, &cfg).unwrap();
        let state = coarse_forward(&grids, &MatcherParams::init(&cfg, 1));
        for v in state.confidence.values.iter() {
            assert!((v - 1.0 / 256.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_images_concentrate_on_diagonal() {
        let cfg = MatcherConfig::default();
        let img = noise_image(64, 3);
        let grids = FeatureGrids::new(&img, &img, &cfg).unwrap();
        let mut params = MatcherParams::init(&cfg, 5);
        params.tau = 0.01;
        let c = coarse_forward(&grids, &params).confidence.values;
        let diag: f64 = (0..c.nrows()).map(|i| c[(i, i)]).sum::<f64>() / c.nrows() as f64;
        assert!(diag > 0.99, "diag mean {diag}");
    }

    #[test]
    fn softmax_factors_sum_to_one() {
        let cfg = MatcherConfig::default();
        let grids = FeatureGrids::new(&noise_image(32, 1), &noise_image(32, 2), &cfg).unwrap();
        let st = coarse_forward(&grids, &MatcherParams::init(&cfg, 0));
        for r in 0..st.a.nrows() {
            assert!((st.a.row(r).sum() - 1.0).abs() < 1e-12);
        }
        for c in 0..st.b.ncols() {
            assert!((st.b.column(c).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn select_coarse_cases() {
        let id = ConfidenceMatrix::new(DMatrix::identity(3, 3), grid_of(3), grid_of(3)).unwrap();
        let m = select_coarse(&id, 0.2);
        assert_eq!(m.iter().map(|m| (m.i, m.j)).collect::<Vec<_>>(), vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(select_coarse(&id, 0.0).len(), 3);
        let uniform = ConfidenceMatrix::new(DMatrix::from_element(3, 3, 0.1), grid_of(3), grid_of(3)).unwrap();
        assert!(select_coarse(&uniform, 0.2).is_empty());
        // Ties resolve to the lowest index.
        assert_eq!(select_coarse(&uniform, 0.0).iter().map(|m| (m.i, m.j)).collect::<Vec<_>>(), vec![(0, 0)]);
    }

    #[test]
    fn permuting_second_image_cells_permutes_columns() {
        let cfg = MatcherConfig::default();
        let img1 = noise_image(32, 7);
        let img2 = noise_image(32, 8);
        let params = MatcherParams::init(&cfg, 2);
        let grids = FeatureGrids::new(&img1, &img2, &cfg).unwrap();
        let mut permuted = grids.clone();
        let m = grids.second.coarse.nrows();
        let perm: Vec<usize> = (0..m).map(|k| (k * 5 + 3) % m).collect();
        for (dst, &src) in perm.iter().enumerate() {
            permuted.second.coarse.set_row(dst, &grids.second.coarse.row(src));
        }
        let c = coarse_forward(&grids, &params).confidence.values;
        let cp = coarse_forward(&permuted, &params).confidence.values;
        for i in 0..m {
            for (dst, &src) in perm.iter().enumerate() {
                assert!((cp[(i, dst)] - c[(i, src)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn soft_argmax_stays_in_window() {
        let cfg = MatcherConfig::default();
        let grids = FeatureGrids::new(&noise_image(32, 11), &noise_image(32, 12), &cfg).unwrap();
        let params = MatcherParams::init(&cfg, 4);
        let pairs: Vec<CoarseMatch> =
            (0..16).map(|i| CoarseMatch { i, j: (i * 7) % 16, confidence: 1.0 }).collect();
        let st = refine_fine(&grids, &params, &pairs, cfg.window_radius);
        assert_eq!(st.matches.len() + st.dropped, 16);
        for m in &st.matches {
            let c = grids.second.grid.centre(m.cell2);
            assert!((m.x2_hat[0] - c[0]).abs() <= 6.0 && (m.x2_hat[1] - c[1]).abs() <= 6.0);
            assert!((m.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = MatcherConfig::default();
        let (a, b) = (noise_image(64, 1), noise_image(64, 2));
        let params = MatcherParams::init(&cfg, 9);
        assert_eq!(forward(&a, &b, &params, &cfg).unwrap(), forward(&a, &b, &params, &cfg).unwrap());
    }

    #[test]
    fn zero_and_scaled_upstream() {
        let cfg = MatcherConfig::default();
        let grids = FeatureGrids::new(&noise_image(32, 1), &noise_image(32, 2), &cfg).unwrap();
        let params = MatcherParams::init(&cfg, 0);
        let coarse = coarse_forward(&grids, &params);
        let pairs: Vec<CoarseMatch> = (0..16).map(|i| CoarseMatch { i, j: i, confidence: 1.0 }).collect();
        let fine = refine_fine(&grids, &params, &pairs, 3);
        let n = fine.matches.len();
        let zero = backward(&grids, &params, &coarse, Some(&DMatrix::zeros(16, 16)), &fine, &vec![[0.0; 2]; n])
            .unwrap();
        assert_eq!(zero.max_abs(), 0.0);

        let g = DMatrix::from_fn(16, 16, |i, j| ((i * 3 + j) % 7) as f64 - 3.0);
        let gf: Vec<[f64; 2]> = (0..n).map(|k| [k as f64 * 0.1, 1.0 - k as f64 * 0.05]).collect();
        let g1 = backward(&grids, &params, &coarse, Some(&g), &fine, &gf).unwrap();
        let g3 = backward(
            &grids,
            &params,
            &coarse,
            Some(&(&g * 3.0)),
            &fine,
            &gf.iter().map(|v| [v[0] * 3.0, v[1] * 3.0]).collect::<Vec<_>>(),
        )
        .unwrap();
        for k in 0..params.num_parameters() {
            assert!((g3.get_flat(k) - 3.0 * g1.get_flat(k)).abs() <= 1e-12 * (1.0 + g1.get_flat(k).abs()));
        }
    }
}
