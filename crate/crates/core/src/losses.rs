//! Supervision signals for the coarse and fine matching stages.
//!
//! Correspondence losses need ground-truth matches; the epipolar variants only
//! need a fundamental matrix. The coarse classification target is the most
//! confident cell among those the epipolar line passes through, and the fine
//! regression target is the epipolar line itself (perpendicular distance).
//! Every loss returns its value together with the gradient with respect to
//! its inputs, so the matcher can backpropagate without an autodiff engine.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{epipolar_line, FundamentalMatrix, GeometryError, HomPoint2, Line2};

/// Clamp applied to confidences before taking logarithms.
pub const CONFIDENCE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("supervision set is empty")]
    EmptySupervision,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, LossError>;

/// Coarse grid of `rows x cols` square cells of `patch_width` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub patch_width: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, patch_width: usize) -> Self {
        assert!(patch_width >= 1, "patch width must be positive");
        Self { rows, cols, patch_width }
    }

    /// Grid covering a `height x width` image.
    pub fn for_image(height: usize, width: usize, patch_width: usize) -> Self {
        Self::new(height / patch_width, width / patch_width, patch_width)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel coordinates of the centre of cell `idx` (row-major).
    pub fn centre(&self, idx: usize) -> [f64; 2] {
        let (r, c) = (idx / self.cols, idx % self.cols);
        let w = self.patch_width as f64;
        [c as f64 * w + w / 2.0, r as f64 * w + w / 2.0]
    }

    /// Cell containing pixel position `(u, v)`, if inside the grid.
    pub fn cell_at(&self, u: f64, v: f64) -> Option<usize> {
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let w = self.patch_width as f64;
        let (c, r) = ((u / w).floor() as usize, (v / w).floor() as usize);
        (c < self.cols && r < self.rows).then_some(r * self.cols + c)
    }
}

/// Coarse matching probabilities `C`, rows indexing image-1 cells and
/// columns image-2 cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMatrix {
    pub values: DMatrix<f64>,
    pub grid1: GridSpec,
    pub grid2: GridSpec,
}

impl ConfidenceMatrix {
    pub fn new(values: DMatrix<f64>, grid1: GridSpec, grid2: GridSpec) -> Result<Self> {
        if values.nrows() != grid1.len() || values.ncols() != grid2.len() {
            return Err(LossError::Shape(format!(
                "{}x{} confidences for grids of {} and {} cells",
                values.nrows(),
                values.ncols(),
                grid1.len(),
                grid2.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(LossError::Shape("confidence outside [0, 1]".into()));
        }
        Ok(Self { values, grid1, grid2 })
    }
}

/// Which coarse target the epipolar classification loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// One positive per row: the most confident cell on the epipolar line.
    #[default]
    Argmax,
    /// Every cell on the epipolar line is positive.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Balance between coarse (0) and fine (1) terms.
    pub lambda: f64,
    /// Line thickness factor for the per-cell line sets.
    pub theta: f64,
    /// Slope of the linear fine-loss weighting.
    pub fine_weight_scale: f64,
    /// Fraction of supervised rows that also get fine supervision.
    pub fine_supervision_fraction: f64,
    pub mask: MaskKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            theta: std::f64::consts::SQRT_2,
            fine_weight_scale: 1.0,
            fine_supervision_fraction: 0.3,
            mask: MaskKind::Argmax,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(LossError::Shape("lambda must lie in [0, 1]".into()));
        }
        if !(self.theta > 0.0) {
            return Err(LossError::Shape("theta must be positive".into()));
        }
        if !(self.fine_supervision_fraction > 0.0 && self.fine_supervision_fraction <= 1.0) {
            return Err(LossError::Shape("fine supervision fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Per image-1 cell, the sorted image-2 cells the epipolar line passes through.
pub type LineSets = Vec<Vec<usize>>;

/// Cells of `grid` whose centre is within `theta * w / 2` of `line`.
pub fn cells_near_line(line: &Line2, grid: &GridSpec, theta: f64) -> Vec<usize> {
    let nn = line.normal_norm();
    if !(nn > 0.0) {
        return Vec::new();
    }
    let band = theta * grid.patch_width as f64 / 2.0;
    (0..grid.len())
        .filter(|&j| {
            let [u, v] = grid.centre(j);
            (line.a * u + line.b * v + line.c).abs() / nn <= band
        })
        .collect()
}

/// Thickened epipolar line set for every coarse cell of image 1. Rows whose
/// centre is the epipole get an empty set.
pub fn epipolar_line_set(f: &FundamentalMatrix, grid1: &GridSpec, grid2: &GridSpec, theta: f64) -> LineSets {
    (0..grid1.len())
        .map(|i| {
            let [u, v] = grid1.centre(i);
            match epipolar_line(f, &HomPoint2::pixel(u, v)) {
                Ok(l) => cells_near_line(&l, grid2, theta),
                Err(_) => Vec::new(),
            }
        })
        .collect()
}

/// Binary coarse supervision stored sparsely: the positive columns of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseMask {
    pub positives: Vec<Vec<usize>>,
    pub cols: usize,
    /// Line sets the mask was derived from (empty for correspondence masks).
    pub line_sets: LineSets,
}

pub type EpipolarMask = CoarseMask;

impl CoarseMask {
    pub fn excluded(&self, row: usize) -> bool {
        self.positives[row].is_empty()
    }

    pub fn num_positives(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.positives[i].contains(&j)
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.positives.len(), self.cols);
        for (i, row) in self.positives.iter().enumerate() {
            for &j in row {
                m[(i, j)] = 1.0;
            }
        }
        m
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.positives[i].len()
    }
}

/// Argmax of `C_ik` over `k ∈ e₁ⁱ`, lowest index on ties.
pub fn epipolar_classification_mask(c: &ConfidenceMatrix, line_sets: &LineSets) -> EpipolarMask {
    let positives = line_sets
        .iter()
        .enumerate()
        .map(|(i, set)| {
            let mut best: Option<(usize, f64)> = None;
            for &k in set {
                let v = c.values[(i, k)];
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            best.map(|(k, _)| vec![k]).unwrap_or_default()
        })
        .collect();
    CoarseMask { positives, cols: c.values.ncols(), line_sets: line_sets.clone() }
}

/// Every cell on the line is a positive.
pub fn naive_epipolar_mask(line_sets: &LineSets, cols: usize) -> EpipolarMask {
    CoarseMask { positives: line_sets.clone(), cols, line_sets: line_sets.clone() }
}

/// One-hot rows from ground-truth target cells; `None` rows are excluded.
pub fn gt_classification_mask(targets: &[Option<usize>], cols: usize) -> CoarseMask {
    CoarseMask {
        positives: targets.iter().map(|t| t.map(|j| vec![j]).unwrap_or_default()).collect(),
        cols,
        line_sets: Vec::new(),
    }
}

/// Builds the epipolar mask of the requested kind.
pub fn epipolar_mask(c: &ConfidenceMatrix, line_sets: &LineSets, kind: MaskKind) -> EpipolarMask {
    match kind {
        MaskKind::Argmax => epipolar_classification_mask(c, line_sets),
        MaskKind::Naive => naive_epipolar_mask(line_sets, c.values.ncols()),
    }
}

/// Loss value plus sparse gradient with respect to the confidence entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseLoss {
    pub value: f64,
    pub grad: Vec<(usize, usize, f64)>,
}

impl CoarseLoss {
    pub fn dense_grad(&self, rows: usize, cols: usize) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(rows, cols);
        for &(i, j, v) in &self.grad {
            g[(i, j)] += v;
        }
        g
    }
}

/// Sparse negative log-likelihood: mean of `-log C_ij` over the mask's positives.
pub fn coarse_loss(c: &ConfidenceMatrix, mask: &CoarseMask) -> Result<CoarseLoss> {
    if mask.positives.len() != c.values.nrows() || mask.cols != c.values.ncols() {
        return Err(LossError::Shape("mask and confidence shapes differ".into()));
    }
    let n = mask.num_positives();
    if n == 0 {
        return Err(LossError::EmptySupervision);
    }
    let inv_n = 1.0 / n as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (i, row) in mask.positives.iter().enumerate() {
        for &j in row {
            let raw = c.values[(i, j)];
            let v = raw.clamp(CONFIDENCE_EPS, 1.0 - CONFIDENCE_EPS);
            value -= v.ln();
            let g = if v == raw { -inv_n / v } else { 0.0 };
            grad.push((i, j, g));
        }
    }
    Ok(CoarseLoss { value: value * inv_n, grad })
}

/// Perpendicular pixel distance from `x̂₂` to `l₁₂ = F x₁`, and its gradient
/// with respect to the inhomogeneous coordinates of `x̂₂`. On the line the
/// zero subgradient is returned.
pub fn d_epi(f: &FundamentalMatrix, x1: &HomPoint2, x2_hat: &HomPoint2) -> Result<(f64, [f64; 2])> {
    let l = epipolar_line(f, x1)?;
    let nn = l.normal_norm();
    if !(nn > 0.0) {
        return Err(GeometryError::DegenerateLine.into());
    }
    let p = x2_hat.normalized()?;
    let r = l.a * p.u + l.b * p.v + l.c;
    let s = if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    };
    Ok((r.abs() / nn, [s * l.a / nn, s * l.b / nn]))
}

/// Loss value plus gradient per predicted fine position.
#[derive(Debug, Clone, PartialEq)]
pub struct FineLoss {
    pub value: f64,
    pub grad: Vec<[f64; 2]>,
}

/// `(1/m') Σ g(d_epi)` with linear `g(x) = scale · x`.
pub fn fine_loss(f: &FundamentalMatrix, matches: &[(HomPoint2, HomPoint2)], scale: f64) -> Result<FineLoss> {
    if matches.is_empty() {
        return Err(LossError::EmptySupervision);
    }
    let inv = scale / matches.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(matches.len());
    for (x1, x2) in matches {
        let (d, g) = d_epi(f, x1, x2)?;
        value += d;
        grad.push([g[0] * inv, g[1] * inv]);
    }
    Ok(FineLoss { value: value * inv, grad })
}

/// Mean (scaled) Euclidean distance to ground-truth fine targets.
pub fn gt_fine_loss(predicted: &[[f64; 2]], targets: &[[f64; 2]], scale: f64) -> Result<FineLoss> {
    if predicted.len() != targets.len() {
        return Err(LossError::Shape("prediction and target counts differ".into()));
    }
    if predicted.is_empty() {
        return Err(LossError::EmptySupervision);
    }
    let inv = scale / predicted.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(predicted.len());
    for (p, t) in predicted.iter().zip(targets) {
        let (dx, dy) = (p[0] - t[0], p[1] - t[1]);
        let d = dx.hypot(dy);
        value += d;
        grad.push(if d > 0.0 { [inv * dx / d, inv * dy / d] } else { [0.0, 0.0] });
    }
    Ok(FineLoss { value: value * inv, grad })
}

/// Weighted combination of both stages with gradients scaled to match.
#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub value: f64,
    pub coarse: Option<f64>,
    pub fine: Option<f64>,
    pub grad_confidence: Vec<(usize, usize, f64)>,
    pub grad_fine: Vec<[f64; 2]>,
}

/// `(1 − λ)·coarse + λ·fine`. A term with zero weight is not required.
pub fn combine(coarse: Option<CoarseLoss>, fine: Option<FineLoss>, lambda: f64, n_fine: usize) -> Result<TotalLoss> {
    let wc = 1.0 - lambda;
    let wf = lambda;
    let coarse = if wc > 0.0 { Some(coarse.ok_or(LossError::EmptySupervision)?) } else { None };
    let fine = if wf > 0.0 { Some(fine.ok_or(LossError::EmptySupervision)?) } else { None };
    let mut value = 0.0;
    let mut grad_confidence = Vec::new();
    if let Some(c) = &coarse {
        value += wc * c.value;
        grad_confidence = c.grad.iter().map(|&(i, j, g)| (i, j, wc * g)).collect();
    }
    let mut grad_fine = vec![[0.0; 2]; n_fine];
    if let Some(f) = &fine {
        value += wf * f.value;
        for (dst, g) in grad_fine.iter_mut().zip(&f.grad) {
            *dst = [wf * g[0], wf * g[1]];
        }
    }
    Ok(TotalLoss {
        value,
        coarse: coarse.map(|c| c.value),
        fine: fine.map(|f| f.value),
        grad_confidence,
        grad_fine,
    })
}

/// Total epipolar loss. The coarse mask is rebuilt from the current `C` and
/// treated as a constant when differentiating.
pub fn total_epipolar_loss(
    c: &ConfidenceMatrix,
    fine_matches: &[(HomPoint2, HomPoint2)],
    f: &FundamentalMatrix,
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    cfg.validate()?;
    let coarse = if cfg.lambda < 1.0 {
        let sets = epipolar_line_set(f, &c.grid1, &c.grid2, cfg.theta);
        let mask = epipolar_mask(c, &sets, cfg.mask);
        Some(coarse_loss(c, &mask)?)
    } else {
        None
    };
    let fine = if cfg.lambda > 0.0 { Some(fine_loss(f, fine_matches, cfg.fine_weight_scale)?) } else { None };
    combine(coarse, fine, cfg.lambda, fine_matches.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cross_matrix, Vec3};

    fn conf(rows: &[&[f64]], g1: GridSpec, g2: GridSpec) -> ConfidenceMatrix {
        let r = rows.len();
        let c = rows[0].len();
        ConfidenceMatrix::new(DMatrix::from_fn(r, c, |i, j| rows[i][j]), g1, g2).unwrap()
    }

    #[test]
    fn horizontal_line_selects_top_row() {
        let grid = GridSpec::new(4, 4, 8);
        let top = cells_near_line(&Line2::new(0.0, 1.0, 0.0), &grid, std::f64::consts::SQRT_2);
        assert_eq!(top, vec![0, 1, 2, 3]);
        // θ → 0: no centre lies exactly on v = 0, but v = 12 passes through row 1 centres
        assert!(cells_near_line(&Line2::new(0.0, 1.0, 0.0), &grid, 1e-9).is_empty());
        assert_eq!(cells_near_line(&Line2::new(0.0, 1.0, -12.0), &grid, 1e-9), vec![4, 5, 6, 7]);
        let wide = cells_near_line(&Line2::new(0.0, 1.0, 0.0), &grid, 3.0 * std::f64::consts::SQRT_2);
        assert!(top.iter().all(|j| wide.contains(j)));
        assert_eq!(wide, vec![0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn argmax_mask_examples() {
        let g1 = GridSpec::new(1, 1, 8);
        let g4 = GridSpec::new(1, 4, 8);
        let c = conf(&[&[0.1, 0.9, 0.3, 0.2]], g1, g4);
        let m = epipolar_classification_mask(&c, &vec![vec![0, 2, 3]]);
        assert_eq!(m.positives, vec![vec![2]]);

        let g2 = GridSpec::new(1, 2, 8);
        let tie = conf(&[&[0.5, 0.5]], g1, g2);
        assert_eq!(epipolar_classification_mask(&tie, &vec![vec![0, 1]]).positives, vec![vec![0]]);
        let empty = epipolar_classification_mask(&tie, &vec![vec![]]);
        assert!(empty.excluded(0));
        assert_eq!(empty.dense(), DMatrix::zeros(1, 2));
    }

    #[test]
    fn naive_mask_examples() {
        let m = naive_epipolar_mask(&vec![vec![0, 2, 3], vec![]], 4);
        assert_eq!(m.dense().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 1.0, 1.0]);
        assert_eq!(m.row_sum(0), 3);
        assert_eq!(m.row_sum(1), 0);
    }

    #[test]
    fn gt_mask_examples() {
        let id = gt_classification_mask(&[Some(0), Some(1), Some(2)], 3);
        assert_eq!(id.dense(), DMatrix::identity(3, 3));
        let occ = gt_classification_mask(&[Some(0), None], 2);
        assert!(occ.excluded(1));
        // shift by one cell to the right on a 1x4 grid: superdiagonal
        let shifted = gt_classification_mask(&[Some(1), Some(2), Some(3), None], 4);
        let d = shifted.dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(d[(i, j)], if j == i + 1 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn coarse_loss_examples() {
        let g = GridSpec::new(4, 4, 8);
        let targets: Vec<Option<usize>> = (0..16).map(Some).collect();
        let mask = gt_classification_mask(&targets, 16);
        let perfect = ConfidenceMatrix::new(DMatrix::identity(16, 16), g, g).unwrap();
        let l = coarse_loss(&perfect, &mask).unwrap();
        assert!((l.value + (1.0 - CONFIDENCE_EPS).ln()).abs() < 1e-15);
        let uniform = ConfidenceMatrix::new(DMatrix::from_element(16, 16, 1.0 / 16.0), g, g).unwrap();
        assert!((coarse_loss(&uniform, &mask).unwrap().value - 16f64.ln()).abs() < 1e-12);
        let none = gt_classification_mask(&[None; 16], 16);
        assert_eq!(coarse_loss(&uniform, &none), Err(LossError::EmptySupervision));
    }

    #[test]
    fn naive_coarse_loss_is_per_positive_mean() {
        // 4x4 grid, five positives per row with hand-picked confidences
        let g = GridSpec::new(4, 4, 8);
        let c = ConfidenceMatrix::new(DMatrix::from_fn(16, 16, |i, j| 0.01 + 0.002 * ((i * 7 + j * 3) % 11) as f64), g, g)
            .unwrap();
        let sets: LineSets = (0..16).map(|i| (0..5).map(|k| (i + 3 * k) % 16).collect::<Vec<_>>()).collect();
        let mut sorted = sets.clone();
        sorted.iter_mut().for_each(|s| s.sort());
        let mask = naive_epipolar_mask(&sorted, 16);
        let mut expected = 0.0;
        for (i, s) in sorted.iter().enumerate() {
            for &j in s {
                expected -= c.values[(i, j)].ln();
            }
        }
        expected /= 80.0;
        assert!((coarse_loss(&c, &mask).unwrap().value - expected).abs() < 1e-12);
    }

    #[test]
    fn d_epi_worked_example() {
        let f = FundamentalMatrix::new(cross_matrix(&Vec3::new(1.0, 0.0, 0.0))).unwrap();
        let x1 = HomPoint2::pixel(0.0, 0.0);
        let (d, g) = d_epi(&f, &x1, &HomPoint2::pixel(0.3, 0.5)).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
        // line (0, -1, 0): residual -0.5, distance grows with v
        assert_eq!(g, [0.0, 1.0]);
        let (d0, g0) = d_epi(&f, &x1, &HomPoint2::pixel(0.7, 0.0)).unwrap();
        assert_eq!((d0, g0), (0.0, [0.0, 0.0]));
        let (d10, _) = d_epi(&f.scaled(10.0).unwrap(), &x1, &HomPoint2::pixel(0.3, 0.5)).unwrap();
        assert!((d10 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fine_losses() {
        let f = FundamentalMatrix::new(cross_matrix(&Vec3::new(1.0, 0.0, 0.0))).unwrap();
        let x1 = HomPoint2::pixel(0.0, 0.0);
        let on = [(x1, HomPoint2::pixel(1.0, 0.0)), (x1, HomPoint2::pixel(-4.0, 0.0))];
        assert_eq!(fine_loss(&f, &on, 1.0).unwrap().value, 0.0);
        let two = [(x1, HomPoint2::pixel(1.0, 0.2)), (x1, HomPoint2::pixel(-4.0, -0.4))];
        assert!((fine_loss(&f, &two, 1.0).unwrap().value - 0.3).abs() < 1e-15);
        assert_eq!(fine_loss(&f, &[], 1.0), Err(LossError::EmptySupervision));

        assert_eq!(gt_fine_loss(&[[1.0, 1.0]], &[[1.0, 1.0]], 1.0).unwrap().value, 0.0);
        assert_eq!(gt_fine_loss(&[[3.0, 4.0]], &[[0.0, 0.0]], 1.0).unwrap().value, 5.0);
        // offset perpendicular to the line v = 0 from a target on the line
        let gt = gt_fine_loss(&[[2.0, 0.7]], &[[2.0, 0.0]], 1.0).unwrap().value;
        let epi = fine_loss(&f, &[(x1, HomPoint2::pixel(2.0, 0.7))], 1.0).unwrap().value;
        assert!((gt - epi).abs() < 1e-15);
    }

    #[test]
    fn total_loss_weights() {
        let g1 = GridSpec::new(1, 1, 8);
        let g2 = GridSpec::new(1, 2, 8);
        let f = FundamentalMatrix::new(cross_matrix(&Vec3::new(1.0, 0.0, 0.0))).unwrap();
        let c = conf(&[&[0.6, 0.3]], g1, g2);
        let fm = [(HomPoint2::pixel(4.0, 4.0), HomPoint2::pixel(5.0, 4.5))];
        let base = LossConfig::default();
        let coarse_only = total_epipolar_loss(&c, &fm, &f, &LossConfig { lambda: 0.0, ..base }).unwrap();
        let fine_only = total_epipolar_loss(&c, &fm, &f, &LossConfig { lambda: 1.0, ..base }).unwrap();
        assert_eq!(coarse_only.value, coarse_only.coarse.unwrap());
        assert_eq!(fine_only.value, fine_only.fine.unwrap());
        let half = total_epipolar_loss(&c, &fm, &f, &base).unwrap();
        assert!((half.value - 0.5 * (coarse_only.value + fine_only.value)).abs() < 1e-15);

        let synthetic = combine(
            Some(CoarseLoss { value: 2.0, grad: vec![] }),
            Some(FineLoss { value: 0.3, grad: vec![] }),
            0.5,
            0,
        )
        .unwrap();
        assert!((synthetic.value - 1.15).abs() < 1e-15);
    }
}
