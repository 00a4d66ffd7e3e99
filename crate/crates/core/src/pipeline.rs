//! Training regimes: supervised pretraining, pose-supervised epipolar
//! finetuning and bootstrapped finetuning from estimated fundamentals.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::estimation::{ransac_fundamental, RansacConfig};
use crate::fixtures::random_unit;
use crate::geometry::{axis_angle, FundamentalMatrix, GeometryError, HomPoint2, RelativePose};
use crate::losses::{
    coarse_loss, combine, epipolar_line_set, epipolar_mask, fine_loss, gt_classification_mask, gt_fine_loss,
    CoarseLoss, FineLoss, LineSets, LossConfig, LossError,
};
use crate::matcher::{
    backward, coarse_forward, refine_fine, CoarseMatch, FeatureGrids, MatcherConfig, MatcherError, MatcherGrads,
    MatcherParams, Sgd,
};
use crate::metrics::{evaluate, predict_matches, EvalReport};
use crate::synth::{GtTarget, RenderedPair};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss on pair {0}")]
    NonFiniteLoss(usize),
    #[error("no pair survived the bootstrap filter")]
    EmptyDatasetAfterFilter,
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossConfig,
    pub seed: u64,
    /// Add as many source-domain pairs (supervised loss) to every batch.
    pub replay_source: bool,
    pub learn_temperature: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.3,
            weight_decay: 1e-4,
            momentum: 0.9,
            batch_size: 8,
            epochs: 10,
            loss: LossConfig::default(),
            seed: 0,
            replay_source: false,
            learn_temperature: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(PipelineError::InvalidConfig("lr and batch_size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(PipelineError::InvalidConfig("bad weight decay or momentum".into()));
        }
        self.loss.validate()?;
        Ok(())
    }

    fn optimizer(&self) -> Sgd {
        let mut sgd = Sgd::new(self.lr, self.momentum, self.weight_decay);
        sgd.learn_temperature = self.learn_temperature;
        sgd
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseNoiseConfig {
    pub rotation_deg: f64,
    pub translation_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub min_matches: usize,
    pub min_inliers: usize,
    pub ransac: RansacConfig,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            min_matches: 30,
            min_inliers: 12,
            ransac: crate::metrics::eval_ransac(),
        }
    }
}

impl BootstrapConfig {
    /// Thresholds for full-resolution images.
    pub fn full_resolution() -> Self {
        Self { min_matches: 100, min_inliers: 20, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.min_inliers > self.min_matches {
            return Err(PipelineError::InvalidConfig("min_inliers exceeds min_matches".into()));
        }
        self.ransac.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }
}

/// What a training pair is supervised with.
#[derive(Debug, Clone, PartialEq)]
pub enum Supervision {
    /// Ground-truth cell and subpixel target per image-1 cell.
    Correspondence(Vec<Option<GtTarget>>),
    /// Fundamental matrix with its precomputed line sets.
    Epipolar { f: FundamentalMatrix, line_sets: LineSets },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub id: usize,
    pub grids: FeatureGrids,
    pub supervision: Supervision,
}

impl TrainingSample {
    pub fn correspondence(id: usize, pair: &RenderedPair, cfg: &MatcherConfig) -> Result<Self, PipelineError> {
        let grids = FeatureGrids::new(&pair.image1, &pair.image2, cfg)?;
        let targets = pair.gt_targets(&grids.first.grid);
        Ok(Self { id, grids, supervision: Supervision::Correspondence(targets) })
    }

    pub fn epipolar(
        id: usize,
        pair: &RenderedPair,
        f: FundamentalMatrix,
        cfg: &MatcherConfig,
        theta: f64,
    ) -> Result<Self, PipelineError> {
        let grids = FeatureGrids::new(&pair.image1, &pair.image2, cfg)?;
        let line_sets = epipolar_line_set(&f, &grids.first.grid, &grids.second.grid, theta);
        Ok(Self { id, grids, supervision: Supervision::Epipolar { f, line_sets } })
    }
}

/// Loss terms of one pair (unweighted), for logging.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairLoss {
    pub total: f64,
    pub coarse: f64,
    pub fine: f64,
}

/// Seeded subset of `rows` with `fraction` of its size (at least one).
fn fine_rows(rows: &[usize], fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rows.is_empty() {
        return Vec::new();
    }
    let k = ((rows.len() as f64 * fraction).round() as usize).clamp(1, rows.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, rows.len(), k).iter().map(|i| rows[i]).collect();
    picked.sort_unstable();
    picked
}

/// Loss and parameter gradient of one sample. `rng` drives the choice of
/// finely supervised rows.
pub fn sample_gradient(
    sample: &TrainingSample,
    params: &MatcherParams,
    mcfg: &MatcherConfig,
    loss: &LossConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(PairLoss, MatcherGrads), PipelineError> {
    let coarse = coarse_forward(&sample.grids, params);
    let c = &coarse.confidence;
    let (mask, fine_targets): (_, Vec<(usize, usize, Option<[f64; 2]>)>) = match &sample.supervision {
        Supervision::Correspondence(targets) => {
            let cells: Vec<Option<usize>> = targets.iter().map(|t| t.map(|t| t.cell)).collect();
            let mask = gt_classification_mask(&cells, c.values.ncols());
            let rows: Vec<usize> = (0..targets.len()).filter(|&i| targets[i].is_some()).collect();
            let picked = fine_rows(&rows, loss.fine_supervision_fraction, rng);
            let t = picked
                .into_iter()
                .map(|i| {
                    let g = targets[i].unwrap();
                    (i, g.cell, Some(g.point))
                })
                .collect();
            (mask, t)
        }
        Supervision::Epipolar { line_sets, .. } => {
            let mask = epipolar_mask(c, line_sets, loss.mask);
            // The fine window is centred on the most confident cell of the line.
            let argmax = epipolar_mask(c, line_sets, crate::losses::MaskKind::Argmax);
            let rows: Vec<usize> = (0..line_sets.len()).filter(|&i| !argmax.excluded(i)).collect();
            let picked = fine_rows(&rows, loss.fine_supervision_fraction, rng);
            let t = picked.into_iter().map(|i| (i, argmax.positives[i][0], None)).collect();
            (mask, t)
        }
    };

    let coarse_term: Option<CoarseLoss> =
        if loss.lambda < 1.0 && mask.num_positives() > 0 { Some(coarse_loss(c, &mask)?) } else { None };

    let pairs: Vec<CoarseMatch> = fine_targets.iter().map(|&(i, j, _)| CoarseMatch { i, j, confidence: 1.0 }).collect();
    let fine = refine_fine(&sample.grids, params, &pairs, mcfg.window_radius);
    let fine_term: Option<FineLoss> = if loss.lambda > 0.0 && !fine.matches.is_empty() {
        match &sample.supervision {
            Supervision::Correspondence(_) => {
                let pred: Vec<[f64; 2]> = fine.matches.iter().map(|m| m.x2_hat).collect();
                let targets: Vec<[f64; 2]> = fine
                    .matches
                    .iter()
                    .map(|m| fine_targets.iter().find(|t| t.0 == m.cell1).and_then(|t| t.2).unwrap())
                    .collect();
                Some(gt_fine_loss(&pred, &targets, loss.fine_weight_scale)?)
            }
            Supervision::Epipolar { f, .. } => {
                let m: Vec<(HomPoint2, HomPoint2)> = fine
                    .matches
                    .iter()
                    .map(|m| (HomPoint2::pixel(m.x1[0], m.x1[1]), HomPoint2::pixel(m.x2_hat[0], m.x2_hat[1])))
                    .collect();
                Some(fine_loss(f, &m, loss.fine_weight_scale)?)
            }
        }
    } else {
        None
    };

    // A stage without supervision on this pair simply contributes nothing.
    let (lambda, coarse_term, fine_term) = match (coarse_term, fine_term) {
        (None, None) => return Ok((PairLoss::default(), MatcherGrads::zeros_like(params))),
        (Some(c), None) => (0.0, Some(c), None),
        (None, Some(f)) => (1.0, None, Some(f)),
        (c, f) => (loss.lambda, c, f),
    };
    let total = combine(coarse_term, fine_term, lambda, fine.matches.len())?;
    let grad_c = (!total.grad_confidence.is_empty()).then(|| {
        let mut g = DMatrix::zeros(c.values.nrows(), c.values.ncols());
        for &(i, j, v) in &total.grad_confidence {
            g[(i, j)] += v;
        }
        g
    });
    let grads = backward(&sample.grids, params, &coarse, grad_c.as_ref(), &fine, &total.grad_fine)?;
    let pl = PairLoss { total: total.value, coarse: total.coarse.unwrap_or(0.0), fine: total.fine.unwrap_or(0.0) };
    if !pl.total.is_finite() {
        return Err(PipelineError::NonFiniteLoss(sample.id));
    }
    Ok((pl, grads))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub coarse_loss: f64,
    pub fine_loss: f64,
    pub eval: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MatcherParams,
    pub log: Vec<EpochLog>,
    /// Pairs left out of training (degenerate geometry, failed filter).
    pub skipped: usize,
}

/// Optional per-epoch evaluation.
pub struct EvalHook<'a> {
    pub pairs: &'a [RenderedPair],
    pub ransac: RansacConfig,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mini-batch SGD over `samples`. With `replay`, every batch is topped up
/// with as many `replay` samples, cycled in a seeded order.
pub fn train(
    samples: &[TrainingSample],
    replay: &[TrainingSample],
    params: MatcherParams,
    mcfg: &MatcherConfig,
    cfg: &TrainConfig,
    eval: Option<&EvalHook>,
) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(PipelineError::EmptyDataset);
    }
    let mut params = params;
    let mut opt = cfg.optimizer();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut replay_rng = stream_rng(cfg.seed, u64::MAX);
    let mut replay_order: Vec<usize> = (0..replay.len()).collect();
    replay_order.shuffle(&mut replay_rng);
    let mut replay_cursor = 0;
    for epoch in 0..cfg.epochs {
        let mut order_rng = stream_rng(cfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut order_rng);
        let (mut sum, mut sum_c, mut sum_f, mut count) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut items: Vec<&TrainingSample> = batch.iter().map(|&k| &samples[k]).collect();
            if cfg.replay_source && !replay.is_empty() {
                for _ in 0..batch.len() {
                    if replay_cursor >= replay_order.len() {
                        replay_order.shuffle(&mut replay_rng);
                        replay_cursor = 0;
                    }
                    items.push(&replay[replay_order[replay_cursor]]);
                    replay_cursor += 1;
                }
            }
            let step_seed = order_rng.next_u64();
            let results: Vec<Result<(PairLoss, MatcherGrads), PipelineError>> = items
                .par_iter()
                .enumerate()
                .map(|(k, s)| {
                    let mut rng = stream_rng(step_seed, k as u64);
                    sample_gradient(s, &params, mcfg, &cfg.loss, &mut rng)
                })
                .collect();
            let mut grads = MatcherGrads::zeros_like(&params);
            for r in results {
                let (l, g) = r?;
                grads.add_assign(&g);
                sum += l.total;
                sum_c += l.coarse;
                sum_f += l.fine;
                count += 1;
            }
            grads.scale(1.0 / items.len() as f64);
            opt.step(&mut params, &grads)?;
        }
        let n = count.max(1) as f64;
        let eval_report = match eval {
            Some(h) => evaluate(&params, mcfg, h.pairs, &h.ransac).ok(),
            None => None,
        };
        log::info!("epoch {epoch}: loss {:.4} coarse {:.4} fine {:.4}", sum / n, sum_c / n, sum_f / n);
        log.push(EpochLog { epoch, loss: sum / n, coarse_loss: sum_c / n, fine_loss: sum_f / n, eval: eval_report });
    }
    Ok(TrainOutcome { params, log, skipped: 0 })
}

/// Correspondence-supervised samples for every pair.
pub fn correspondence_samples(
    pairs: &[RenderedPair],
    mcfg: &MatcherConfig,
) -> Result<Vec<TrainingSample>, PipelineError> {
    pairs.par_iter().enumerate().map(|(i, p)| TrainingSample::correspondence(i, p, mcfg)).collect()
}

pub fn pretrain(
    pairs: &[RenderedPair],
    params: MatcherParams,
    mcfg: &MatcherConfig,
    cfg: &TrainConfig,
    eval: Option<&EvalHook>,
) -> Result<TrainOutcome, PipelineError> {
    let samples = correspondence_samples(pairs, mcfg)?;
    train(&samples, &[], params, mcfg, cfg, eval)
}

/// Rotates `R` about a random axis and tilts the direction of `t` about a
/// random axis perpendicular to it, by exactly the given angles.
pub fn perturb_pose(pose: &RelativePose, noise: &PoseNoiseConfig, rng: &mut ChaCha8Rng) -> RelativePose {
    let rot = axis_angle(random_unit(rng), noise.rotation_deg.to_radians());
    let axis = loop {
        let a = random_unit(rng).cross(&pose.translation);
        if a.norm() > 1e-6 * pose.translation.norm().max(1e-300) {
            break a.normalize();
        }
        if pose.translation.norm() == 0.0 {
            break random_unit(rng);
        }
    };
    let trans = axis_angle(axis, noise.translation_deg.to_radians());
    RelativePose { rotation: rot * pose.rotation, translation: trans * pose.translation }
}

/// Ground-truth fundamentals (optionally from perturbed poses); pairs with
/// a degenerate baseline are skipped and counted.
pub fn pose_fundamentals(
    pairs: &[RenderedPair],
    noise: &PoseNoiseConfig,
    seed: u64,
) -> (Vec<Option<FundamentalMatrix>>, usize) {
    let mut skipped = 0;
    let fs = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let pose = if noise.rotation_deg == 0.0 && noise.translation_deg == 0.0 {
                p.pose
            } else {
                perturb_pose(&p.pose, noise, &mut stream_rng(seed ^ 0x5eed_0f_f5e7, i as u64))
            };
            let f = crate::geometry::fundamental_from_pose(&p.intrinsics, &p.intrinsics, &pose);
            if let Err(GeometryError::DegenerateBaseline(_)) = f {
                skipped += 1;
            }
            f.ok()
        })
        .collect();
    (fs, skipped)
}

/// Epipolar samples for the pairs with a fundamental matrix.
pub fn epipolar_samples(
    pairs: &[RenderedPair],
    fundamentals: &[Option<FundamentalMatrix>],
    mcfg: &MatcherConfig,
    theta: f64,
) -> Result<Vec<TrainingSample>, PipelineError> {
    pairs
        .par_iter()
        .zip(fundamentals)
        .enumerate()
        .filter_map(|(i, (p, f))| f.map(|f| TrainingSample::epipolar(i, p, f, mcfg, theta)))
        .collect()
}

/// Epipolar finetuning with fundamentals from (optionally perturbed) poses.
pub fn finetune_pose_supervised(
    pairs: &[RenderedPair],
    source: &[RenderedPair],
    params: MatcherParams,
    mcfg: &MatcherConfig,
    cfg: &TrainConfig,
    noise: &PoseNoiseConfig,
    eval: Option<&EvalHook>,
) -> Result<TrainOutcome, PipelineError> {
    let (fs, skipped) = pose_fundamentals(pairs, noise, cfg.seed);
    finetune_with_fundamentals(pairs, &fs, source, params, mcfg, cfg, eval).map(|mut o| {
        o.skipped += skipped;
        o
    })
}

/// Shared path of both finetuning regimes.
pub fn finetune_with_fundamentals(
    pairs: &[RenderedPair],
    fundamentals: &[Option<FundamentalMatrix>],
    source: &[RenderedPair],
    params: MatcherParams,
    mcfg: &MatcherConfig,
    cfg: &TrainConfig,
    eval: Option<&EvalHook>,
) -> Result<TrainOutcome, PipelineError> {
    let samples = epipolar_samples(pairs, fundamentals, mcfg, cfg.loss.theta)?;
    let replay = if cfg.replay_source { correspondence_samples(source, mcfg)? } else { Vec::new() };
    let skipped = pairs.len() - samples.len();
    let mut out = train(&samples, &replay, params, mcfg, cfg, eval)?;
    out.skipped = skipped;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BootstrapEntry {
    pub id: usize,
    pub num_matches: usize,
    pub inliers: Option<usize>,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BootstrapReport {
    pub entries: Vec<BootstrapEntry>,
    pub kept: usize,
    pub dropped_matches: usize,
    pub dropped_inliers: usize,
    #[serde(skip)]
    pub fundamentals: Vec<Option<FundamentalMatrix>>,
}

impl BootstrapReport {
    pub fn dropped(&self) -> usize {
        self.dropped_matches + self.dropped_inliers
    }
}

/// Estimates one fundamental per pair from the matcher's own matches and
/// keeps those passing both thresholds.
pub fn bootstrap_fundamentals(
    pairs: &[RenderedPair],
    params: &MatcherParams,
    mcfg: &MatcherConfig,
    bcfg: &BootstrapConfig,
) -> Result<BootstrapReport, PipelineError> {
    bcfg.validate()?;
    let estimates: Vec<(usize, Option<(FundamentalMatrix, usize)>)> = pairs
        .par_iter()
        .map(|p| {
            let matches = predict_matches(p, params, mcfg);
            let k = &p.intrinsics;
            let est = if matches.len() >= bcfg.min_matches {
                ransac_fundamental(&matches, k, k, &bcfg.ransac).ok().map(|r| (r.f, r.inlier_count))
            } else {
                None
            };
            (matches.len(), est)
        })
        .collect();
    let mut report = BootstrapReport {
        entries: Vec::with_capacity(pairs.len()),
        kept: 0,
        dropped_matches: 0,
        dropped_inliers: 0,
        fundamentals: Vec::with_capacity(pairs.len()),
    };
    for (id, (n, est)) in estimates.into_iter().enumerate() {
        let inliers = est.map(|e| e.1);
        let kept = n >= bcfg.min_matches && inliers.is_some_and(|c| c >= bcfg.min_inliers);
        if kept {
            report.kept += 1;
        } else if n < bcfg.min_matches {
            report.dropped_matches += 1;
        } else {
            report.dropped_inliers += 1;
        }
        report.fundamentals.push(if kept { est.map(|e| e.0) } else { None });
        report.entries.push(BootstrapEntry { id, num_matches: n, inliers, kept });
    }
    Ok(report)
}

/// Estimates fundamentals once with the starting model, then finetunes on
/// them exactly as in the pose-supervised regime.
pub fn bootstrap_finetune(
    pairs: &[RenderedPair],
    source: &[RenderedPair],
    params: MatcherParams,
    mcfg: &MatcherConfig,
    cfg: &TrainConfig,
    bcfg: &BootstrapConfig,
    eval: Option<&EvalHook>,
) -> Result<(TrainOutcome, BootstrapReport), PipelineError> {
    let report = bootstrap_fundamentals(pairs, &params, mcfg, bcfg)?;
    if report.kept == 0 {
        return Err(PipelineError::EmptyDatasetAfterFilter);
    }
    let out = finetune_with_fundamentals(pairs, &report.fundamentals, source, params, mcfg, cfg, eval)?;
    Ok((out, report))
}

/// Per-epoch CSV: losses followed by evaluation columns when present.
pub fn write_metrics_csv(path: &Path, log: &[EpochLog]) -> Result<(), PipelineError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,loss,coarse_loss,fine_loss,auc5,auc10,auc20,precision")?;
    for e in log {
        let (a5, a10, a20, p) = e
            .eval
            .as_ref()
            .map(|r| (r.auc5.to_string(), r.auc10.to_string(), r.auc20.to_string(), r.precision.to_string()))
            .unwrap_or_default();
        writeln!(w, "{},{},{},{},{a5},{a10},{a20},{p}", e.epoch, e.loss, e.coarse_loss, e.fine_loss)?;
    }
    w.flush()?;
    Ok(())
}
