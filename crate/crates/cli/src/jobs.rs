//! Fully resolved commands and their execution. A job holds every value a
//! run depends on, so serializing it is enough to replay the run.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use epimatch::estimation::{estimate_relative_pose, read_matches, write_matches, RansacConfig};
use epimatch::geometry::{read_pose_file, CameraIntrinsics, EssentialMatrix};
use epimatch::gradcheck::{epipolar_distance_suite, matcher_suite, Fault, SuiteReport};
use epimatch::image::Image;
use epimatch::matcher::{load_checkpoint, save_checkpoint, MatcherConfig, MatcherParams};
use epimatch::metrics::{aggregate, evaluate_matches, predict_matches, PairEval};
use epimatch::pairgen::{generate_pairs, write_pairs, OverlapRange, PseudoDepthModel};
use epimatch::pipeline::{
    bootstrap_finetune, finetune_pose_supervised, pretrain, write_metrics_csv, BootstrapConfig, EvalHook,
    PoseNoiseConfig, TrainConfig, TrainOutcome,
};
use epimatch::synth::{read_dataset, read_pair, write_dataset, RenderedPair, SceneSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::overlay::{self, Colouring};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Job {
    Synth(SynthJob),
    Pairs(PairsJob),
    Pretrain(PretrainJob),
    Finetune(FinetuneJob),
    Bootstrap(BootstrapJob),
    Match(MatchJob),
    Pose(PoseJob),
    Eval(EvalJob),
    Gradcheck(GradcheckJob),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthJob {
    pub spec: SceneSpec,
    pub pairs: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsJob {
    pub poses: PathBuf,
    pub model: PseudoDepthModel,
    pub range: OverlapRange,
    pub stride: usize,
    pub samples: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainJob {
    pub data: PathBuf,
    /// Starting checkpoint; a fresh initialization from `init_seed` if absent.
    pub init: Option<PathBuf>,
    pub init_seed: u64,
    pub eval_data: Option<PathBuf>,
    pub matcher: MatcherConfig,
    pub train: TrainConfig,
    pub ransac: RansacConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneJob {
    pub data: PathBuf,
    pub init: PathBuf,
    /// Source-domain pairs replayed with correspondence supervision.
    pub source: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub matcher: MatcherConfig,
    pub train: TrainConfig,
    pub noise: PoseNoiseConfig,
    pub ransac: RansacConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapJob {
    pub data: PathBuf,
    pub init: PathBuf,
    pub source: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub matcher: MatcherConfig,
    pub train: TrainConfig,
    pub bootstrap: BootstrapConfig,
    pub ransac: RansacConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MatchInput {
    /// A rendered pair file; overlays are coloured against its ground truth.
    Pair(PathBuf),
    Images(PathBuf, PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchJob {
    pub checkpoint: PathBuf,
    pub input: MatchInput,
    pub matcher: MatcherConfig,
    pub threshold: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseJob {
    pub matches: PathBuf,
    pub k1: CameraIntrinsics,
    pub k2: CameraIntrinsics,
    pub ransac: RansacConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub matcher: MatcherConfig,
    pub ransac: RansacConfig,
    pub threshold: f64,
    pub overlays: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckJob {
    pub seed: u64,
    pub epipolar_instances: usize,
    pub matcher_instances: usize,
    pub sign_flip: bool,
    pub out: PathBuf,
}

/// Raised when a gradient check runs to completion but fails.
#[derive(Debug, thiserror::Error)]
#[error("gradient check failed")]
pub struct GradcheckFailed;

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Synth(_) => "synth",
            Job::Pairs(_) => "pairs",
            Job::Pretrain(_) => "pretrain",
            Job::Finetune(_) => "finetune",
            Job::Bootstrap(_) => "bootstrap",
            Job::Match(_) => "match",
            Job::Pose(_) => "pose",
            Job::Eval(_) => "eval",
            Job::Gradcheck(_) => "gradcheck",
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            Job::Synth(j) => &j.out,
            Job::Pairs(j) => &j.out,
            Job::Pretrain(j) => &j.out,
            Job::Finetune(j) => &j.out,
            Job::Bootstrap(j) => &j.out,
            Job::Match(j) => &j.out,
            Job::Pose(j) => &j.out,
            Job::Eval(j) => &j.out,
            Job::Gradcheck(j) => &j.out,
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        let slot = match self {
            Job::Synth(j) => &mut j.out,
            Job::Pairs(j) => &mut j.out,
            Job::Pretrain(j) => &mut j.out,
            Job::Finetune(j) => &mut j.out,
            Job::Bootstrap(j) => &mut j.out,
            Job::Match(j) => &mut j.out,
            Job::Pose(j) => &mut j.out,
            Job::Eval(j) => &mut j.out,
            Job::Gradcheck(j) => &mut j.out,
        };
        *slot = out;
    }

    /// Every seed the run consumes, by role.
    pub fn seeds(&self) -> BTreeMap<&'static str, u64> {
        let mut s = BTreeMap::new();
        match self {
            Job::Synth(j) => {
                s.insert("scene", j.spec.seed);
            }
            Job::Pairs(_) | Job::Match(_) => {}
            Job::Pretrain(j) => {
                s.insert("init", j.init_seed);
                s.insert("train", j.train.seed);
                s.insert("ransac", j.ransac.seed);
            }
            Job::Finetune(j) => {
                s.insert("train", j.train.seed);
                s.insert("ransac", j.ransac.seed);
            }
            Job::Bootstrap(j) => {
                s.insert("train", j.train.seed);
                s.insert("bootstrap_ransac", j.bootstrap.ransac.seed);
                s.insert("ransac", j.ransac.seed);
            }
            Job::Pose(j) => {
                s.insert("ransac", j.ransac.seed);
            }
            Job::Eval(j) => {
                s.insert("ransac", j.ransac.seed);
            }
            Job::Gradcheck(j) => {
                s.insert("gradcheck", j.seed);
            }
        }
        s
    }

    pub fn run(&self) -> anyhow::Result<()> {
        fs::create_dir_all(self.out()).with_context(|| format!("creating {}", self.out().display()))?;
        match self {
            Job::Synth(j) => run_synth(j),
            Job::Pairs(j) => run_pairs(j),
            Job::Pretrain(j) => run_pretrain(j),
            Job::Finetune(j) => run_finetune(j),
            Job::Bootstrap(j) => run_bootstrap(j),
            Job::Match(j) => run_match(j),
            Job::Pose(j) => run_pose(j),
            Job::Eval(j) => run_eval(j),
            Job::Gradcheck(j) => run_gradcheck(j),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_pairs(dir: &Path) -> anyhow::Result<Vec<RenderedPair>> {
    Ok(read_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?.pairs)
}

fn load_params(path: &Path, cfg: &MatcherConfig) -> anyhow::Result<MatcherParams> {
    let params = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    params.check_shapes(cfg).with_context(|| format!("checkpoint {}", path.display()))?;
    Ok(params)
}

fn run_synth(j: &SynthJob) -> anyhow::Result<()> {
    let ds = write_dataset(&j.out, &j.spec, j.pairs).context("generating dataset")?;
    log::info!("wrote {} pairs of domain {} to {}", ds.len(), j.spec.name, j.out.display());
    Ok(())
}

fn run_pairs(j: &PairsJob) -> anyhow::Result<()> {
    j.model.validate()?;
    let file = fs::File::open(&j.poses).with_context(|| format!("opening {}", j.poses.display()))?;
    let poses = read_pose_file(BufReader::new(file)).with_context(|| format!("reading {}", j.poses.display()))?;
    let pairs = generate_pairs(&poses, &j.model, &j.range, j.stride, j.samples)?;
    let out = fs::File::create(j.out.join("pairs.txt"))?;
    let mut w = BufWriter::new(out);
    write_pairs(&mut w, &poses, &pairs)?;
    w.flush()?;
    log::info!("{} frames, {} pairs", poses.len(), pairs.len());
    Ok(())
}

fn eval_hook_pairs(path: &Option<PathBuf>) -> anyhow::Result<Vec<RenderedPair>> {
    path.as_deref().map(load_pairs).transpose().map(Option::unwrap_or_default)
}

fn write_run(out: &Path, job_config: &impl Serialize, outcome: &TrainOutcome) -> anyhow::Result<()> {
    let mut table = toml::Table::try_from(job_config)?;
    table.remove("out");
    fs::write(out.join("config.toml"), toml::to_string(&table)?)?;
    write_metrics_csv(&out.join("metrics.csv"), &outcome.log)?;
    save_checkpoint(&out.join("model.ckpt"), &outcome.params)?;
    let summary = serde_json::json!({
        "epochs": outcome.log.len(),
        "skipped_pairs": outcome.skipped,
        "final_loss": outcome.log.last().map(|e| e.loss),
        "final_eval": outcome.log.last().and_then(|e| e.eval.clone()),
    });
    write_json(&out.join("summary.json"), &summary)
}

fn run_pretrain(j: &PretrainJob) -> anyhow::Result<()> {
    j.matcher.validate()?;
    let pairs = load_pairs(&j.data)?;
    let params = match &j.init {
        Some(p) => load_params(p, &j.matcher)?,
        None => MatcherParams::init(&j.matcher, j.init_seed),
    };
    let eval_pairs = eval_hook_pairs(&j.eval_data)?;
    let hook = EvalHook { pairs: &eval_pairs, ransac: j.ransac };
    let outcome = pretrain(&pairs, params, &j.matcher, &j.train, j.eval_data.as_ref().map(|_| &hook))?;
    write_run(&j.out, j, &outcome)
}

fn run_finetune(j: &FinetuneJob) -> anyhow::Result<()> {
    j.matcher.validate()?;
    let pairs = load_pairs(&j.data)?;
    let source = eval_hook_pairs(&j.source)?;
    if j.train.replay_source && source.is_empty() {
        bail!(crate::UsageError("replay needs a non-empty --source dataset".into()));
    }
    let params = load_params(&j.init, &j.matcher)?;
    let eval_pairs = eval_hook_pairs(&j.eval_data)?;
    let hook = EvalHook { pairs: &eval_pairs, ransac: j.ransac };
    let outcome = finetune_pose_supervised(
        &pairs,
        &source,
        params,
        &j.matcher,
        &j.train,
        &j.noise,
        j.eval_data.as_ref().map(|_| &hook),
    )?;
    write_run(&j.out, j, &outcome)
}

fn run_bootstrap(j: &BootstrapJob) -> anyhow::Result<()> {
    j.matcher.validate()?;
    let pairs = load_pairs(&j.data)?;
    let source = eval_hook_pairs(&j.source)?;
    if j.train.replay_source && source.is_empty() {
        bail!(crate::UsageError("replay needs a non-empty --source dataset".into()));
    }
    let params = load_params(&j.init, &j.matcher)?;
    let eval_pairs = eval_hook_pairs(&j.eval_data)?;
    let hook = EvalHook { pairs: &eval_pairs, ransac: j.ransac };
    let (outcome, report) = bootstrap_finetune(
        &pairs,
        &source,
        params,
        &j.matcher,
        &j.train,
        &j.bootstrap,
        j.eval_data.as_ref().map(|_| &hook),
    )?;
    log::info!("bootstrap kept {} of {} pairs", report.kept, pairs.len());
    write_json(&j.out.join("bootstrap.json"), &report)?;
    write_run(&j.out, j, &outcome)
}

fn load_png(path: &Path) -> anyhow::Result<Image> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?.to_luma8();
    Ok(Image::from_fn(img.width() as usize, img.height() as usize, |x, y| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
    }))
}

fn run_match(j: &MatchJob) -> anyhow::Result<()> {
    j.matcher.validate()?;
    let params = load_params(&j.checkpoint, &j.matcher)?;
    let (pair, images) = match &j.input {
        MatchInput::Pair(p) => {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            let pair = read_pair(&bytes).with_context(|| format!("decoding {}", p.display()))?;
            let images = (pair.image1.clone(), pair.image2.clone());
            (Some(pair), images)
        }
        MatchInput::Images(a, b) => (None, (load_png(a)?, load_png(b)?)),
    };
    let (image1, image2) = images;
    let grids = epimatch::matcher::FeatureGrids::new(&image1, &image2, &j.matcher)?;
    let (pred, _, _) = epimatch::matcher::forward_features(&grids, &params, &j.matcher);
    let matches: Vec<_> = pred
        .pixel_matches()
        .into_iter()
        .map(|(a, b, c)| {
            epimatch::estimation::Correspondence::from_pixels(a[0], a[1], b[0], b[1], c)
        })
        .collect();
    let mut w = BufWriter::new(fs::File::create(j.out.join("matches.txt"))?);
    write_matches(&mut w, &matches)?;
    w.flush()?;
    let canvas = match &pair {
        Some(p) => {
            let e = EssentialMatrix::from_pose(&p.pose)?.as_fundamental()?;
            let colouring =
                Colouring::Epipolar { e: &e, k1: &p.intrinsics, k2: &p.intrinsics, threshold: j.threshold };
            overlay::render(&image1, &image2, &matches, &colouring)
        }
        None => overlay::render(&image1, &image2, &matches, &Colouring::Plain),
    };
    overlay::save(&j.out.join("overlay.png"), &canvas)?;
    log::info!("{} matches", matches.len());
    Ok(())
}

#[derive(Serialize)]
struct PoseRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    fundamental: [[f64; 3]; 3],
    num_matches: usize,
    inlier_count: usize,
    no_consensus: bool,
    inliers: Vec<bool>,
}

fn rows(m: &epimatch::geometry::Mat3) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn run_pose(j: &PoseJob) -> anyhow::Result<()> {
    let file = fs::File::open(&j.matches).with_context(|| format!("opening {}", j.matches.display()))?;
    let matches = read_matches(BufReader::new(file)).with_context(|| format!("reading {}", j.matches.display()))?;
    let (pose, result) = estimate_relative_pose(&matches, &j.k1, &j.k2, &j.ransac)?;
    let record = PoseRecord {
        rotation: rows(&pose.rotation),
        translation: [pose.translation.x, pose.translation.y, pose.translation.z],
        fundamental: rows(result.f.matrix()),
        num_matches: result.num_input_matches,
        inlier_count: result.inlier_count,
        no_consensus: result.no_consensus,
        inliers: result.inlier_mask,
    };
    write_json(&j.out.join("pose.json"), &record)
}

fn run_eval(j: &EvalJob) -> anyhow::Result<()> {
    j.matcher.validate()?;
    let params = load_params(&j.checkpoint, &j.matcher)?;
    let pairs = load_pairs(&j.data)?;
    let results: Vec<(Vec<_>, PairEval)> = pairs
        .par_iter()
        .map(|p| {
            let m = predict_matches(p, &params, &j.matcher);
            let e = evaluate_matches(&m, p, &j.ransac);
            (m, e)
        })
        .collect();
    let evals: Vec<PairEval> = results.iter().map(|r| r.1.clone()).collect();
    let report = aggregate(&evals)?;
    fs::write(j.out.join("report.json"), report.to_json() + "\n")?;
    let label = j.checkpoint.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let table = report.table(&label);
    fs::write(j.out.join("report.txt"), &table)?;
    print!("{table}");
    let mut w = BufWriter::new(fs::File::create(j.out.join("pairs.csv"))?);
    writeln!(w, "pair,matches,precision,rotation_deg,translation_deg,failed")?;
    for (i, e) in evals.iter().enumerate() {
        writeln!(
            w,
            "{i},{},{},{},{},{}",
            e.num_matches, e.precision, e.error.rotation_deg, e.error.translation_deg, e.failed
        )?;
    }
    w.flush()?;
    if j.overlays > 0 {
        let dir = j.out.join("overlays");
        fs::create_dir_all(&dir)?;
        for (i, (p, (m, _))) in pairs.iter().zip(&results).take(j.overlays).enumerate() {
            let e = EssentialMatrix::from_pose(&p.pose)?.as_fundamental()?;
            let colouring =
                Colouring::Epipolar { e: &e, k1: &p.intrinsics, k2: &p.intrinsics, threshold: j.threshold };
            overlay::save(&dir.join(format!("{i:05}.png")), &overlay::render(&p.image1, &p.image2, m, &colouring))?;
        }
    }
    Ok(())
}

fn run_gradcheck(j: &GradcheckJob) -> anyhow::Result<()> {
    let fault = if j.sign_flip { Fault::SignFlip } else { Fault::None };
    let suites: Vec<SuiteReport> = vec![
        epipolar_distance_suite(j.seed, j.epipolar_instances, fault),
        matcher_suite(j.seed, j.matcher_instances, fault),
    ];
    let passed = suites.iter().all(SuiteReport::passed);
    for s in &suites {
        println!(
            "{:<20} instances {:>5}  max rel err {:.3e}  tol {:.0e}  {}",
            s.name,
            s.instances,
            s.max_relative_error,
            s.tolerance,
            if s.passed() { "pass" } else { "FAIL" }
        );
    }
    write_json(&j.out.join("gradcheck.json"), &serde_json::json!({ "passed": passed, "suites": suites }))?;
    if !passed {
        bail!(GradcheckFailed);
    }
    Ok(())
}
