//! `epimatch`: synthetic data, training, matching and evaluation runs.

mod config;
mod jobs;
mod manifest;
mod overlay;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use epimatch::geometry::CameraIntrinsics;
use epimatch::losses::MaskKind;
use epimatch::pairgen::{OverlapRange, PseudoDepthModel, DEFAULT_SAMPLES};
use epimatch::pipeline::{BootstrapConfig, PoseNoiseConfig};
use epimatch::synth::make_domain;

use config::{FileConfig, INDOOR_THRESHOLD, OUTDOOR_THRESHOLD};
use jobs::*;
use manifest::RunManifest;

/// A command-line error the user can fix by changing arguments.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser, Debug)]
#[command(name = "epimatch", version, about = "Epipolar-supervised feature matching toolkit")]
struct Cli {
    /// TOML config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed.
    #[arg(long, global = true, env = "EPIMATCH_SEED")]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic two-view dataset.
    Synth(SynthArgs),
    /// Mine training pairs from a pose file by pseudo-overlap.
    Pairs(PairsArgs),
    /// Train with ground-truth correspondences.
    Pretrain(PretrainArgs),
    /// Finetune with the epipolar loss using ground-truth poses.
    Finetune(FinetuneArgs),
    /// Finetune with the epipolar loss using the model's own estimated geometry.
    Bootstrap(BootstrapArgs),
    /// Match one image pair.
    Match(MatchArgs),
    /// Estimate relative pose from a match file.
    Pose(PoseArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
    /// Rerun a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Domain {
    #[value(name = "A")]
    A,
    #[value(name = "B")]
    B,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, ignore_case = true)]
    domain: Option<Domain>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PairsArgs {
    /// Pose file: `id fx fy cx cy qw qx qy qz tx ty tz` per line.
    #[arg(long)]
    poses: PathBuf,
    /// Pseudo-depth preset: euroc-machine, euroc-room or sf-street.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    min_overlap: Option<f64>,
    #[arg(long)]
    max_overlap: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    /// Grid samples per image side.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MatcherArgs {
    #[arg(long)]
    match_threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Dataset evaluated after every epoch.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[command(flatten)]
    matcher: MatcherArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EpipolarArgs {
    /// Checkpoint to start from.
    #[arg(long)]
    init: PathBuf,
    /// Source-domain dataset for replay.
    #[arg(long)]
    source: Option<PathBuf>,
    /// Mix source-domain pairs into every batch.
    #[arg(long)]
    replay: bool,
    /// Coarse/fine balance of the loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Line-set distance, in cells.
    #[arg(long)]
    theta: Option<f64>,
    /// Supervise every cell near the epipolar line instead of the best one.
    #[arg(long)]
    naive_mask: bool,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    epipolar: EpipolarArgs,
    /// Perturb rotation and translation direction by this many degrees.
    #[arg(long)]
    pose_noise_deg: Option<f64>,
}

#[derive(Args, Debug)]
struct BootstrapArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    epipolar: EpipolarArgs,
    #[arg(long)]
    min_matches: Option<usize>,
    #[arg(long)]
    min_inliers: Option<usize>,
    /// Filter thresholds intended for full-resolution images.
    #[arg(long)]
    full_resolution: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Indoor,
    Outdoor,
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    /// Overlay threshold on the squared symmetric epipolar distance.
    #[arg(long)]
    threshold: Option<f64>,
    /// Threshold preset used when `--threshold` is absent.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Rendered pair file (overlay coloured against its ground truth).
    #[arg(long, conflicts_with_all = ["image1", "image2"], required_unless_present_all = ["image1", "image2"])]
    pair: Option<PathBuf>,
    #[arg(long, requires = "image2")]
    image1: Option<PathBuf>,
    #[arg(long, requires = "image1")]
    image2: Option<PathBuf>,
    #[command(flatten)]
    matcher: MatcherArgs,
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RansacArgs {
    #[arg(long)]
    ransac_threshold: Option<f64>,
    #[arg(long)]
    ransac_iterations: Option<usize>,
}

#[derive(Args, Debug)]
struct PoseArgs {
    /// Match file: `u1 v1 u2 v2 conf` per line.
    #[arg(long)]
    matches: PathBuf,
    /// Intrinsics `fx,fy,cx,cy` of the first camera.
    #[arg(long, value_delimiter = ',')]
    k1: Vec<f64>,
    /// Intrinsics of the second camera; defaults to `--k1`.
    #[arg(long, value_delimiter = ',')]
    k2: Option<Vec<f64>>,
    #[command(flatten)]
    ransac: RansacArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Number of overlay images to write.
    #[arg(long)]
    overlays: Option<usize>,
    #[command(flatten)]
    matcher: MatcherArgs,
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[command(flatten)]
    ransac: RansacArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1000)]
    epipolar_instances: usize,
    #[arg(long, default_value_t = 20)]
    matcher_instances: usize,
    #[arg(long, hide = true)]
    sign_flip: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Output directory; defaults to the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn existing(path: &Path) -> anyhow::Result<PathBuf> {
    std::fs::canonicalize(path).with_context(|| format!("{} not found", path.display()))
}

fn existing_opt(path: &Option<PathBuf>) -> anyhow::Result<Option<PathBuf>> {
    path.as_deref().map(existing).transpose()
}

fn output(path: &Path) -> anyhow::Result<PathBuf> {
    Ok(std::path::absolute(path)?)
}

fn threshold(args: &ThresholdArgs, file: Option<f64>) -> f64 {
    match (args.threshold, args.preset) {
        (Some(t), _) => t,
        (None, Some(Preset::Indoor)) => INDOOR_THRESHOLD,
        (None, Some(Preset::Outdoor)) => OUTDOOR_THRESHOLD,
        (None, None) => file.unwrap_or(INDOOR_THRESHOLD),
    }
}

fn intrinsics(v: &[f64]) -> anyhow::Result<CameraIntrinsics> {
    if v.len() != 4 {
        return Err(UsageError(format!("intrinsics need 4 values fx,fy,cx,cy, got {}", v.len())).into());
    }
    CameraIntrinsics::new(v[0], v[1], v[2], v[3]).map_err(|e| UsageError(format!("intrinsics: {e}")).into())
}

struct Resolver {
    file: FileConfig,
    seed: Option<u64>,
}

impl Resolver {
    fn seed(&self) -> Option<u64> {
        self.seed.or(self.file.seed)
    }

    fn matcher(&self, args: &MatcherArgs) -> epimatch::matcher::MatcherConfig {
        let mut m = self.file.matcher;
        if let Some(t) = args.match_threshold {
            m.match_threshold = t;
        }
        m
    }

    fn ransac(&self, args: &RansacArgs) -> epimatch::estimation::RansacConfig {
        let mut r = self.file.ransac;
        if let Some(t) = args.ransac_threshold {
            r.inlier_threshold = t;
        }
        if let Some(n) = args.ransac_iterations {
            r.iterations = n;
        }
        if let Some(s) = self.seed() {
            r.seed = s;
        }
        r
    }

    fn train(&self, args: &TrainArgs, epi: Option<&EpipolarArgs>) -> epimatch::pipeline::TrainConfig {
        let mut t = self.file.train.clone();
        if let Some(v) = args.epochs {
            t.epochs = v;
        }
        if let Some(v) = args.lr {
            t.lr = v;
        }
        if let Some(v) = args.batch_size {
            t.batch_size = v;
        }
        if let Some(s) = self.seed() {
            t.seed = s;
        }
        if let Some(e) = epi {
            if let Some(v) = e.lambda {
                t.loss.lambda = v;
            }
            if let Some(v) = e.theta {
                t.loss.theta = v;
            }
            if e.naive_mask {
                t.loss.mask = MaskKind::Naive;
            }
            if e.replay {
                t.replay_source = true;
            }
        }
        t
    }

    fn job(&self, command: Command) -> anyhow::Result<Job> {
        let f = &self.file;
        Ok(match command {
            Command::Synth(a) => {
                let domain = match (a.domain, &f.synth.domain) {
                    (Some(Domain::A), _) => "A".to_string(),
                    (Some(Domain::B), _) => "B".to_string(),
                    (None, Some(d)) => d.clone(),
                    (None, None) => return Err(UsageError("--domain is required".into()).into()),
                };
                let mut spec = make_domain(&domain).map_err(|e| UsageError(e.to_string()))?;
                if let Some(s) = self.seed() {
                    spec.seed = s;
                }
                let pairs = a.pairs.or(f.synth.pairs).unwrap_or(200);
                Job::Synth(SynthJob { spec, pairs, out: output(&a.out)? })
            }
            Command::Pairs(a) => {
                let model = match (&a.model, &f.pairs.model, &f.pairs.preset) {
                    (Some(name), _, _) => PseudoDepthModel::preset(name).map_err(|e| UsageError(e.to_string()))?,
                    (None, Some(m), _) => *m,
                    (None, None, Some(name)) => {
                        PseudoDepthModel::preset(name).map_err(|e| UsageError(e.to_string()))?
                    }
                    (None, None, None) => return Err(UsageError("--model is required".into()).into()),
                };
                let d = OverlapRange::default();
                let range = OverlapRange::new(
                    a.min_overlap.or(f.pairs.min_overlap).unwrap_or(d.min),
                    a.max_overlap.or(f.pairs.max_overlap).unwrap_or(d.max),
                )
                .map_err(|e| UsageError(e.to_string()))?;
                Job::Pairs(PairsJob {
                    poses: existing(&a.poses)?,
                    model,
                    range,
                    stride: a.stride.or(f.pairs.stride).unwrap_or(1),
                    samples: a.samples.or(f.pairs.samples).unwrap_or(DEFAULT_SAMPLES),
                    out: output(&a.out)?,
                })
            }
            Command::Pretrain(a) => Job::Pretrain(PretrainJob {
                data: existing(&a.train.data)?,
                init: existing_opt(&a.init)?,
                init_seed: self.seed().unwrap_or(0),
                eval_data: existing_opt(&a.train.eval_data)?,
                matcher: self.matcher(&a.train.matcher),
                train: self.train(&a.train, None),
                ransac: self.ransac(&RansacArgs { ransac_threshold: None, ransac_iterations: None }),
                out: output(&a.train.out)?,
            }),
            Command::Finetune(a) => {
                let mut noise: PoseNoiseConfig = f.noise;
                if let Some(d) = a.pose_noise_deg {
                    noise = PoseNoiseConfig { rotation_deg: d, translation_deg: d };
                }
                Job::Finetune(FinetuneJob {
                    data: existing(&a.train.data)?,
                    init: existing(&a.epipolar.init)?,
                    source: existing_opt(&a.epipolar.source)?,
                    eval_data: existing_opt(&a.train.eval_data)?,
                    matcher: self.matcher(&a.train.matcher),
                    train: self.train(&a.train, Some(&a.epipolar)),
                    noise,
                    ransac: self.ransac(&RansacArgs { ransac_threshold: None, ransac_iterations: None }),
                    out: output(&a.train.out)?,
                })
            }
            Command::Bootstrap(a) => {
                let mut b = if a.full_resolution { BootstrapConfig::full_resolution() } else { f.bootstrap };
                if let Some(v) = a.min_matches {
                    b.min_matches = v;
                }
                if let Some(v) = a.min_inliers {
                    b.min_inliers = v;
                }
                if let Some(s) = self.seed() {
                    b.ransac.seed = s;
                }
                Job::Bootstrap(BootstrapJob {
                    data: existing(&a.train.data)?,
                    init: existing(&a.epipolar.init)?,
                    source: existing_opt(&a.epipolar.source)?,
                    eval_data: existing_opt(&a.train.eval_data)?,
                    matcher: self.matcher(&a.train.matcher),
                    train: self.train(&a.train, Some(&a.epipolar)),
                    bootstrap: b,
                    ransac: self.ransac(&RansacArgs { ransac_threshold: None, ransac_iterations: None }),
                    out: output(&a.train.out)?,
                })
            }
            Command::Match(a) => {
                let input = match (&a.pair, &a.image1, &a.image2) {
                    (Some(p), _, _) => MatchInput::Pair(existing(p)?),
                    (None, Some(x), Some(y)) => MatchInput::Images(existing(x)?, existing(y)?),
                    _ => return Err(UsageError("give --pair or both --image1 and --image2".into()).into()),
                };
                Job::Match(MatchJob {
                    checkpoint: existing(&a.checkpoint)?,
                    input,
                    matcher: self.matcher(&a.matcher),
                    threshold: threshold(&a.threshold, f.eval.threshold),
                    out: output(&a.out)?,
                })
            }
            Command::Pose(a) => {
                let k1 = intrinsics(&a.k1)?;
                let k2 = a.k2.as_deref().map(intrinsics).transpose()?.unwrap_or(k1);
                Job::Pose(PoseJob {
                    matches: existing(&a.matches)?,
                    k1,
                    k2,
                    ransac: self.ransac(&a.ransac),
                    out: output(&a.out)?,
                })
            }
            Command::Eval(a) => Job::Eval(EvalJob {
                checkpoint: existing(&a.checkpoint)?,
                data: existing(&a.data)?,
                matcher: self.matcher(&a.matcher),
                ransac: self.ransac(&a.ransac),
                threshold: threshold(&a.threshold, f.eval.threshold),
                overlays: a.overlays.or(f.eval.overlays).unwrap_or(4),
                out: output(&a.out)?,
            }),
            Command::Gradcheck(a) => Job::Gradcheck(GradcheckJob {
                seed: self.seed().unwrap_or(0),
                epipolar_instances: a.epipolar_instances,
                matcher_instances: a.matcher_instances,
                sign_flip: a.sign_flip,
                out: output(&a.out)?,
            }),
            Command::Replay(_) => unreachable!("replay is dispatched before resolution"),
        })
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let manifest = match cli.command {
        Command::Replay(a) => {
            let mut m = RunManifest::load(&a.manifest)?;
            if let Some(out) = a.out {
                m.set_output_dir(output(&out)?);
            }
            m
        }
        command => {
            let file = FileConfig::load(cli.config.as_deref())?;
            let job = Resolver { file, seed: cli.seed }.job(command)?;
            let config_file = existing_opt(&cli.config)?;
            RunManifest::new(config_file, job)
        }
    };
    manifest.write()?;
    manifest.job.run()
}

/// Message prefix and exit code for an error chain.
fn categorize(err: &anyhow::Error) -> (&'static str, u8) {
    use epimatch::{estimation, geometry, matcher, metrics, pairgen, pipeline, synth};
    for cause in err.chain() {
        let category = if cause.is::<UsageError>() {
            return ("usage", 2);
        } else if cause.is::<GradcheckFailed>() {
            "gradcheck"
        } else if cause.is::<synth::SynthError>() {
            "synth"
        } else if cause.is::<pairgen::PairgenError>() {
            "pairgen"
        } else if cause.is::<pipeline::PipelineError>() {
            "pipeline"
        } else if cause.is::<matcher::MatcherError>() {
            "matcher"
        } else if cause.is::<metrics::MetricsError>() {
            "metrics"
        } else if cause.is::<estimation::EstimationError>() {
            "estimation"
        } else if cause.is::<geometry::GeometryError>() {
            "geometry"
        } else if cause.is::<toml::de::Error>() || cause.is::<serde_json::Error>() {
            "config"
        } else if cause.is::<image::ImageError>() {
            "image"
        } else if cause.is::<std::io::Error>() {
            "io"
        } else {
            continue;
        };
        return (category, 1);
    }
    ("error", 1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (category, code) = categorize(&err);
            eprintln!("error[{category}]: {err:#}");
            ExitCode::from(code)
        }
    }
}
