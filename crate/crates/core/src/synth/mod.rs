//! Deterministic synthetic two-view data with exact depth and pose.
//!
//! Scenes are closed boxes with a few free-standing panels, textured with
//! multi-octave value noise and rendered by ray casting. Two parameter sets
//! ([`make_domain`]) produce visually distinct domains: fine, contrasty
//! texture with small motions, and coarse, faint, noisy texture with larger
//! rotations and baselines.

mod dataset;
mod scene;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::geometry::{
    fundamental_from_pose, relative_pose, rotation_angle, Camera, CameraIntrinsics, FundamentalMatrix,
    GeometryError, Mat3, Point3, RelativePose, Vec3,
};
use crate::image::Image;
use crate::losses::GridSpec;

pub use dataset::{read_dataset, read_pair, write_dataset, write_pair, Dataset, PAIR_MAGIC, PAIR_VERSION};
pub use scene::{render, Plane, Scene};

/// Camera samples tried per pair before giving up.
pub const MAX_POSE_ATTEMPTS: usize = 400;
/// Relative tolerance of the two-sided depth test.
pub const OCCLUSION_TOLERANCE: f64 = 0.01;
/// Max ratio between the depths of the four pixels used for interpolation.
const DEPTH_DISCONTINUITY: f64 = 1.05;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no acceptable camera pair after {0} attempts")]
    DegeneratePose(usize),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("unknown domain {0:?}")]
    UnknownDomain(String),
    #[error("dataset format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoomSpec {
    /// Box half sizes in metres.
    pub half_extent: [f64; 3],
    /// Inclusive range of interior panel counts.
    pub panels: [usize; 2],
    /// Panel side length range, metres.
    pub panel_size: [f64; 2],
    /// Range of panel centre z.
    pub panel_depth: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TextureSpec {
    pub octaves: usize,
    /// Lattice spacing of the coarsest octave, metres; halves per octave.
    pub base_spacing: f64,
    /// Amplitude ratio between consecutive octaves.
    pub persistence: f64,
    pub contrast: f64,
    pub brightness_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseSampler {
    pub rotation_deg: [f64; 2],
    pub baseline: [f64; 2],
    pub look_jitter: f64,
    pub roll_deg: f64,
    /// Half ranges of camera-1 x and y.
    pub position: [f64; 2],
    pub camera_z: [f64; 2],
    pub target_z: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub room: RoomSpec,
    pub texture: TextureSpec,
    pub pose: PoseSampler,
    pub noise_sigma: f64,
    /// Amplitude of a smooth additive shading field drawn independently per
    /// view.
    #[serde(default)]
    pub shading: f64,
    /// Minimum fraction of coarse cells with a ground-truth match.
    pub min_overlap: f64,
    pub patch_width: usize,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r[0].is_finite() && r[1].is_finite();
        if self.width == 0 || self.height == 0 || self.patch_width == 0 {
            return bad("empty image");
        }
        if self.width % self.patch_width != 0 || self.height % self.patch_width != 0 {
            return bad("image size must be a multiple of the patch width");
        }
        if !(self.focal > 0.0) {
            return bad("focal length must be positive");
        }
        let p = &self.pose;
        if !ordered(p.rotation_deg) || !ordered(p.baseline) || !ordered(p.camera_z) || !ordered(p.target_z) {
            return bad("unordered range");
        }
        if !(p.baseline[0] > crate::geometry::BASELINE_EPSILON) {
            return bad("baseline range must exclude zero");
        }
        let h = self.room.half_extent;
        if h.iter().any(|v| !(*v > 0.0)) {
            return bad("room extents must be positive");
        }
        let reach = p.baseline[1];
        if p.position[0] + reach >= h[0] || p.position[1] + reach >= h[1] {
            return bad("cameras may leave the room");
        }
        if p.camera_z[0] - reach <= -h[2] || p.camera_z[1] + reach >= h[2] || p.target_z[1] >= h[2] {
            return bad("cameras may leave the room");
        }
        if self.room.panels[0] > self.room.panels[1] || !ordered(self.room.panel_size) {
            return bad("bad panel ranges");
        }
        let t = &self.texture;
        if t.octaves == 0 || !(t.base_spacing > 0.0) || !(t.contrast >= 0.0) {
            return bad("bad texture");
        }
        if !(self.noise_sigma >= 0.0) || !(self.shading >= 0.0) || !(0.0..=1.0).contains(&self.min_overlap) {
            return bad("bad noise or overlap");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.width as f64 / 2.0,
            cy: self.height as f64 / 2.0,
        }
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::for_image(self.height, self.width, self.patch_width)
    }
}

/// Parameter sets for the two domains, `"A"` and `"B"`.
pub fn make_domain(name: &str) -> Result<SceneSpec, SynthError> {
    let room = RoomSpec {
        half_extent: [4.0, 2.0, 4.0],
        panels: [3, 6],
        panel_size: [0.6, 1.6],
        panel_depth: [-0.5, 2.5],
    };
    let spec = match name {
        "A" => SceneSpec {
            name: "A".into(),
            width: 128,
            height: 128,
            focal: 110.0,
            room,
            texture: TextureSpec {
                octaves: 3,
                base_spacing: 0.5,
                persistence: 0.7,
                contrast: 0.45,
                brightness_jitter: 0.1,
            },
            pose: PoseSampler {
                rotation_deg: [0.0, 10.0],
                baseline: [0.15, 0.5],
                look_jitter: 0.2,
                roll_deg: 3.0,
                position: [1.5, 0.5],
                camera_z: [-3.0, -2.0],
                target_z: [1.5, 3.5],
            },
            noise_sigma: 0.005,
            shading: 0.0,
            min_overlap: 0.5,
            patch_width: 8,
            seed: 1,
        },
        "B" => SceneSpec {
            name: "B".into(),
            width: 128,
            height: 128,
            focal: 95.0,
            room,
            texture: TextureSpec {
                octaves: 2,
                base_spacing: 1.2,
                persistence: 0.6,
                contrast: 0.22,
                brightness_jitter: 0.05,
            },
            pose: PoseSampler {
                rotation_deg: [5.0, 25.0],
                baseline: [0.4, 1.2],
                look_jitter: 0.6,
                roll_deg: 8.0,
                position: [1.5, 0.5],
                camera_z: [-2.5, -1.5],
                target_z: [1.5, 3.5],
            },
            noise_sigma: 0.015,
            shading: 0.2,
            min_overlap: 0.35,
            patch_width: 8,
            seed: 2,
        },
        other => return Err(SynthError::UnknownDomain(other.to_string())),
    };
    spec.validate()?;
    Ok(spec)
}

/// Two rendered views with exact geometry. Intensities and depths are
/// stored at single precision so that a pair survives a disk round trip
/// unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPair {
    pub image1: Image,
    pub image2: Image,
    /// Optical-axis depth at pixel centres; 0 where invalid.
    pub depth1: Vec<f64>,
    pub depth2: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    /// Camera 2 relative to camera 1.
    pub pose: RelativePose,
}

/// Ground-truth match of one image-1 cell centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtTarget {
    pub cell: usize,
    pub point: [f64; 2],
}

impl RenderedPair {
    pub fn width(&self) -> usize {
        self.image1.width
    }

    pub fn height(&self) -> usize {
        self.image1.height
    }

    pub fn fundamental(&self) -> Result<FundamentalMatrix, GeometryError> {
        fundamental_from_pose(&self.intrinsics, &self.intrinsics, &self.pose)
    }

    /// Image-2 pixel of the image-1 pixel position `(u, v)`, with its depth
    /// in camera 2, by backprojecting through interpolated depth.
    pub fn transfer(&self, u: f64, v: f64) -> Option<([f64; 2], f64)> {
        let z1 = interpolate_depth(&self.depth1, self.width(), self.height(), u, v)?;
        let k = &self.intrinsics;
        let p1 = Vec3::new((u - k.cx) / k.fx * z1, (v - k.cy) / k.fy * z1, z1);
        let p2 = self.pose.rotation * p1 + self.pose.translation;
        if !(p2.z > 0.0) {
            return None;
        }
        Some(([k.fx * p2.x / p2.z + k.cx, k.fy * p2.y / p2.z + k.cy], p2.z))
    }

    /// Per-cell targets: the cell centre transferred to image 2, or `None`
    /// when it leaves the view, lands behind camera 2 or is occluded.
    pub fn gt_targets(&self, grid: &GridSpec) -> Vec<Option<GtTarget>> {
        (0..grid.len())
            .map(|idx| {
                let [u, v] = grid.centre(idx);
                let ([u2, v2], z2) = self.transfer(u, v)?;
                let (w, h) = (self.width() as f64, self.height() as f64);
                if !(u2 >= 0.0 && v2 >= 0.0 && u2 < w && v2 < h) {
                    return None;
                }
                let seen = interpolate_depth(&self.depth2, self.width(), self.height(), u2, v2)?;
                if (z2 - seen).abs() > OCCLUSION_TOLERANCE * seen {
                    return None;
                }
                let cell = GridSpec { ..*grid }.cell_at(u2, v2)?;
                Some(GtTarget { cell, point: [u2, v2] })
            })
            .collect()
    }
}

/// Depth at a continuous pixel position by bilinear interpolation of
/// inverse depth over the four nearest pixel centres (clamped at borders).
/// Inverse depth is affine in the image over a plane, so this is exact
/// away from discontinuities; across one, `None`.
pub fn interpolate_depth(depth: &[f64], width: usize, height: usize, u: f64, v: f64) -> Option<f64> {
    let x = (u - 0.5).clamp(0.0, (width - 1) as f64);
    let y = (v - 0.5).clamp(0.0, (height - 1) as f64);
    let (x0, y0) = ((x.floor() as usize).min(width.saturating_sub(2)), (y.floor() as usize).min(height.saturating_sub(2)));
    let (x1, y1) = ((x0 + 1).min(width - 1), (y0 + 1).min(height - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let d = [depth[y0 * width + x0], depth[y0 * width + x1], depth[y1 * width + x0], depth[y1 * width + x1]];
    let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &z| (lo.min(z), hi.max(z)));
    if !(lo > 0.0) || hi > DEPTH_DISCONTINUITY * lo {
        return None;
    }
    let inv = (1.0 / d[0] * (1.0 - fx) + 1.0 / d[1] * fx) * (1.0 - fy) + (1.0 / d[2] * (1.0 - fx) + 1.0 / d[3] * fx) * fy;
    Some(1.0 / inv)
}

/// World-to-camera pose looking from `centre` at `target`, rolled about the
/// optical axis. World `+y` points down.
pub fn look_at(centre: &Point3, target: &Point3, roll: f64) -> Result<RelativePose, GeometryError> {
    let z = (target - centre).normalize();
    let x = Vec3::y().cross(&z);
    if !(x.norm() > 1e-9) {
        return Err(GeometryError::DegenerateConfiguration("optical axis is vertical"));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let (s, c) = roll.sin_cos();
    let (xr, yr) = (x * c + y * s, y * c - x * s);
    let r = Mat3::from_rows(&[xr.transpose(), yr.transpose(), z.transpose()]);
    Ok(RelativePose { rotation: r, translation: -(r * centre.coords) })
}

fn pair_rng(spec: &SceneSpec, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    rng
}

fn quantize(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

/// Adds `amplitude` times a sum of three random plane waves with 0.5 to 1.5
/// cycles per image width and random weights in `[-1, 1]`, divided by `√3`.
fn add_shading(image: &mut Image, amplitude: f64, rng: &mut ChaCha8Rng) {
    let tau = std::f64::consts::TAU;
    let waves: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            let angle = rng.random_range(0.0..tau);
            let freq = rng.random_range(0.5..1.5);
            [freq * angle.cos(), freq * angle.sin(), rng.random_range(0.0..tau), rng.random_range(-1.0..1.0)]
        })
        .collect();
    let (w, h) = (image.width as f64, image.height as f64);
    for y in 0..image.height {
        for x in 0..image.width {
            let (u, v) = ((x as f64 + 0.5) / w, (y as f64 + 0.5) / h);
            let field: f64 = waves.iter().map(|&[fx, fy, ph, c]| c * (tau * (fx * u + fy * v) + ph).cos()).sum();
            let k = y * image.width + x;
            image.data[k] = (image.data[k] + amplitude * field / 3f64.sqrt()).clamp(0.0, 1.0);
        }
    }
}

/// Renders both views; adds seeded Gaussian noise when `noise_rng` is given.
pub fn render_pair(
    spec: &SceneSpec,
    scene: &Scene,
    cam1: &Camera,
    cam2: &Camera,
    noise_rng: Option<&mut ChaCha8Rng>,
) -> RenderedPair {
    let (mut image1, mut depth1) = render(scene, cam1, spec.width, spec.height);
    let (mut image2, mut depth2) = render(scene, cam2, spec.width, spec.height);
    if let Some(rng) = noise_rng {
        if spec.shading > 0.0 {
            add_shading(&mut image1, spec.shading, rng);
            add_shading(&mut image2, spec.shading, rng);
        }
        if spec.noise_sigma > 0.0 {
            let n = Normal::new(0.0, spec.noise_sigma).unwrap();
            for v in image1.data.iter_mut().chain(image2.data.iter_mut()) {
                *v = (*v + n.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    for buf in [&mut image1.data, &mut image2.data, &mut depth1, &mut depth2] {
        quantize(buf);
    }
    RenderedPair { image1, image2, depth1, depth2, intrinsics: cam1.intrinsics, pose: relative_pose(cam1, cam2) }
}

fn random_direction(rng: &mut impl Rng) -> Vec3 {
    crate::fixtures::random_unit(rng)
}

/// Samples scene and cameras for pair `index` of `spec`.
fn sample_setup(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<(Scene, Camera, Camera), SynthError> {
    let k = spec.intrinsics();
    let p = &spec.pose;
    let scene = Scene::generate(rng, &spec.room, &spec.texture);
    for _ in 0..MAX_POSE_ATTEMPTS {
        let c1 = Point3::new(
            rng.random_range(-p.position[0]..=p.position[0]),
            rng.random_range(-p.position[1]..=p.position[1]),
            rng.random_range(p.camera_z[0]..=p.camera_z[1]),
        );
        let h = spec.room.half_extent;
        let target = Point3::new(
            rng.random_range(-0.6 * h[0]..=0.6 * h[0]),
            rng.random_range(-0.4 * h[1]..=0.4 * h[1]),
            rng.random_range(p.target_z[0]..=p.target_z[1]),
        );
        let mut dir = random_direction(rng);
        dir.y *= 0.3;
        let c2 = c1 + dir.normalize() * rng.random_range(p.baseline[0]..=p.baseline[1]);
        let target2 = target + random_direction(rng) * rng.random_range(0.0..=p.look_jitter);
        let roll = p.roll_deg.to_radians();
        let (Ok(pose1), Ok(pose2)) = (
            look_at(&c1, &target, rng.random_range(-roll..=roll)),
            look_at(&c2, &target2, rng.random_range(-roll..=roll)),
        ) else {
            continue;
        };
        let angle = rotation_angle(&(pose2.rotation * pose1.rotation.transpose())).to_degrees();
        if angle < p.rotation_deg[0] || angle > p.rotation_deg[1] || !scene.contains(&c2) {
            continue;
        }
        let cam1 = Camera::new(k, pose1);
        let cam2 = Camera::new(k, pose2);
        if covisible_fraction(spec, &scene, &cam1, &cam2) >= spec.min_overlap {
            return Ok((scene, cam1, cam2));
        }
    }
    Err(SynthError::DegeneratePose(MAX_POSE_ATTEMPTS))
}

/// Fraction of coarse cell centres of camera 1 that are visible, unoccluded,
/// in camera 2, by direct ray casting.
pub fn covisible_fraction(spec: &SceneSpec, scene: &Scene, cam1: &Camera, cam2: &Camera) -> f64 {
    let grid = spec.grid();
    let c1 = cam1.centre();
    let c2 = cam2.centre();
    let mut seen = 0;
    for idx in 0..grid.len() {
        let [u, v] = grid.centre(idx);
        let dir = cam1.ray_direction(u, v);
        let Some((t, _)) = scene.intersect(&c1, &dir) else {
            continue;
        };
        let x = c1 + dir * t;
        let Ok((px, _)) = crate::geometry::project(cam2, &x) else {
            continue;
        };
        if px.u < 0.0 || px.v < 0.0 || px.u >= spec.width as f64 || px.v >= spec.height as f64 {
            continue;
        }
        let back = x - c2;
        let dist = back.norm();
        if let Some((t2, _)) = scene.intersect(&c2, &(back / dist)) {
            if (t2 - dist).abs() <= OCCLUSION_TOLERANCE * dist {
                seen += 1;
            }
        }
    }
    seen as f64 / grid.len() as f64
}

/// Pair `index` of the dataset described by `spec`; deterministic in
/// `(spec.seed, index)`.
pub fn sample_pair(spec: &SceneSpec, index: u64) -> Result<RenderedPair, SynthError> {
    spec.validate()?;
    let mut rng = pair_rng(spec, index);
    let (scene, cam1, cam2) = sample_setup(spec, &mut rng)?;
    Ok(render_pair(spec, &scene, &cam1, &cam2, Some(&mut rng)))
}

/// Test hook: the scene and first camera of pair `index`, rendered twice
/// from the same pose without noise.
pub fn sample_identity_pair(spec: &SceneSpec, index: u64) -> Result<RenderedPair, SynthError> {
    spec.validate()?;
    let mut rng = pair_rng(spec, index);
    let (scene, cam1, _) = sample_setup(spec, &mut rng)?;
    Ok(render_pair(spec, &scene, &cam1, &cam1, None))
}

/// Mean forward-difference gradient magnitude over `n` pairs (both views).
pub fn mean_gradient(spec: &SceneSpec, n: u64) -> Result<f64, SynthError> {
    let mut acc = 0.0;
    for i in 0..n {
        let p = sample_pair(spec, i)?;
        acc += p.image1.mean_gradient_magnitude() + p.image2.mean_gradient_magnitude();
    }
    Ok(acc / (2 * n) as f64)
}
