//! Piecewise-planar rooms with procedural texture, and a ray-casting renderer.

use rand::Rng;

use crate::geometry::{Camera, Point3, Vec3};
use crate::image::Image;

use super::{RoomSpec, TextureSpec};

/// Value-noise octave: random lattice values, bilinearly interpolated.
#[derive(Debug, Clone, PartialEq)]
struct Lattice {
    spacing: f64,
    amplitude: f64,
    cols: usize,
    rows: usize,
    values: Vec<f64>,
}

impl Lattice {
    fn new(rng: &mut impl Rng, spacing: f64, amplitude: f64, extent: [f64; 2]) -> Self {
        let cols = (2.0 * extent[0] / spacing).ceil() as usize + 2;
        let rows = (2.0 * extent[1] / spacing).ceil() as usize + 2;
        let values = (0..cols * rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self { spacing, amplitude, cols, rows, values }
    }

    /// `(s, t)` measured from the lower corner of the plane.
    fn sample(&self, s: f64, t: f64) -> f64 {
        let x = (s / self.spacing).clamp(0.0, (self.cols - 1) as f64);
        let y = (t / self.spacing).clamp(0.0, (self.rows - 1) as f64);
        let (x0, y0) = ((x.floor() as usize).min(self.cols - 2), (y.floor() as usize).min(self.rows - 2));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let v = |c: usize, r: usize| self.values[r * self.cols + c];
        let top = v(x0, y0) * (1.0 - fx) + v(x0 + 1, y0) * fx;
        let bottom = v(x0, y0 + 1) * (1.0 - fx) + v(x0 + 1, y0 + 1) * fx;
        self.amplitude * (top * (1.0 - fy) + bottom * fy)
    }
}

/// Bounded textured rectangle `origin + s e1 + t e2`, `|s| <= half[0]`,
/// `|t| <= half[1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub origin: Point3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub normal: Vec3,
    pub half: [f64; 2],
    brightness: f64,
    contrast: f64,
    octaves: Vec<Lattice>,
}

impl Plane {
    pub fn new(rng: &mut impl Rng, origin: Point3, e1: Vec3, e2: Vec3, half: [f64; 2], tex: &TextureSpec) -> Self {
        let e1 = e1.normalize();
        let e2 = (e2 - e1 * e1.dot(&e2)).normalize();
        let octaves = (0..tex.octaves)
            .map(|o| {
                let spacing = tex.base_spacing / 2f64.powi(o as i32);
                Lattice::new(rng, spacing, tex.persistence.powi(o as i32), half)
            })
            .collect();
        Self {
            origin,
            e1,
            e2,
            normal: e1.cross(&e2),
            half,
            brightness: 0.5 + rng.random_range(-tex.brightness_jitter..=tex.brightness_jitter),
            contrast: tex.contrast,
            octaves,
        }
    }

    /// Ray parameter of the hit, if within the rectangle and in front.
    pub fn intersect(&self, origin: &Point3, dir: &Vec3) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = self.normal.dot(&(self.origin - origin)) / denom;
        if !(t > 1e-9) {
            return None;
        }
        let d = origin + dir * t - self.origin;
        let (s, q) = (d.dot(&self.e1), d.dot(&self.e2));
        (s.abs() <= self.half[0] && q.abs() <= self.half[1]).then_some(t)
    }

    /// Intensity at a point on the plane, before clamping.
    pub fn shade(&self, p: &Point3) -> f64 {
        let d = p - self.origin;
        let (s, t) = (d.dot(&self.e1) + self.half[0], d.dot(&self.e2) + self.half[1]);
        let norm: f64 = self.octaves.iter().map(|l| l.amplitude).sum::<f64>().max(1e-12);
        let field: f64 = self.octaves.iter().map(|l| l.sample(s, t)).sum::<f64>() / norm;
        self.brightness + self.contrast * field
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub planes: Vec<Plane>,
    pub half_extent: [f64; 3],
}

impl Scene {
    /// Closed box around the origin plus randomly oriented interior panels.
    pub fn generate(rng: &mut impl Rng, room: &RoomSpec, tex: &TextureSpec) -> Self {
        let [hx, hy, hz] = room.half_extent;
        let x = Vec3::x();
        let y = Vec3::y();
        let z = Vec3::z();
        let mut planes = vec![
            Plane::new(rng, Point3::new(0.0, 0.0, hz), x, y, [hx, hy], tex),
            Plane::new(rng, Point3::new(0.0, 0.0, -hz), x, y, [hx, hy], tex),
            Plane::new(rng, Point3::new(hx, 0.0, 0.0), z, y, [hz, hy], tex),
            Plane::new(rng, Point3::new(-hx, 0.0, 0.0), z, y, [hz, hy], tex),
            Plane::new(rng, Point3::new(0.0, hy, 0.0), x, z, [hx, hz], tex),
            Plane::new(rng, Point3::new(0.0, -hy, 0.0), x, z, [hx, hz], tex),
        ];
        let n_panels = rng.random_range(room.panels[0]..=room.panels[1]);
        for _ in 0..n_panels {
            let centre = Point3::new(
                rng.random_range(-0.8 * hx..0.8 * hx),
                rng.random_range(-0.6 * hy..0.6 * hy),
                rng.random_range(room.panel_depth[0]..room.panel_depth[1]),
            );
            let yaw: f64 = rng.random_range(-0.9..0.9);
            let pitch: f64 = rng.random_range(-0.5..0.5);
            let normal = Vec3::new(yaw.sin() * pitch.cos(), pitch.sin(), -yaw.cos() * pitch.cos());
            let e1 = Vec3::y().cross(&normal).normalize();
            let e2 = normal.cross(&e1);
            let half = [
                rng.random_range(room.panel_size[0]..room.panel_size[1]) / 2.0,
                rng.random_range(room.panel_size[0]..room.panel_size[1]) / 2.0,
            ];
            planes.push(Plane::new(rng, centre, e1, e2, half, tex));
        }
        Self { planes, half_extent: room.half_extent }
    }

    /// Nearest hit as `(ray parameter, plane index)`.
    pub fn intersect(&self, origin: &Point3, dir: &Vec3) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (k, p) in self.planes.iter().enumerate() {
            if let Some(t) = p.intersect(origin, dir) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, k));
                }
            }
        }
        best
    }

    pub fn contains(&self, p: &Point3) -> bool {
        let h = self.half_extent;
        p.x.abs() < h[0] && p.y.abs() < h[1] && p.z.abs() < h[2]
    }
}

/// Renders intensities (2x2 supersampled, clamped to `[0, 1]`) and the
/// optical-axis depth at pixel centres; depth 0 marks rays that miss.
pub fn render(scene: &Scene, camera: &Camera, width: usize, height: usize) -> (Image, Vec<f64>) {
    let centre = camera.centre();
    let forward = camera.forward();
    let mut image = Image::new(width, height);
    let mut depth = vec![0.0; width * height];
    const OFFSETS: [f64; 2] = [0.25, 0.75];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for oy in OFFSETS {
                for ox in OFFSETS {
                    let dir = camera.ray_direction(x as f64 + ox, y as f64 + oy);
                    if let Some((t, k)) = scene.intersect(&centre, &dir) {
                        acc += scene.planes[k].shade(&(centre + dir * t)).clamp(0.0, 1.0);
                    }
                }
            }
            image.set(x, y, acc / 4.0);
            let dir = camera.ray_direction(x as f64 + 0.5, y as f64 + 0.5);
            if let Some((t, _)) = scene.intersect(&centre, &dir) {
                depth[y * width + x] = t * dir.dot(&forward);
            }
        }
    }
    (image, depth)
}
