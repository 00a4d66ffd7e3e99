//! Random camera pairs and exact correspondences for tests and oracles.

use rand::Rng;

use crate::estimation::Correspondence;
use crate::geometry::{axis_angle, project, relative_pose, Camera, CameraIntrinsics, Point3, RelativePose, Vec3};

pub const IMAGE_WIDTH: f64 = 640.0;
pub const IMAGE_HEIGHT: f64 = 480.0;

#[derive(Debug, Clone, Copy)]
pub struct PairFixture {
    pub cam1: Camera,
    pub cam2: Camera,
}

impl PairFixture {
    pub fn relative(&self) -> RelativePose {
        relative_pose(&self.cam1, &self.cam2)
    }
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Camera 1 at the origin, camera 2 displaced by 0.3–1.5 units and rotated
/// by up to 20° about a random axis; both 640×480 with f = 500.
pub fn random_pair(rng: &mut impl Rng) -> PairFixture {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
    let r = axis_angle(random_unit(rng), rng.random_range(0.0..20f64.to_radians()));
    let t = random_unit(rng) * rng.random_range(0.3..1.5);
    PairFixture {
        cam1: Camera::new(k, RelativePose::identity()),
        cam2: Camera::new(k, RelativePose { rotation: r, translation: t }),
    }
}

/// A random point in front of camera 1 that is visible in both images.
pub fn visible_point(rng: &mut impl Rng, pair: &PairFixture) -> Point3 {
    loop {
        let z = rng.random_range(3.0..8.0);
        let p = Point3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.45..0.45) * z, z);
        let (Ok((x1, _)), Ok((x2, _))) = (project(&pair.cam1, &p), project(&pair.cam2, &p)) else {
            continue;
        };
        let inside = |u: f64, v: f64| u >= 0.0 && v >= 0.0 && u < IMAGE_WIDTH && v < IMAGE_HEIGHT;
        if inside(x1.u, x1.v) && inside(x2.u, x2.v) {
            return p;
        }
    }
}

pub fn synthetic_matches(rng: &mut impl Rng, pair: &PairFixture, n: usize) -> Vec<Correspondence> {
    (0..n)
        .map(|_| {
            let p = visible_point(rng, pair);
            let (x1, _) = project(&pair.cam1, &p).unwrap();
            let (x2, _) = project(&pair.cam2, &p).unwrap();
            Correspondence::new(x1, x2, 1.0)
        })
        .collect()
}

/// Uniform random matches inside the 640×480 frames.
pub fn random_matches(rng: &mut impl Rng, n: usize) -> Vec<Correspondence> {
    (0..n)
        .map(|_| {
            Correspondence::from_pixels(
                rng.random_range(0.0..IMAGE_WIDTH),
                rng.random_range(0.0..IMAGE_HEIGHT),
                rng.random_range(0.0..IMAGE_WIDTH),
                rng.random_range(0.0..IMAGE_HEIGHT),
                1.0,
            )
        })
        .collect()
}
