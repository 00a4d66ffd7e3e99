use epimatch::geometry::{Camera, Mat3, Point3, RelativePose};
use epimatch::pairgen::{spearman, symmetric_overlap, PseudoDepthModel};
use epimatch::synth::{covisible_fraction, look_at, make_domain, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic worlds are y-down; pair mining is z-up.
fn to_z_up(cam: &Camera) -> Camera {
    let q = Mat3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0);
    Camera::new(cam.intrinsics, RelativePose { rotation: cam.pose.rotation * q.transpose(), translation: cam.pose.translation })
}

#[test]
fn pseudo_overlap_ranks_like_true_overlap() {
    let spec = make_domain("A").unwrap();
    let model = PseudoDepthModel::Hemisphere { z_plane: -2.0, r_sphere: 4.5 };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut truth, mut pseudo) = (Vec::new(), Vec::new());
    while truth.len() < 200 {
        let scene = Scene::generate(&mut rng, &spec.room, &spec.texture);
        let point = |rng: &mut ChaCha8Rng, s: [f64; 3]| {
            Point3::new(rng.random_range(-s[0]..s[0]), rng.random_range(-s[1]..s[1]), rng.random_range(-s[2]..s[2]))
        };
        let c1 = point(&mut rng, [2.5, 1.0, 2.5]);
        let c2 = c1 + point(&mut rng, [1.0, 0.4, 1.0]).coords;
        let t1 = point(&mut rng, [3.5, 1.5, 3.5]);
        let t2 = t1 + point(&mut rng, [2.5, 0.5, 2.5]).coords;
        let (Ok(p1), Ok(p2)) = (look_at(&c1, &t1, 0.0), look_at(&c2, &t2, 0.0)) else {
            continue;
        };
        if (t1 - c1).norm() < 1.0 || (t2 - c2).norm() < 1.0 {
            continue;
        }
        let k = spec.intrinsics();
        let (a, b) = (Camera::new(k, p1), Camera::new(k, p2));
        truth.push(covisible_fraction(&spec, &scene, &a, &b).min(covisible_fraction(&spec, &scene, &b, &a)));
        pseudo.push(symmetric_overlap(&model, &to_z_up(&a), &to_z_up(&b), 32));
    }
    let rho = spearman(&pseudo, &truth);
    assert!(rho > 0.7, "spearman {rho}");
}
