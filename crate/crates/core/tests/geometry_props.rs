use epimatch::estimation::{eight_point, Correspondence};
use epimatch::geometry::{
    axis_angle, fundamental_from_pose, project, symmetric_epipolar_distance_sq, Camera, CameraIntrinsics, Point3,
    RelativePose, Vec3,
};
use epimatch::losses::d_epi;
use proptest::prelude::*;

fn pose(axis: [f64; 3], angle: f64, t: [f64; 3]) -> RelativePose {
    let axis = Vec3::from(axis);
    let axis = if axis.norm() < 1e-3 { Vec3::z() } else { axis.normalize() };
    RelativePose { rotation: axis_angle(axis, angle), translation: Vec3::from(t) }
}

fn arb_pose() -> impl Strategy<Value = RelativePose> {
    (prop::array::uniform3(-1.0..1.0f64), -0.3..0.3f64, prop::array::uniform3(-1.0..1.0f64))
        .prop_filter("baseline", |(_, _, t)| Vec3::from(*t).norm() > 0.1)
        .prop_map(|(a, ang, t)| pose(a, ang, t))
}

fn arb_points() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 12..30)
}

fn correspondences(rel: &RelativePose, pts: &[[f64; 3]]) -> (CameraIntrinsics, Vec<Correspondence>) {
    let k = CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0).unwrap();
    let cam1 = Camera::new(k, RelativePose::identity());
    let cam2 = Camera::new(k, *rel);
    let matches = pts
        .iter()
        .filter_map(|p| {
            let x = Point3::new(p[0], p[1], 4.0 + 2.0 * p[2]);
            let (a, _) = project(&cam1, &x).ok()?;
            let (b, _) = project(&cam2, &x).ok()?;
            Some(Correspondence::new(a, b, 1.0))
        })
        .collect();
    (k, matches)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn projections_satisfy_the_epipolar_constraint(rel in arb_pose(), pts in arb_points()) {
        let (k, matches) = correspondences(&rel, &pts);
        let f = fundamental_from_pose(&k, &k, &rel).unwrap();
        prop_assert!(f.is_rank2());
        for m in &matches {
            let d = symmetric_epipolar_distance_sq(&f, &m.x1, &m.x2).unwrap();
            prop_assert!(d < 1e-12, "distance {d}");
            let (e, _) = d_epi(&f, &m.x1, &m.x2).unwrap();
            prop_assert!(e.abs() < 1e-6, "d_epi {e}");
        }
    }

    #[test]
    fn eight_point_recovers_exact_geometry(rel in arb_pose(), pts in arb_points()) {
        let (k, matches) = correspondences(&rel, &pts);
        prop_assume!(matches.len() >= 12);
        let f = eight_point(&matches).unwrap();
        prop_assert!(f.is_rank2());
        for m in &matches {
            let d = symmetric_epipolar_distance_sq(&f, &m.x1, &m.x2).unwrap();
            prop_assert!(d < 1e-6, "distance {d}");
        }
        let gt = fundamental_from_pose(&k, &k, &rel).unwrap();
        prop_assert!(f.canonical().max_abs_diff(&gt) < 1e-5);
    }

    #[test]
    fn symmetric_distance_is_swap_invariant(rel in arb_pose(), a in prop::array::uniform2(0.0..320.0f64), b in prop::array::uniform2(0.0..240.0f64)) {
        let k = CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0).unwrap();
        let f = fundamental_from_pose(&k, &k, &rel).unwrap();
        let (x1, x2) = (epimatch::geometry::HomPoint2::pixel(a[0], b[0]), epimatch::geometry::HomPoint2::pixel(a[1], b[1]));
        let d = symmetric_epipolar_distance_sq(&f, &x1, &x2).unwrap();
        let d_swap = symmetric_epipolar_distance_sq(&f.transpose(), &x2, &x1).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - d_swap).abs() <= 1e-9 * d.max(1.0));
    }
}
