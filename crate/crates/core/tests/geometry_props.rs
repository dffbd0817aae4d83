//! Round trips of the dual representations and properties of the
//! Wasserstein cost, checked against independent computations.

use ellipsoid_slam::geometry::{
    bbox_iou, ellipse_bbox, BBox, CameraIntrinsics, DualConic, DualQuadric, Ellipse, Ellipsoid, Gaussian2, Pose,
};
use ellipsoid_slam::recon::{sqrtm_spd2, wasserstein2};
use nalgebra::{Matrix2, Rotation3, Vector2, Vector3};
use proptest::prelude::*;

fn ellipsoid() -> impl Strategy<Value = Ellipsoid<f64>> {
    (
        prop::array::uniform3(-3.0..3.0f64),
        prop::array::uniform3(0.05..2.0f64),
        prop::array::uniform3(-3.0..3.0f64),
    )
        .prop_map(|(c, a, r)| {
            let rot = Rotation3::new(Vector3::from(r)).into_inner();
            Ellipsoid::new(Vector3::from(c), Vector3::from(a), rot).unwrap()
        })
}

fn ellipse() -> impl Strategy<Value = Ellipse<f64>> {
    (-500.0..500.0f64, -500.0..500.0f64, 0.5..200.0f64, 0.5..200.0f64, -4.0..4.0f64)
        .prop_map(|(x, y, a, b, t)| Ellipse::new(Vector2::new(x, y), a, b, t).unwrap())
}

fn gaussian() -> impl Strategy<Value = Gaussian2<f64>> {
    ellipse().prop_map(|e| e.to_gaussian())
}

fn w2(a: &Gaussian2<f64>, b: &Gaussian2<f64>) -> f64 {
    wasserstein2(a, b).unwrap().sqrt()
}

/// Square root by eigendecomposition, independent of the closed form.
fn sqrtm_eigen(m: &Matrix2<f64>) -> Matrix2<f64> {
    let e = m.symmetric_eigen();
    let d = Matrix2::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
    e.eigenvectors * d * e.eigenvectors.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ellipsoid_dual_quadric_round_trip(e in ellipsoid()) {
        let back = e.to_dual_quadric().to_ellipsoid().unwrap();
        prop_assert!((back.center - e.center).amax() < 1e-9);
        prop_assert!((back.shape_matrix() - e.shape_matrix()).amax() < 1e-9 * e.max_axis().powi(2).max(1.0));
        // a scaled quadric is the same ellipsoid
        let scaled = DualQuadric(e.to_dual_quadric().0 * -3.7).to_ellipsoid().unwrap();
        prop_assert!((scaled.center - e.center).amax() < 1e-9);
    }

    #[test]
    fn ellipse_dual_conic_round_trip(e in ellipse()) {
        let back = e.to_dual_conic().to_ellipse().unwrap();
        let scale = e.major().powi(2).max(1.0);
        prop_assert!((back.center - e.center).amax() < 1e-9 * e.center.amax().max(1.0));
        prop_assert!((back.shape_matrix() - e.shape_matrix()).amax() < 1e-9 * scale);
        prop_assert!((back.axes - e.axes).amax() < 1e-9 * e.major().max(1.0));
        let scaled = DualConic(e.to_dual_conic().0 * 0.25).to_ellipse().unwrap();
        prop_assert!((scaled.shape_matrix() - e.shape_matrix()).amax() < 1e-9 * scale);
    }

    #[test]
    fn ellipse_box_matches_extreme_points(e in ellipse()) {
        // extreme points of a densely sampled boundary
        let m = e.shape_matrix();
        let l = m.cholesky().unwrap().l();
        let (mut lo, mut hi) = (Vector2::repeat(f64::MAX), Vector2::repeat(f64::MIN));
        for k in 0..20_000 {
            let t = k as f64 * std::f64::consts::TAU / 20_000.0;
            let p = e.center + l * Vector2::new(t.cos(), t.sin());
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let b = ellipse_bbox(&e);
        let tol = 1e-6 * e.major().max(1.0);
        prop_assert!((b.xmin - lo.x).abs() < tol && (b.ymin - lo.y).abs() < tol);
        prop_assert!((b.xmax - hi.x).abs() < tol && (b.ymax - hi.y).abs() < tol);
    }

    #[test]
    fn sqrtm_matches_eigendecomposition(g in gaussian()) {
        let s = sqrtm_spd2(&g.cov);
        let oracle = sqrtm_eigen(&g.cov);
        let scale = g.cov.amax().sqrt().max(1.0);
        prop_assert!((s - oracle).amax() < 1e-10 * scale);
        prop_assert!((s * s - g.cov).amax() < 1e-10 * g.cov.amax().max(1.0));
    }

    #[test]
    fn wasserstein_is_a_metric(a in gaussian(), b in gaussian(), c in gaussian()) {
        let scale = [&a, &b, &c].iter().map(|g| g.mean.amax() + g.cov.amax().sqrt()).fold(1.0, f64::max);
        prop_assert!(w2(&a, &a) < 1e-6 * scale);
        prop_assert!((w2(&a, &b) - w2(&b, &a)).abs() < 1e-9 * scale);
        prop_assert!(w2(&a, &c) <= w2(&a, &b) + w2(&b, &c) + 1e-9 * scale);
        prop_assert!(wasserstein2(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn wasserstein_of_translated_copies_is_the_offset(g in gaussian(), dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let moved = Gaussian2 { mean: g.mean + Vector2::new(dx, dy), cov: g.cov };
        let d2 = wasserstein2(&g, &moved).unwrap();
        prop_assert!((d2 - (dx * dx + dy * dy)).abs() < 1e-8 * (1.0 + g.cov.amax()));
    }

    #[test]
    fn pose_retraction_and_center(r in prop::array::uniform3(-3.0..3.0f64), c in prop::array::uniform3(-5.0..5.0f64)) {
        let rcw = Rotation3::new(Vector3::from(r)).into_inner();
        let p = Pose::from_camera_to_world(rcw, Vector3::from(c));
        prop_assert!((p.center() - Vector3::from(c)).amax() < 1e-12);
        prop_assert!((p.transform(&p.center())).amax() < 1e-12);
        prop_assert!(p.is_valid(1e-9));
        let q = p.retract(&Vector3::zeros(), &Vector3::zeros());
        prop_assert!((q.rotation - p.rotation).amax() < 1e-15);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in ellipse(), b in ellipse()) {
        let (ba, bb) = (ellipse_bbox(&a), ellipse_bbox(&b));
        let i = bbox_iou(&ba, &bb);
        prop_assert!((0.0..=1.0).contains(&i));
        prop_assert!((i - bbox_iou(&bb, &ba)).abs() < 1e-15);
        prop_assert!((bbox_iou(&ba, &ba) - 1.0).abs() < 1e-12);
    }
}

/// Silhouette of sampled surface points against the projected conic.
#[test]
fn projection_matches_sampled_silhouette() {
    let k = CameraIntrinsics::new(500.0, 480.0, 320.0, 240.0, 640, 480).unwrap();
    let e = Ellipsoid::new(
        Vector3::new(0.3, -0.2, 0.1),
        Vector3::new(0.5, 0.2, 0.3),
        Rotation3::new(Vector3::new(0.4, -0.7, 1.1)).into_inner(),
    )
    .unwrap();
    let pose = Pose::look_at(&Vector3::new(2.5, 2.0, 1.2), &Vector3::zeros(), &Vector3::z());
    let b = e.to_dual_quadric().project(&pose.projection(&k)).unwrap().to_ellipse().unwrap().bbox();
    let (mut lo, mut hi) = (Vector2::repeat(f64::MAX), Vector2::repeat(f64::MIN));
    let n = 600;
    for i in 0..=n {
        let theta = std::f64::consts::PI * i as f64 / n as f64;
        for j in 0..2 * n {
            let phi = std::f64::consts::PI * j as f64 / n as f64;
            let u = Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
            let x = e.center + e.rotation * u.component_mul(&e.axes);
            let p = k.project(&pose.transform(&x)).unwrap();
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
    }
    let expected = BBox::new(lo.x, lo.y, hi.x, hi.y).unwrap();
    for (a, b) in b.to_array().iter().zip(expected.to_array()) {
        assert!((a - b).abs() < 0.05, "{a} vs {b}");
    }
}

/// The same code path runs in single precision.
#[test]
fn single_precision_round_trip() {
    let e = Ellipsoid::<f32>::new(
        Vector3::new(0.3, -0.2, 1.0),
        Vector3::new(0.5, 0.2, 0.3),
        Rotation3::new(Vector3::new(0.4, -0.7, 1.1)).into_inner(),
    )
    .unwrap();
    let back = e.to_dual_quadric().to_ellipsoid().unwrap();
    assert!((back.center - e.center).amax() < 1e-5);
    assert!((back.shape_matrix() - e.shape_matrix()).amax() < 1e-5);
    let k = CameraIntrinsics::<f32>::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let pose = Pose::look_at(&Vector3::new(2.5, 2.0, 1.2), &Vector3::zeros(), &Vector3::z());
    let e64 = Ellipsoid::<f64>::new(e.center.cast(), e.axes.cast(), e.rotation.cast()).unwrap();
    let pose64 = Pose::new(pose.rotation.cast(), pose.translation.cast());
    let k64 = CameraIntrinsics::<f64>::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let b32 = e.to_dual_quadric().project(&pose.projection(&k)).unwrap().to_ellipse().unwrap().bbox();
    let b64 = e64.to_dual_quadric().project(&pose64.projection(&k64)).unwrap().to_ellipse().unwrap().bbox();
    for (a, b) in b32.to_array().iter().zip(b64.to_array()) {
        assert!((*a as f64 - b).abs() < 1e-2, "{a} vs {b}");
    }
}
