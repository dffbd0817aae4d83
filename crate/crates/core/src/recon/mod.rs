//! Object reconstruction: sphere initialization from triangulated box
//! centers, then ellipsoid refinement against the ellipses inscribed in the
//! detection boxes, compared as Gaussians under the Wasserstein distance.

mod refine;
mod wasserstein;

pub use refine::{cost_gradient, refine_ellipsoid, retract_ellipsoid, RefineConfig, RefineOutcome, RefineStatus};
pub use wasserstein::{sqrtm_spd2, wasserstein2};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::assoc::Detection;
use crate::geometry::{ellipse_from_bbox, CameraIntrinsics, Ellipsoid, Gaussian2, Pose, ProjectionMatrix};
use crate::num::Real;

/// Minimum ray baseline (degrees) before a track may be reconstructed.
pub const MIN_BASELINE_DEG: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ReconError {
    #[error("at least two observations are required")]
    InsufficientObservations,
    #[error("viewing rays do not constrain a point")]
    DegenerateGeometry,
    #[error("object center is behind a camera")]
    BehindCamera,
    #[error("covariance is not symmetric positive definite")]
    NotSpd,
}

/// One detection of an object together with the camera that saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Real> {
    pub frame_id: u64,
    pub pose: Pose<T>,
    pub intrinsics: CameraIntrinsics<T>,
    pub projection: ProjectionMatrix<T>,
    pub detection: Detection<T>,
}

impl<T: Real> Observation<T> {
    pub fn new(frame_id: u64, pose: Pose<T>, intrinsics: CameraIntrinsics<T>, detection: Detection<T>) -> Self {
        let projection = pose.projection(&intrinsics);
        Self { frame_id, pose, intrinsics, projection, detection }
    }

    /// Unit world-frame ray through the detection box center.
    pub fn center_ray(&self) -> Vector3<T> {
        let d = self.intrinsics.unproject(&self.detection.bbox.center());
        (self.pose.rotation_cw() * d).normalize()
    }

    /// Gaussian of the ellipse inscribed in the detection box.
    pub fn target_gaussian(&self) -> Gaussian2<T> {
        ellipse_from_bbox(&self.detection.bbox).to_gaussian()
    }
}

/// Largest angle between any two box-center rays (radians).
pub fn baseline_angle<T: Real>(obs: &[Observation<T>]) -> Result<T, ReconError> {
    if obs.len() < 2 {
        return Err(ReconError::InsufficientObservations);
    }
    let rays: Vec<_> = obs.iter().map(Observation::center_ray).collect();
    let mut best = T::zero();
    for (i, a) in rays.iter().enumerate() {
        for b in &rays[i + 1..] {
            let angle = a.cross(b).norm().atan2(a.dot(b));
            if angle > best {
                best = angle;
            }
        }
    }
    Ok(best)
}

pub fn passes_baseline_gate<T: Real>(angle: T) -> bool {
    angle > T::lit(MIN_BASELINE_DEG.to_radians())
}

/// Linear least-squares point closest (algebraically) to all box-center rays.
pub fn triangulate_center<T: Real>(obs: &[Observation<T>]) -> Result<Vector3<T>, ReconError> {
    if obs.len() < 2 {
        return Err(ReconError::InsufficientObservations);
    }
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for o in obs {
        let x = o.intrinsics.unproject(&o.detection.bbox.center());
        let r = &o.pose.rotation;
        let t = &o.pose.translation;
        for (coord, row) in [(x.x, 0usize), (x.y, 1usize)] {
            let a: Vector3<T> = r.row(2).transpose() * coord - r.row(row).transpose();
            let b = t[row] - coord * t[2];
            ata += a * a.transpose();
            atb += a * b;
        }
    }
    let eig = ata.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > T::zero()) || min <= max * T::lit(1e-10) {
        return Err(ReconError::DegenerateGeometry);
    }
    let mut x = Vector3::zeros();
    for i in 0..3 {
        let v = eig.eigenvectors.column(i);
        x += v * (v.dot(&atb) / eig.eigenvalues[i]);
    }
    Ok(x)
}

/// Sphere at `center` whose radius is the mean back-projected box size.
pub fn init_sphere<T: Real>(obs: &[Observation<T>], center: &Vector3<T>) -> Result<Ellipsoid<T>, ReconError> {
    if obs.is_empty() {
        return Err(ReconError::InsufficientObservations);
    }
    let two = T::lit(2.0);
    let mut sum = T::zero();
    for o in obs {
        let z = o.pose.transform(center).z;
        if z <= T::zero() {
            return Err(ReconError::BehindCamera);
        }
        let b = &o.detection.bbox;
        sum += z / two * (b.width() / o.intrinsics.fx + b.height() / o.intrinsics.fy);
    }
    let radius = sum / (two * T::lit(obs.len() as f64));
    Ellipsoid::sphere(*center, radius).map_err(|_| ReconError::DegenerateGeometry)
}

/// Triangulated sphere refined with a locked (identity) orientation.
pub fn initial_reconstruction<T: Real>(obs: &[Observation<T>], cfg: &RefineConfig<T>) -> Result<Ellipsoid<T>, ReconError> {
    let center = triangulate_center(obs)?;
    let sphere = init_sphere(obs, &center)?;
    let locked = RefineConfig { orientation_locked: true, ..*cfg };
    Ok(refine_ellipsoid(&sphere, obs, &locked).ellipsoid)
}

/// Value of the weighted reprojection cost and the frames whose projection failed.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectCost<T: Real> {
    pub total: T,
    pub degenerate_frames: Vec<u64>,
}

/// Cost contributed by an observation whose projection is not an ellipse.
pub const DEFAULT_DEGENERATE_PENALTY: f64 = 1.0e6;

/// `sum_j score_j^-1 * W2^2(inscribed ellipse_j, projection_j)`.
pub fn object_cost<T: Real>(e: &Ellipsoid<T>, obs: &[Observation<T>]) -> ObjectCost<T> {
    object_cost_with_penalty(e, obs, T::lit(DEFAULT_DEGENERATE_PENALTY))
}

pub fn object_cost_with_penalty<T: Real>(e: &Ellipsoid<T>, obs: &[Observation<T>], penalty: T) -> ObjectCost<T> {
    let q = e.to_dual_quadric();
    let mut total = T::zero();
    let mut degenerate_frames = Vec::new();
    for o in obs {
        let projected = q.project(&o.projection).and_then(|c| c.to_gaussian());
        match projected {
            Ok(g) => {
                total += wasserstein::wasserstein2_unchecked(&o.target_gaussian(), &g) / o.detection.score;
            }
            Err(_) => {
                total += penalty;
                degenerate_frames.push(o.frame_id);
            }
        }
    }
    ObjectCost { total, degenerate_frames }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;
    use approx::assert_relative_eq;

    fn intrinsics() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn det(b: BBox<f64>, score: f64) -> Detection<f64> {
        Detection { bbox: b, category: 1, score }
    }

    /// Observation of `point` from a camera at `eye`, with a box of the given size around its projection.
    fn obs_of(frame: u64, eye: Vector3<f64>, point: &Vector3<f64>, size: f64) -> Observation<f64> {
        let pose = Pose::look_at(&eye, point, &Vector3::z());
        let uv = intrinsics().project(&pose.transform(point)).unwrap();
        let b = BBox::from_center(&uv, size / 2.0, size / 2.0).unwrap();
        Observation::new(frame, pose, intrinsics(), det(b, 0.9))
    }

    fn orbit_eye(deg: f64, radius: f64) -> Vector3<f64> {
        let a = deg.to_radians();
        Vector3::new(radius * a.cos(), radius * a.sin(), 0.5)
    }

    #[test]
    fn baseline_examples() {
        let target = Vector3::zeros();
        let obs = vec![obs_of(0, orbit_eye(0.0, 3.0), &target, 50.0), obs_of(1, orbit_eye(15.0, 3.0), &target, 50.0)];
        assert!(passes_baseline_gate(baseline_angle(&obs).unwrap()));

        let forward = vec![
            obs_of(0, Vector3::new(4.0, 0.0, 0.0), &target, 50.0),
            obs_of(1, Vector3::new(3.0, 0.0, 0.0), &target, 50.0),
        ];
        let angle = baseline_angle(&forward).unwrap();
        assert!(angle < 1e-9 && !passes_baseline_gate(angle));

        // exact orbit in the plane of the target
        let flat = |deg: f64| {
            let a: f64 = deg.to_radians();
            Vector3::new(3.0 * a.cos(), 3.0 * a.sin(), 0.0)
        };
        let orbit: Vec<_> = (0..=6).map(|k| obs_of(k, flat(5.0 * k as f64), &target, 50.0)).collect();
        assert_relative_eq!(baseline_angle(&orbit).unwrap(), 30f64.to_radians(), epsilon = 1e-9);

        assert_eq!(baseline_angle(&orbit[..1]), Err(ReconError::InsufficientObservations));
    }

    #[test]
    fn triangulation_exact_and_degenerate() {
        let p = Vector3::new(0.0, 0.0, 5.0);
        let obs = vec![obs_of(0, Vector3::new(-1.0, 0.0, 0.0), &p, 40.0), obs_of(1, Vector3::new(1.0, 0.0, 0.0), &p, 40.0)];
        assert_relative_eq!(triangulate_center(&obs).unwrap(), p, epsilon = 1e-9);

        // identical rays from two cameras on the same line
        let same_line = vec![
            obs_of(0, Vector3::new(0.0, 0.0, 0.0), &p, 40.0),
            obs_of(1, Vector3::new(0.0, 0.0, 1.0), &p, 40.0),
        ];
        assert_eq!(triangulate_center(&same_line), Err(ReconError::DegenerateGeometry));
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        // Same orientation, both box centers on the principal point: rays parallel.
        let pose_a = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.0));
        let pose_b = Pose::new(Matrix3::identity(), Vector3::new(-1.0, 0.0, 0.0));
        let b = BBox::new(300.0, 220.0, 340.0, 260.0).unwrap();
        let obs = vec![
            Observation::new(0, pose_a, intrinsics(), det(b, 0.9)),
            Observation::new(1, pose_b, intrinsics(), det(b, 0.9)),
        ];
        assert_eq!(triangulate_center(&obs), Err(ReconError::DegenerateGeometry));
    }

    #[test]
    fn sphere_radius_examples() {
        let pose = Pose::identity();
        let center = Vector3::new(0.0, 0.0, 2.0);
        let b = BBox::new(270.0, 190.0, 370.0, 290.0).unwrap();
        let o = Observation::new(0, pose, intrinsics(), det(b, 0.9));
        let s = init_sphere(&[o.clone()], &center).unwrap();
        assert_eq!(s.axes, Vector3::repeat(0.2));
        assert_eq!(s.rotation, Matrix3::identity());
        let s2 = init_sphere(&[o.clone(), o.clone()], &center).unwrap();
        assert_eq!(s2.axes, Vector3::repeat(0.2));

        let behind = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -3.0));
        let ob = Observation::new(1, behind, intrinsics(), det(b, 0.9));
        assert_eq!(init_sphere(&[o, ob], &center), Err(ReconError::BehindCamera));
    }

    #[test]
    fn cost_scales_with_inverse_score() {
        let truth = Ellipsoid::sphere(Vector3::zeros(), 0.3).unwrap();
        let obs: Vec<_> = (0..4).map(|k| obs_of(k, orbit_eye(10.0 * k as f64, 3.0), &Vector3::zeros(), 80.0)).collect();
        let c1 = object_cost(&truth, &obs).total;
        assert!(c1 > 0.0);
        let doubled: Vec<_> = obs
            .iter()
            .cloned()
            .map(|mut o| {
                o.detection.score *= 2.0;
                o
            })
            .collect();
        assert_relative_eq!(object_cost(&truth, &doubled).total, c1 / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn cost_is_zero_for_matching_projection() {
        // sphere on the optical axis projects to a circle; use its own enclosing box.
        let truth = Ellipsoid::sphere(Vector3::zeros(), 0.3).unwrap();
        let pose = Pose::look_at(&Vector3::new(0.0, -3.0, 0.0), &Vector3::zeros(), &Vector3::z());
        let e = truth.to_dual_quadric().project(&pose.projection(&intrinsics())).unwrap().to_ellipse().unwrap();
        let o = Observation::new(0, pose, intrinsics(), det(e.bbox(), 0.7));
        assert!(object_cost(&truth, &[o]).total < 1e-18);
    }

    #[test]
    fn single_observation_cost_matches_hand_composition() {
        // Unit-focal camera at the origin, sphere at (0,0,5): projected circle radius 1/sqrt(24).
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 2, 2).unwrap();
        let b = BBox::new(-0.3, -0.2, 0.3, 0.2).unwrap();
        let o = Observation::new(0, Pose::identity(), k, det(b, 0.8));
        let sphere = Ellipsoid::sphere(Vector3::new(0.0, 0.0, 5.0), 1.0).unwrap();
        // target Sigma = diag(0.09, 0.04), projection Sigma = I/24, means equal
        let r = (1.0f64 / 24.0).sqrt();
        let w2 = (0.3 - r).powi(2) + (0.2 - r).powi(2);
        assert_relative_eq!(object_cost(&sphere, &[o]).total, w2 / 0.8, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_projection_is_flagged() {
        let e = Ellipsoid::sphere(Vector3::new(0.0, 0.0, 0.0), 1.0).unwrap();
        let b = BBox::new(300.0, 220.0, 340.0, 260.0).unwrap();
        let o = Observation::new(7, Pose::identity(), intrinsics(), det(b, 0.9));
        let c = object_cost(&e, &[o]);
        assert_eq!(c.degenerate_frames, vec![7]);
        assert_eq!(c.total, DEFAULT_DEGENERATE_PENALTY);
    }
}
