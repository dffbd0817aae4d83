//! Synthetic scenes, trajectories and noisy detections.
//!
//! Objects are upright ellipsoids resting on the ground plane `z = 0`.
//! Detections come from the exact projected ellipse of each visible object,
//! keypoints from the projections of point landmarks; both are perturbed by
//! configurable noise. Everything is a pure function of its seed.

mod trajectory;

pub use trajectory::{generate_trajectory, TimedPose, TrajectoryKind, TrajectorySpec};

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::{Detection, LandmarkId};
use crate::geometry::{BBox, CameraIntrinsics, Ellipsoid, Pose};
use crate::objmap::{FrameData, PointLandmark};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("could not place object {0} without overlap")]
    PlacementFailure(usize),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScenePreset {
    #[default]
    Random,
    /// Three same-category objects side by side, plus random others.
    Duplicates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub object_count: usize,
    /// Relative frequency of each category id (index = category).
    pub category_weights: Vec<f64>,
    /// Side of the square region holding object centers (meters).
    pub extent: f64,
    pub min_axis: f64,
    pub max_axis: f64,
    pub landmarks_per_object: usize,
    pub background_landmarks: usize,
    pub seed: u64,
    pub preset: ScenePreset,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            object_count: 10,
            category_weights: vec![1.0; 6],
            extent: 3.0,
            min_axis: 0.08,
            max_axis: 0.25,
            landmarks_per_object: 20,
            background_landmarks: 200,
            seed: 0,
            preset: ScenePreset::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Standard deviation of each box coordinate (pixels).
    pub box_sigma: f64,
    pub dropout: f64,
    /// Mean number of false positives per frame.
    pub false_positive_rate: f64,
    pub score_min: f64,
    pub score_max: f64,
    pub keypoint_sigma: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { box_sigma: 0.0, dropout: 0.0, false_positive_rate: 0.0, score_min: 0.6, score_max: 1.0, keypoint_sigma: 0.0 }
    }
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.to_string()));
        if !(0.0..=1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1]");
        }
        if !(self.box_sigma >= 0.0 && self.keypoint_sigma >= 0.0 && self.false_positive_rate >= 0.0) {
            return bad("noise magnitudes must be non-negative");
        }
        if !(self.score_min > 0.5 && self.score_min <= self.score_max && self.score_max <= 1.0) {
            return bad("scores must satisfy 0.5 < min <= max <= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub id: u64,
    pub category: u32,
    pub ellipsoid: Ellipsoid<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtLandmark {
    pub id: LandmarkId,
    pub position: Vector3<f64>,
    /// Object the landmark lies on, if any.
    pub object: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub objects: Vec<GtObject>,
    pub landmarks: Vec<GtLandmark>,
    pub trajectory: Vec<TimedPose>,
}

impl GroundTruthScene {
    /// Centroid of the object centers.
    pub fn centroid(&self) -> Vector3<f64> {
        if self.objects.is_empty() {
            return Vector3::zeros();
        }
        self.objects.iter().map(|o| o.ellipsoid.center).sum::<Vector3<f64>>() / self.objects.len() as f64
    }

    /// Diagonal of the box enclosing every object.
    pub fn diameter(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for o in &self.objects {
            let (a, b) = o.ellipsoid.aabb();
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
        if self.objects.is_empty() {
            0.0
        } else {
            (hi - lo).norm()
        }
    }
}

fn upright(center_xy: Vector2<f64>, axes: Vector3<f64>, yaw: f64) -> Ellipsoid<f64> {
    let r = *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix();
    Ellipsoid::new(Vector3::new(center_xy.x, center_xy.y, axes.z), axes, r).expect("valid upright ellipsoid")
}

fn separated(e: &Ellipsoid<f64>, others: &[GtObject]) -> bool {
    others.iter().all(|o| (o.ellipsoid.center - e.center).norm() > o.ellipsoid.max_axis() + e.max_axis())
}

fn pick_category(rng: &mut ChaCha8Rng, weights: &[f64]) -> u32 {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i as u32;
        }
        u -= w;
    }
    weights.len().saturating_sub(1) as u32
}

/// Uniform sample inside the ellipsoid shrunk by `shrink`.
fn sample_inside(rng: &mut ChaCha8Rng, e: &Ellipsoid<f64>, shrink: f64) -> Vector3<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let dir = Vector3::from_fn(|_, _| normal.sample(rng)).normalize();
    let r = shrink * rng.random::<f64>().cbrt();
    e.center + e.rotation * dir.component_mul(&e.axes) * r
}

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Deterministic scene for `spec.seed`.
pub fn generate_scene(spec: &SceneSpec) -> Result<GroundTruthScene, SimError> {
    if !(spec.extent > 0.0) || !(spec.min_axis > 0.0 && spec.min_axis <= spec.max_axis) {
        return Err(SimError::InvalidSpec("extent and axis range must be positive".into()));
    }
    if spec.category_weights.is_empty() || spec.category_weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(SimError::InvalidSpec("category weights must be non-negative and non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut objects: Vec<GtObject> = Vec::new();

    if spec.preset == ScenePreset::Duplicates {
        // bottles on a line, spaced just beyond the non-overlap bound
        let axes = Vector3::new(0.07, 0.07, 0.13);
        for (i, x) in [-0.27, 0.0, 0.27].iter().enumerate() {
            let e = upright(Vector2::new(*x, 0.0), axes, 0.0);
            objects.push(GtObject { id: i as u64, category: 0, ellipsoid: e });
        }
    }

    let half = spec.extent / 2.0;
    let axis_dist = Uniform::new_inclusive(spec.min_axis, spec.max_axis).expect("valid axis range");
    while objects.len() < spec.object_count {
        let index = objects.len();
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let axes = Vector3::new(axis_dist.sample(&mut rng), axis_dist.sample(&mut rng), axis_dist.sample(&mut rng));
            let xy = Vector2::new(rng.random_range(-half..half), rng.random_range(-half..half));
            let yaw = rng.random_range(0.0..std::f64::consts::PI);
            let e = upright(xy, axes, yaw);
            if separated(&e, &objects) {
                placed = Some(e);
                break;
            }
        }
        let e = placed.ok_or(SimError::PlacementFailure(index))?;
        let category = pick_category(&mut rng, &spec.category_weights);
        objects.push(GtObject { id: index as u64, category, ellipsoid: e });
    }

    let mut landmarks = Vec::new();
    for o in &objects {
        for _ in 0..spec.landmarks_per_object {
            let position = sample_inside(&mut rng, &o.ellipsoid, 0.95);
            landmarks.push(GtLandmark { id: landmarks.len() as u64, position, object: Some(o.id) });
        }
    }
    let mut background = 0;
    let mut attempts = 0;
    while background < spec.background_landmarks {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS * spec.background_landmarks.max(1) {
            return Err(SimError::InvalidSpec("background landmarks do not fit outside the objects".into()));
        }
        let p = Vector3::new(
            rng.random_range(-1.5 * half..1.5 * half),
            rng.random_range(-1.5 * half..1.5 * half),
            rng.random_range(0.0..spec.max_axis * 3.0),
        );
        if objects.iter().any(|o| o.ellipsoid.contains(&p)) {
            continue;
        }
        landmarks.push(GtLandmark { id: landmarks.len() as u64, position: p, object: None });
        background += 1;
    }
    Ok(GroundTruthScene { objects, landmarks, trajectory: Vec::new() })
}

/// A keypoint with the id of the landmark it images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub uv: Vector2<f64>,
    pub landmark: LandmarkId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub detections: Vec<Detection<f64>>,
    /// Ground-truth object per detection, `None` for false positives.
    pub sources: Vec<Option<u64>>,
    pub keypoints: Vec<Keypoint>,
}

/// Per-frame seed derived from a base seed.
pub fn frame_seed(base: u64, frame: u64) -> u64 {
    base ^ frame.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Smallest fraction of the unclipped box that must stay inside the image.
pub const MIN_VISIBLE_FRACTION: f64 = 0.25;

/// Detections and keypoints seen from `pose`.
pub fn render_frame(
    scene: &GroundTruthScene,
    pose: &Pose<f64>,
    k: &CameraIntrinsics<f64>,
    noise: &NoiseSpec,
    seed: u64,
) -> RenderedFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let box_noise = Normal::new(0.0, noise.box_sigma).expect("finite sigma");
    let kp_noise = Normal::new(0.0, noise.keypoint_sigma).expect("finite sigma");
    let (w, h) = (k.width as f64, k.height as f64);
    let p = pose.projection(k);
    let camera = pose.center();

    let mut detections = Vec::new();
    let mut sources = Vec::new();
    for o in &scene.objects {
        // draw every random number regardless of visibility so frames stay aligned
        let jitter: [f64; 4] = std::array::from_fn(|_| box_noise.sample(&mut rng));
        let dropped = rng.random::<f64>() < noise.dropout;
        let score = rng.random_range(noise.score_min..=noise.score_max);
        if o.ellipsoid.contains(&camera) || dropped {
            continue;
        }
        let Ok(ellipse) = o.ellipsoid.to_dual_quadric().project(&p).and_then(|c| c.to_ellipse()) else { continue };
        let exact = ellipse.bbox();
        let Ok(noisy) = BBox::new(exact.xmin + jitter[0], exact.ymin + jitter[1], exact.xmax + jitter[2], exact.ymax + jitter[3])
        else {
            continue;
        };
        let Some(clipped) = noisy.clip(w, h) else { continue };
        if clipped.area() < MIN_VISIBLE_FRACTION * noisy.area() {
            continue;
        }
        detections.push(Detection { bbox: clipped, category: o.category, score });
        sources.push(Some(o.id));
    }

    let categories = scene.objects.iter().map(|o| o.category).max().map_or(1, |c| c + 1);
    let fp_count = if noise.false_positive_rate > 0.0 {
        Poisson::new(noise.false_positive_rate).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    for _ in 0..fp_count {
        let bw = rng.random_range(0.05 * w..0.3 * w);
        let bh = rng.random_range(0.05 * h..0.3 * h);
        let x0 = rng.random_range(0.0..w - bw);
        let y0 = rng.random_range(0.0..h - bh);
        let bbox = BBox::new(x0, y0, x0 + bw, y0 + bh).expect("positive size");
        let category = rng.random_range(0..categories);
        let score = rng.random_range(noise.score_min..=noise.score_max);
        detections.push(Detection { bbox, category, score });
        sources.push(None);
    }

    let mut keypoints = Vec::new();
    for lm in &scene.landmarks {
        let offset = Vector2::new(kp_noise.sample(&mut rng), kp_noise.sample(&mut rng));
        let Some(uv) = k.project(&pose.transform(&lm.position)) else { continue };
        let uv = uv + offset;
        if k.contains(&uv) {
            keypoints.push(Keypoint { uv, landmark: lm.id });
        }
    }
    RenderedFrame { detections, sources, keypoints }
}

impl RenderedFrame {
    /// Mapper input for this frame. Keypoints become keypoint/landmark
    /// matches and the matched landmarks are handed over with their positions.
    pub fn to_frame_data(
        &self,
        scene: &GroundTruthScene,
        frame_id: u64,
        timed: &TimedPose,
        k: &CameraIntrinsics<f64>,
    ) -> FrameData<f64> {
        let lookup: BTreeMap<LandmarkId, Vector3<f64>> = scene.landmarks.iter().map(|l| (l.id, l.position)).collect();
        let matches: Vec<(Vector2<f64>, LandmarkId)> = self.keypoints.iter().map(|kp| (kp.uv, kp.landmark)).collect();
        let landmarks = self
            .keypoints
            .iter()
            .filter_map(|kp| lookup.get(&kp.landmark).map(|x| PointLandmark { id: kp.landmark, position: *x }))
            .collect();
        FrameData {
            frame_id,
            timestamp: timed.timestamp,
            pose: timed.pose,
            intrinsics: *k,
            detections: self.detections.clone(),
            matches,
            landmarks,
        }
    }
}

/// Rotation matrix with the given yaw, for building test scenes.
pub fn yaw(angle: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix()
}
