//! File formats: map and data files as JSON, trajectories as TUM text.
//!
//! Readers validate the whole document before building anything, so a
//! schema error never leaves a half-loaded result behind.

mod json;
mod tum;

pub use json::to_string as to_json;
pub use tum::{format_tum, parse_tum, parse_tum_records, write_tum, TumRecord};

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc::{Detection, LandmarkId};
use crate::geometry::{BBox, Ellipsoid, Pose};
use crate::objmap::{Keyframe, ObjectMap, PointLandmark};
use crate::sim::{GroundTruthScene, Keypoint};

/// Tolerance on quaternion norms and rotation orthonormality.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error: {0}")]
    Schema(String),
}

impl IoError {
    /// True for errors in the content of a file, as opposed to I/O failures.
    pub fn is_schema(&self) -> bool {
        !matches!(self, IoError::Io { .. })
    }
}

fn schema(msg: impl Into<String>) -> IoError {
    IoError::Schema(msg.into())
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

fn parse<D: DeserializeOwned>(text: &str) -> Result<D, IoError> {
    Ok(serde_json::from_str(text)?)
}

fn finite(values: &[f64], what: &str) -> Result<(), IoError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(schema(format!("{what}: non-finite value")))
    }
}

fn unit_quaternion(q: [f64; 4], what: &str) -> Result<(), IoError> {
    finite(&q, what)?;
    let [x, y, z, w] = q;
    let raw = Quaternion::new(w, x, y, z);
    if (raw.norm() - 1.0).abs() > UNIT_TOLERANCE {
        return Err(schema(format!("{what}: quaternion norm {} is not 1", raw.norm())));
    }
    Ok(())
}

fn quaternion_array(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.i, q.j, q.k, q.w]
}

fn decode_pose(translation: [f64; 3], quaternion: [f64; 4]) -> Pose<f64> {
    let [x, y, z, w] = quaternion;
    let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
    Pose::from_camera_to_world(q.to_rotation_matrix().into_inner(), Vector3::from(translation))
}

/// `[tx, ty, tz]` camera center and `[qx, qy, qz, qw]` camera-to-world rotation, `qw >= 0`.
pub fn pose_to_tum(pose: &Pose<f64>) -> ([f64; 3], [f64; 4]) {
    let c = pose.center();
    let q = pose.orientation_cw();
    let q = if q.w < 0.0 { UnitQuaternion::new_unchecked(-q.into_inner()) } else { q };
    ([c.x, c.y, c.z], quaternion_array(&q))
}

pub fn pose_from_tum(translation: [f64; 3], quaternion: [f64; 4], what: &str) -> Result<Pose<f64>, IoError> {
    finite(&translation, what)?;
    unit_quaternion(quaternion, what)?;
    Ok(decode_pose(translation, quaternion))
}

fn unique_ids(ids: impl Iterator<Item = u64>, what: &str) -> Result<(), IoError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(schema(format!("duplicate {what} id {id}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectRecord {
    pub id: u64,
    pub category: u32,
    pub center: [f64; 3],
    pub axes: [f64; 3],
    /// Row-major; columns are the principal directions.
    pub rotation: [f64; 9],
}

impl ObjectRecord {
    pub fn new(id: u64, category: u32, e: &Ellipsoid<f64>) -> Self {
        let r = &e.rotation;
        Self {
            id,
            category,
            center: e.center.into(),
            axes: e.axes.into(),
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        }
    }

    pub fn ellipsoid(&self) -> Result<Ellipsoid<f64>, IoError> {
        let what = format!("object {}", self.id);
        finite(&self.center, &what)?;
        finite(&self.axes, &what)?;
        finite(&self.rotation, &what)?;
        Ellipsoid::new(self.center.into(), self.axes.into(), Matrix3::from_row_slice(&self.rotation))
            .map_err(|e| schema(format!("{what}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandmarkRecord {
    pub id: LandmarkId,
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeRecord {
    pub id: u64,
    pub timestamp: f64,
    /// Camera center in world coordinates.
    pub translation: [f64; 3],
    /// Camera-to-world rotation `[qx, qy, qz, qw]`.
    pub quaternion: [f64; 4],
}

/// On-disk form of an [`ObjectMap`]: integrated objects, landmarks and keyframe poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFile {
    pub objects: Vec<ObjectRecord>,
    pub landmarks: Vec<LandmarkRecord>,
    pub keyframes: Vec<KeyframeRecord>,
}

impl MapFile {
    pub fn from_map(map: &ObjectMap<f64>) -> Self {
        let objects =
            map.objects().filter_map(|t| t.ellipsoid().map(|e| ObjectRecord::new(t.id, t.category, e))).collect();
        let landmarks =
            map.landmarks().iter().map(|(id, p)| LandmarkRecord { id: *id, position: (*p).into() }).collect();
        let keyframes = map
            .keyframes()
            .values()
            .map(|kf| {
                let (translation, quaternion) = pose_to_tum(&kf.pose);
                KeyframeRecord { id: kf.frame_id, timestamp: kf.timestamp, translation, quaternion }
            })
            .collect();
        Self { objects, landmarks, keyframes }
    }

    pub fn to_map(&self) -> Result<ObjectMap<f64>, IoError> {
        unique_ids(self.objects.iter().map(|o| o.id), "object")?;
        unique_ids(self.landmarks.iter().map(|l| l.id), "landmark")?;
        unique_ids(self.keyframes.iter().map(|k| k.id), "keyframe")?;
        let objects =
            self.objects.iter().map(|o| Ok((o.id, o.category, o.ellipsoid()?))).collect::<Result<Vec<_>, IoError>>()?;
        let landmarks = self
            .landmarks
            .iter()
            .map(|l| {
                finite(&l.position, &format!("landmark {}", l.id))?;
                Ok(PointLandmark { id: l.id, position: l.position.into() })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        let keyframes = self
            .keyframes
            .iter()
            .map(|k| {
                let what = format!("keyframe {}", k.id);
                finite(&[k.timestamp], &what)?;
                Ok(Keyframe {
                    frame_id: k.id,
                    timestamp: k.timestamp,
                    pose: pose_from_tum(k.translation, k.quaternion, &what)?,
                    detections: Vec::new(),
                    matches: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>, IoError>>()?;
        ObjectMap::from_parts(objects, landmarks, keyframes).map_err(|e| schema(e.to_string()))
    }
}

pub fn map_to_json(map: &ObjectMap<f64>) -> String {
    json::to_string(&MapFile::from_map(map)).expect("map records serialize")
}

pub fn map_from_json(text: &str) -> Result<ObjectMap<f64>, IoError> {
    parse::<MapFile>(text)?.to_map()
}

pub fn save_map(map: &ObjectMap<f64>, path: &Path) -> Result<(), IoError> {
    write_text(path, &map_to_json(map))
}

pub fn load_map(path: &Path) -> Result<ObjectMap<f64>, IoError> {
    map_from_json(&read_text(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    /// `[xmin, ymin, xmax, ymax]` in pixels.
    pub bbox: [f64; 4],
    pub category_id: u32,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFrame {
    pub frame_id: u64,
    pub timestamp: f64,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionFrame {
    pub fn new(frame_id: u64, timestamp: f64, detections: &[Detection<f64>]) -> Self {
        let detections = detections
            .iter()
            .map(|d| DetectionRecord { bbox: d.bbox.to_array(), category_id: d.category, score: d.score })
            .collect();
        Self { frame_id, timestamp, detections }
    }

    pub fn detections(&self) -> Vec<Detection<f64>> {
        self.detections
            .iter()
            .map(|d| {
                let [x0, y0, x1, y1] = d.bbox;
                Detection { bbox: BBox { xmin: x0, ymin: y0, xmax: x1, ymax: y1 }, category: d.category_id, score: d.score }
            })
            .collect()
    }
}

/// Per-frame detector output.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFile {
    pub frames: Vec<DetectionFrame>,
}

impl DetectionFile {
    pub fn validate(&self) -> Result<(), IoError> {
        for w in self.frames.windows(2) {
            if w[1].frame_id <= w[0].frame_id {
                return Err(schema(format!("frame ids not strictly increasing at {}", w[1].frame_id)));
            }
        }
        for f in &self.frames {
            finite(&[f.timestamp], &format!("frame {}", f.frame_id))?;
            for d in &f.detections {
                let what = format!("frame {} detection", f.frame_id);
                finite(&d.bbox, &what)?;
                let [x0, y0, x1, y1] = d.bbox;
                BBox::new(x0, y0, x1, y1).map_err(|e| schema(format!("{what}: {e}")))?;
                if !(0.0..=1.0).contains(&d.score) {
                    return Err(schema(format!("{what}: score {} outside [0, 1]", d.score)));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let file: Self = parse(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        json::to_string(self).expect("detection records serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointRecord {
    pub uv: [f64; 2],
    /// Matched landmark, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmark_id: Option<LandmarkId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointFrame {
    pub frame_id: u64,
    pub keypoints: Vec<KeypointRecord>,
}

impl KeypointFrame {
    pub fn new(frame_id: u64, keypoints: &[Keypoint]) -> Self {
        let keypoints =
            keypoints.iter().map(|k| KeypointRecord { uv: k.uv.into(), landmark_id: Some(k.landmark) }).collect();
        Self { frame_id, keypoints }
    }

    pub fn points(&self) -> Vec<Vector2<f64>> {
        self.keypoints.iter().map(|k| Vector2::from(k.uv)).collect()
    }

    /// Keypoints with a known landmark.
    pub fn matches(&self) -> Vec<(Vector2<f64>, LandmarkId)> {
        self.keypoints.iter().filter_map(|k| Some((Vector2::from(k.uv), k.landmark_id?))).collect()
    }
}

/// Landmark table plus per-frame keypoints matched against it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeypointFile {
    pub landmarks: Vec<LandmarkRecord>,
    pub frames: Vec<KeypointFrame>,
}

impl KeypointFile {
    pub fn validate(&self) -> Result<(), IoError> {
        unique_ids(self.landmarks.iter().map(|l| l.id), "landmark")?;
        let known: BTreeSet<LandmarkId> = self.landmarks.iter().map(|l| l.id).collect();
        for l in &self.landmarks {
            finite(&l.position, &format!("landmark {}", l.id))?;
        }
        for w in self.frames.windows(2) {
            if w[1].frame_id <= w[0].frame_id {
                return Err(schema(format!("keypoint frame ids not strictly increasing at {}", w[1].frame_id)));
            }
        }
        for f in &self.frames {
            for k in &f.keypoints {
                finite(&k.uv, &format!("frame {} keypoint", f.frame_id))?;
                if let Some(id) = k.landmark_id.filter(|id| !known.contains(id)) {
                    return Err(schema(format!("frame {}: unknown landmark {id}", f.frame_id)));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let file: Self = parse(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        json::to_string(self).expect("keypoint records serialize")
    }

    pub fn landmarks(&self) -> Vec<PointLandmark<f64>> {
        self.landmarks.iter().map(|l| PointLandmark { id: l.id, position: l.position.into() }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneLandmarkRecord {
    pub id: LandmarkId,
    pub position: [f64; 3],
    /// Object the landmark lies on, if any.
    pub object: Option<u64>,
}

/// Ground-truth objects and landmarks of a simulated scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub centroid: [f64; 3],
    pub diameter: f64,
    pub objects: Vec<ObjectRecord>,
    pub landmarks: Vec<SceneLandmarkRecord>,
}

impl SceneFile {
    pub fn from_scene(scene: &GroundTruthScene) -> Self {
        Self {
            centroid: scene.centroid().into(),
            diameter: scene.diameter(),
            objects: scene.objects.iter().map(|o| ObjectRecord::new(o.id, o.category, &o.ellipsoid)).collect(),
            landmarks: scene
                .landmarks
                .iter()
                .map(|l| SceneLandmarkRecord { id: l.id, position: l.position.into(), object: l.object })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        finite(&self.centroid, "centroid")?;
        if !(self.diameter.is_finite() && self.diameter > 0.0) {
            return Err(schema("scene diameter must be positive"));
        }
        unique_ids(self.objects.iter().map(|o| o.id), "object")?;
        unique_ids(self.landmarks.iter().map(|l| l.id), "landmark")?;
        for o in &self.objects {
            o.ellipsoid()?;
        }
        for l in &self.landmarks {
            finite(&l.position, &format!("landmark {}", l.id))?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, IoError> {
        let file: Self = parse(text)?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        json::to_string(self).expect("scene records serialize")
    }
}
