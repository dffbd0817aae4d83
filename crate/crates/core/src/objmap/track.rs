use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Vector2, Vector3};

use crate::assoc::{Detection, LandmarkId, TrackView};
use crate::geometry::{BBox, CameraIntrinsics, Ellipsoid, Pose};
use crate::num::Real;
use crate::recon::Observation;

/// Lifecycle of an object hypothesis. Transitions only move forward:
/// `Tracking2D -> Reconstructed -> (InMap | Rejected)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrackStatus {
    Tracking2D,
    Reconstructed,
    InMap,
    Rejected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack<T: Real> {
    pub id: u64,
    pub category: u32,
    pub observations: BTreeMap<u64, Observation<T>>,
    status: TrackStatus,
    ellipsoid: Option<Ellipsoid<T>>,
    pub landmarks: BTreeSet<LandmarkId>,
    pub last_bbox: BBox<T>,
    pub last_seen: u64,
    /// Observations gathered since the initial reconstruction.
    pub frames_since_reconstruction: usize,
}

impl<T: Real> ObjectTrack<T> {
    pub fn new(id: u64, first: Observation<T>) -> Self {
        let mut observations = BTreeMap::new();
        let last_bbox = first.detection.bbox;
        let last_seen = first.frame_id;
        let category = first.detection.category;
        observations.insert(first.frame_id, first);
        Self {
            id,
            category,
            observations,
            status: TrackStatus::Tracking2D,
            ellipsoid: None,
            landmarks: BTreeSet::new(),
            last_bbox,
            last_seen,
            frames_since_reconstruction: 0,
        }
    }

    /// A map object known only by its shape (e.g. loaded from disk).
    pub fn from_ellipsoid(id: u64, category: u32, ellipsoid: Ellipsoid<T>) -> Self {
        // outside every image, so it never overlaps a detection
        let placeholder = BBox { xmin: -T::one(), ymin: -T::one(), xmax: T::zero(), ymax: T::zero() };
        Self {
            id,
            category,
            observations: BTreeMap::new(),
            status: TrackStatus::InMap,
            ellipsoid: Some(ellipsoid),
            landmarks: BTreeSet::new(),
            last_bbox: placeholder,
            last_seen: 0,
            frames_since_reconstruction: 0,
        }
    }

    pub fn status(&self) -> TrackStatus {
        self.status
    }

    pub fn ellipsoid(&self) -> Option<&Ellipsoid<T>> {
        self.ellipsoid.as_ref()
    }

    pub fn is_active(&self) -> bool {
        self.status != TrackStatus::Rejected
    }

    /// Moves the lifecycle forward; backward moves are ignored and reported as `false`.
    pub(crate) fn advance(&mut self, next: TrackStatus) -> bool {
        let allowed = matches!(
            (self.status, next),
            (TrackStatus::Tracking2D, TrackStatus::Reconstructed)
                | (TrackStatus::Tracking2D, TrackStatus::Rejected)
                | (TrackStatus::Reconstructed, TrackStatus::InMap)
                | (TrackStatus::Reconstructed, TrackStatus::Rejected)
        );
        if allowed {
            self.status = next;
        }
        allowed
    }

    /// Replaces the ellipsoid as one unit. Only reconstructed tracks carry one.
    pub(crate) fn set_ellipsoid(&mut self, e: Ellipsoid<T>) {
        debug_assert!(self.status >= TrackStatus::Reconstructed);
        self.ellipsoid = Some(e);
    }

    pub fn observation_list(&self) -> Vec<Observation<T>> {
        self.observations.values().cloned().collect()
    }

    pub fn observations_in(&self, frames: &BTreeSet<u64>) -> Vec<Observation<T>> {
        self.observations.iter().filter(|(f, _)| frames.contains(f)).map(|(_, o)| o.clone()).collect()
    }

    pub(crate) fn push(&mut self, obs: Observation<T>) {
        self.last_bbox = obs.detection.bbox;
        self.last_seen = obs.frame_id;
        if self.status == TrackStatus::Reconstructed {
            self.frames_since_reconstruction += 1;
        }
        self.observations.insert(obs.frame_id, obs);
    }

    /// Recomputes the landmark set from scratch against `landmarks`.
    pub(crate) fn refresh_landmarks(&mut self, landmarks: &BTreeMap<LandmarkId, Vector3<T>>) {
        self.landmarks = match &self.ellipsoid {
            Some(e) => landmarks.iter().filter(|(_, x)| e.contains(x)).map(|(id, _)| *id).collect(),
            None => BTreeSet::new(),
        };
    }
}

impl<T: Real> TrackView<T> for ObjectTrack<T> {
    fn id(&self) -> u64 {
        self.id
    }
    fn category(&self) -> u32 {
        self.category
    }
    fn last_bbox(&self) -> &BBox<T> {
        &self.last_bbox
    }
    fn ellipsoid(&self) -> Option<&Ellipsoid<T>> {
        self.ellipsoid.as_ref()
    }
    fn landmarks(&self) -> &BTreeSet<LandmarkId> {
        &self.landmarks
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLandmark<T: Real> {
    pub id: LandmarkId,
    pub position: Vector3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe<T: Real> {
    pub frame_id: u64,
    pub timestamp: f64,
    pub pose: Pose<T>,
    pub detections: Vec<Detection<T>>,
    pub matches: Vec<(Vector2<T>, LandmarkId)>,
}

/// Everything the mapper receives for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData<T: Real> {
    pub frame_id: u64,
    pub timestamp: f64,
    pub pose: Pose<T>,
    pub intrinsics: CameraIntrinsics<T>,
    pub detections: Vec<Detection<T>>,
    /// Keypoints already matched to map landmarks.
    pub matches: Vec<(Vector2<T>, LandmarkId)>,
    /// Landmark positions known at this frame (inserted or updated).
    pub landmarks: Vec<PointLandmark<T>>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(frame: u64) -> Observation<f64> {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let b = BBox::new(10.0, 10.0, 20.0, 30.0).unwrap();
        Observation::new(frame, Pose::identity(), k, Detection { bbox: b, category: 2, score: 0.9 })
    }

    #[test]
    fn lifecycle_is_monotone() {
        let mut t = ObjectTrack::new(1, obs(0));
        assert_eq!(t.status(), TrackStatus::Tracking2D);
        assert!(!t.advance(TrackStatus::InMap));
        assert!(t.advance(TrackStatus::Reconstructed));
        assert!(!t.advance(TrackStatus::Tracking2D));
        assert!(t.advance(TrackStatus::Rejected));
        assert!(!t.advance(TrackStatus::InMap));
        assert!(!t.advance(TrackStatus::Reconstructed));
        assert_eq!(t.status(), TrackStatus::Rejected);
    }

    #[test]
    fn reconstruction_counter_starts_after_reconstruction() {
        let mut t = ObjectTrack::new(1, obs(0));
        t.push(obs(1));
        assert_eq!(t.frames_since_reconstruction, 0);
        t.advance(TrackStatus::Reconstructed);
        t.push(obs(2));
        assert_eq!(t.frames_since_reconstruction, 1);
        assert_eq!(t.last_seen, 2);
        assert_eq!(t.observations.len(), 3);
    }
}
