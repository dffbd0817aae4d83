//! Object map lifecycle.
//!
//! Detections are associated to tracks frame by frame. A track becomes a
//! sphere once its viewing rays span enough angle, is validated against its
//! own observations after enough frames, and then lives in the map where
//! keyframes refine it and duplicates get fused.

mod track;

pub use track::{FrameData, Keyframe, ObjectTrack, PointLandmark, TrackStatus};

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::assoc::{associate, Detection, LandmarkId};
use crate::geometry::{aligned_box_iou_3d, bbox_iou, Ellipsoid};
use crate::num::Real;
use crate::recon::{
    baseline_angle, initial_reconstruction, passes_baseline_gate, refine_ellipsoid, Observation, RefineConfig,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapConfig<T: Real> {
    /// Observations required before a reconstructed track is validated.
    pub validation_frames: usize,
    /// Minimum projected-vs-detected box IoU in every observed frame.
    pub validation_iou: T,
    pub fusion_iou: T,
    /// Fusion triggers when strictly more landmarks than this are shared.
    pub fusion_shared_landmarks: usize,
    /// Frames without a detection after which a 2D-only track is dropped.
    pub stale_tracking_frames: u64,
    /// Same for reconstructed tracks that never reached validation.
    pub stale_reconstructed_frames: u64,
    pub refine: RefineConfig<T>,
}

impl<T: Real> Default for MapConfig<T> {
    fn default() -> Self {
        Self {
            validation_frames: 40,
            validation_iou: T::lit(0.3),
            fusion_iou: T::lit(0.2),
            fusion_shared_landmarks: 10,
            stale_tracking_frames: 10,
            stale_reconstructed_frames: 60,
            refine: RefineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionCriterion {
    BoxOverlap,
    CenterInside,
    SharedLandmarks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeRecord {
    pub kept: u64,
    pub absorbed: u64,
    pub criterion: FusionCriterion,
}

/// What happened during one call to [`ObjectMap::process_frame`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameReport {
    pub frame_id: u64,
    pub low_score_dropped: usize,
    pub matched: usize,
    pub point_matched: usize,
    pub spawned: Vec<u64>,
    pub reconstructed: Vec<u64>,
    pub validated: Vec<u64>,
    pub rejected: Vec<u64>,
    pub refined: BTreeSet<u64>,
    pub merges: Vec<MergeRecord>,
    pub anomalies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MapError {
    #[error("duplicate object id {0}")]
    DuplicateObject(u64),
    #[error("non-finite landmark {0}")]
    BadLandmark(LandmarkId),
}

#[derive(Debug, Clone)]
pub struct ObjectMap<T: Real> {
    pub config: MapConfig<T>,
    tracks: BTreeMap<u64, ObjectTrack<T>>,
    landmarks: BTreeMap<LandmarkId, Vector3<T>>,
    keyframes: BTreeMap<u64, Keyframe<T>>,
    category_index: BTreeMap<u32, BTreeSet<u64>>,
    next_id: u64,
    rejected: BTreeSet<u64>,
}

impl<T: Real> Default for ObjectMap<T> {
    fn default() -> Self {
        Self::new(MapConfig::default())
    }
}

impl<T: Real> ObjectMap<T> {
    pub fn new(config: MapConfig<T>) -> Self {
        Self {
            config,
            tracks: BTreeMap::new(),
            landmarks: BTreeMap::new(),
            keyframes: BTreeMap::new(),
            category_index: BTreeMap::new(),
            next_id: 0,
            rejected: BTreeSet::new(),
        }
    }

    /// Builds a map from stored objects, landmarks and keyframes.
    pub fn from_parts(
        objects: Vec<(u64, u32, Ellipsoid<T>)>,
        landmarks: Vec<PointLandmark<T>>,
        keyframes: Vec<Keyframe<T>>,
    ) -> Result<Self, MapError> {
        let mut map = Self::default();
        for lm in landmarks {
            if !lm.position.iter().all(|v| v.is_finite()) {
                return Err(MapError::BadLandmark(lm.id));
            }
            map.landmarks.insert(lm.id, lm.position);
        }
        for (id, category, e) in objects {
            let mut t = ObjectTrack::from_ellipsoid(id, category, e);
            t.refresh_landmarks(&map.landmarks);
            if map.tracks.insert(id, t).is_some() {
                return Err(MapError::DuplicateObject(id));
            }
            map.next_id = map.next_id.max(id + 1);
        }
        for kf in keyframes {
            map.keyframes.insert(kf.frame_id, kf);
        }
        map.reindex();
        Ok(map)
    }

    /// Objects integrated in the map, by id.
    pub fn objects(&self) -> impl Iterator<Item = &ObjectTrack<T>> {
        self.tracks.values().filter(|t| t.status() == TrackStatus::InMap)
    }

    pub fn object(&self, id: u64) -> Option<&ObjectTrack<T>> {
        self.tracks.get(&id).filter(|t| t.status() == TrackStatus::InMap)
    }

    pub fn object_count(&self) -> usize {
        self.objects().count()
    }

    /// Every live track, including those not yet validated.
    pub fn tracks(&self) -> impl Iterator<Item = &ObjectTrack<T>> {
        self.tracks.values()
    }

    pub fn landmarks(&self) -> &BTreeMap<LandmarkId, Vector3<T>> {
        &self.landmarks
    }

    pub fn keyframes(&self) -> &BTreeMap<u64, Keyframe<T>> {
        &self.keyframes
    }

    pub fn category_index(&self) -> &BTreeMap<u32, BTreeSet<u64>> {
        &self.category_index
    }

    pub fn objects_of_category(&self, category: u32) -> impl Iterator<Item = &ObjectTrack<T>> {
        self.category_index.get(&category).into_iter().flatten().filter_map(|id| self.tracks.get(id))
    }

    pub fn rejected_ids(&self) -> &BTreeSet<u64> {
        &self.rejected
    }

    fn reindex(&mut self) {
        self.category_index.clear();
        for t in self.tracks.values().filter(|t| t.status() == TrackStatus::InMap) {
            self.category_index.entry(t.category).or_default().insert(t.id);
        }
    }

    fn reject(&mut self, id: u64, report: &mut FrameReport) {
        if let Some(mut t) = self.tracks.remove(&id) {
            t.advance(TrackStatus::Rejected);
            self.rejected.insert(id);
            report.rejected.push(id);
        }
    }

    /// Runs the per-frame pipeline for a frame whose pose is known.
    pub fn process_frame(&mut self, frame: &FrameData<T>, is_keyframe: bool) -> FrameReport {
        let mut report = FrameReport { frame_id: frame.frame_id, ..FrameReport::default() };
        for lm in &frame.landmarks {
            if lm.position.iter().all(|v| v.is_finite()) {
                self.landmarks.insert(lm.id, lm.position);
            } else {
                report.anomalies.push(format!("landmark {} has non-finite coordinates", lm.id));
            }
        }

        let dets: Vec<Detection<T>> = frame.detections.iter().filter(|d| d.passes_score_floor()).copied().collect();
        report.low_score_dropped = frame.detections.len() - dets.len();
        let p = frame.pose.projection(&frame.intrinsics);

        let ids: Vec<u64> = self.tracks.keys().copied().collect();
        let assignment = {
            let views: Vec<&ObjectTrack<T>> = ids.iter().map(|id| &self.tracks[id]).collect();
            associate(&dets, &views, &p, &frame.matches)
        };
        report.matched = assignment.matches.len();
        report.point_matched = assignment.point_matches.len();

        let mut touched = Vec::new();
        for &(d, o) in &assignment.matches {
            let id = ids[o];
            let obs = Observation::new(frame.frame_id, frame.pose, frame.intrinsics, dets[d]);
            if let Some(t) = self.tracks.get_mut(&id) {
                t.push(obs);
                touched.push(id);
            }
        }
        for &d in &assignment.unmatched_detections {
            let id = self.next_id;
            self.next_id += 1;
            let obs = Observation::new(frame.frame_id, frame.pose, frame.intrinsics, dets[d]);
            self.tracks.insert(id, ObjectTrack::new(id, obs));
            report.spawned.push(id);
        }

        for id in touched {
            self.advance_track(id, &mut report);
        }
        self.prune_stale(frame.frame_id, &mut report);

        if is_keyframe {
            if self.keyframes.keys().next_back().is_some_and(|last| *last >= frame.frame_id) {
                report.anomalies.push(format!("keyframe {} is not newer than the last keyframe", frame.frame_id));
            } else {
                self.keyframes.insert(
                    frame.frame_id,
                    Keyframe {
                        frame_id: frame.frame_id,
                        timestamp: frame.timestamp,
                        pose: frame.pose,
                        detections: dets.clone(),
                        matches: frame.matches.clone(),
                    },
                );
                report.refined = self.local_object_mapping(frame.frame_id);
                report.merges = self.fuse_objects();
            }
        }
        self.reindex();
        report
    }

    /// Gate, reconstruct, update and validate a track that was just observed.
    fn advance_track(&mut self, id: u64, report: &mut FrameReport) {
        let Some(t) = self.tracks.get(&id) else { return };
        let locked = RefineConfig { orientation_locked: true, ..self.config.refine };
        match t.status() {
            TrackStatus::Tracking2D if t.observations.len() >= 2 => {
                let obs = t.observation_list();
                if !baseline_angle(&obs).is_ok_and(passes_baseline_gate) {
                    return;
                }
                let Ok(e) = initial_reconstruction(&obs, &self.config.refine) else { return };
                let t = self.tracks.get_mut(&id).expect("track exists");
                t.advance(TrackStatus::Reconstructed);
                t.set_ellipsoid(e);
                t.refresh_landmarks(&self.landmarks);
                report.reconstructed.push(id);
            }
            TrackStatus::Reconstructed => {
                // one locked pass per new observation until validation
                let obs = t.observation_list();
                let e = refine_ellipsoid(t.ellipsoid().expect("reconstructed"), &obs, &locked).ellipsoid;
                let t = self.tracks.get_mut(&id).expect("track exists");
                t.set_ellipsoid(e);
                t.refresh_landmarks(&self.landmarks);
            }
            _ => return,
        }

        let t = &self.tracks[&id];
        if t.status() != TrackStatus::Reconstructed || t.observations.len() < self.config.validation_frames {
            return;
        }
        let e = *t.ellipsoid().expect("reconstructed");
        if self.consistent_in_all_frames(&e, &t.observation_list()) {
            let t = self.tracks.get_mut(&id).expect("track exists");
            t.advance(TrackStatus::InMap);
            report.validated.push(id);
        } else {
            self.reject(id, report);
        }
    }

    fn consistent_in_all_frames(&self, e: &Ellipsoid<T>, obs: &[Observation<T>]) -> bool {
        let q = e.to_dual_quadric();
        obs.iter().all(|o| {
            q.project(&o.projection)
                .and_then(|c| c.to_ellipse())
                .is_ok_and(|ell| bbox_iou(&ell.bbox(), &o.detection.bbox) >= self.config.validation_iou)
        })
    }

    fn prune_stale(&mut self, frame_id: u64, report: &mut FrameReport) {
        let stale: Vec<u64> = self
            .tracks
            .values()
            .filter(|t| {
                let idle = frame_id.saturating_sub(t.last_seen);
                match t.status() {
                    TrackStatus::Tracking2D => idle > self.config.stale_tracking_frames,
                    TrackStatus::Reconstructed => idle > self.config.stale_reconstructed_frames,
                    _ => false,
                }
            })
            .map(|t| t.id)
            .collect();
        for id in stale {
            self.reject(id, report);
        }
    }

    /// Refines every reconstructed object seen in `keyframe_id` over its
    /// keyframe observations and recomputes landmark membership.
    pub fn local_object_mapping(&mut self, keyframe_id: u64) -> BTreeSet<u64> {
        let kf_ids: BTreeSet<u64> = self.keyframes.keys().copied().collect();
        if !kf_ids.contains(&keyframe_id) {
            return BTreeSet::new();
        }
        let jobs: Vec<(u64, Ellipsoid<T>, Vec<Observation<T>>)> = self
            .tracks
            .values()
            .filter(|t| matches!(t.status(), TrackStatus::Reconstructed | TrackStatus::InMap))
            .filter(|t| t.observations.contains_key(&keyframe_id))
            .map(|t| (t.id, *t.ellipsoid().expect("reconstructed"), t.observations_in(&kf_ids)))
            .collect();
        let cfg = RefineConfig { orientation_locked: false, ..self.config.refine };
        let results: Vec<(u64, Ellipsoid<T>)> =
            jobs.par_iter().map(|(id, e, obs)| (*id, refine_ellipsoid(e, obs, &cfg).ellipsoid)).collect();

        let mut refined = BTreeSet::new();
        for (id, e) in results {
            if let Some(t) = self.tracks.get_mut(&id) {
                t.set_ellipsoid(e);
                t.refresh_landmarks(&self.landmarks);
                refined.insert(id);
            }
        }
        refined
    }

    fn fusion_criterion(&self, a: &ObjectTrack<T>, b: &ObjectTrack<T>) -> Option<FusionCriterion> {
        if a.category != b.category {
            return None;
        }
        let (ea, eb) = (a.ellipsoid()?, b.ellipsoid()?);
        if aligned_box_iou_3d(ea, eb) > self.config.fusion_iou {
            return Some(FusionCriterion::BoxOverlap);
        }
        if ea.contains(&eb.center) || eb.contains(&ea.center) {
            return Some(FusionCriterion::CenterInside);
        }
        let shared = a.landmarks.intersection(&b.landmarks).count();
        (shared > self.config.fusion_shared_landmarks).then_some(FusionCriterion::SharedLandmarks)
    }

    fn find_duplicate(&self) -> Option<(u64, u64, FusionCriterion)> {
        let candidates: Vec<&ObjectTrack<T>> = self.tracks.values().filter(|t| t.ellipsoid().is_some()).collect();
        for (i, a) in candidates.iter().enumerate() {
            for b in &candidates[i + 1..] {
                if let Some(c) = self.fusion_criterion(a, b) {
                    return Some((a.id, b.id, c));
                }
            }
        }
        None
    }

    /// Merges same-category duplicates until no pair meets a fusion criterion.
    pub fn fuse_objects(&mut self) -> Vec<MergeRecord> {
        let mut records = Vec::new();
        let kf_ids: BTreeSet<u64> = self.keyframes.keys().copied().collect();
        while let Some((kept, absorbed, criterion)) = self.find_duplicate() {
            let gone = self.tracks.remove(&absorbed).expect("absorbed track exists");
            let t = self.tracks.get_mut(&kept).expect("kept track exists");
            for (frame, obs) in &gone.observations {
                t.observations.entry(*frame).or_insert_with(|| obs.clone());
            }
            if gone.last_seen > t.last_seen {
                t.last_seen = gone.last_seen;
                t.last_bbox = gone.last_bbox;
            }
            t.frames_since_reconstruction = t.frames_since_reconstruction.max(gone.frames_since_reconstruction);
            if gone.status() == TrackStatus::InMap {
                t.advance(TrackStatus::InMap);
            }

            let on_keyframes = t.observations_in(&kf_ids);
            let fresh = initial_reconstruction(&on_keyframes, &self.config.refine)
                .or_else(|_| initial_reconstruction(&t.observation_list(), &self.config.refine));
            if let Ok(e) = fresh {
                let cfg = RefineConfig { orientation_locked: false, ..self.config.refine };
                let e = if on_keyframes.len() >= 2 { refine_ellipsoid(&e, &on_keyframes, &cfg).ellipsoid } else { e };
                t.set_ellipsoid(e);
            }
            t.refresh_landmarks(&self.landmarks);
            records.push(MergeRecord { kept, absorbed, criterion });
        }
        if !records.is_empty() {
            self.reindex();
        }
        records
    }

    /// Inserts an object directly, bypassing the tracking lifecycle.
    pub fn insert_object(&mut self, category: u32, ellipsoid: Ellipsoid<T>) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let mut t = ObjectTrack::from_ellipsoid(id, category, ellipsoid);
        t.refresh_landmarks(&self.landmarks);
        self.tracks.insert(id, t);
        self.reindex();
        id
    }

    pub fn insert_landmark(&mut self, id: LandmarkId, position: Vector3<T>) {
        self.landmarks.insert(id, position);
        for t in self.tracks.values_mut() {
            t.refresh_landmarks(&self.landmarks);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, CameraIntrinsics, Pose};
    use nalgebra::Matrix3;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn orbit_pose(i: usize, step_deg: f64) -> Pose<f64> {
        let a = (i as f64 * step_deg).to_radians();
        Pose::look_at(&Vector3::new(4.0 * a.sin(), -4.0 * a.cos(), 1.0), &Vector3::zeros(), &Vector3::z())
    }

    fn frame(i: usize, pose: Pose<f64>, dets: Vec<Detection<f64>>) -> FrameData<f64> {
        FrameData {
            frame_id: i as u64,
            timestamp: i as f64,
            pose,
            intrinsics: k(),
            detections: dets,
            matches: Vec::new(),
            landmarks: Vec::new(),
        }
    }

    fn exact_detection(e: &Ellipsoid<f64>, pose: &Pose<f64>, category: u32) -> Detection<f64> {
        let c = e.to_dual_quadric().project(&pose.projection(&k())).unwrap();
        Detection { bbox: c.to_ellipse().unwrap().bbox(), category, score: 0.9 }
    }

    fn object() -> Ellipsoid<f64> {
        Ellipsoid::new(Vector3::new(0.1, 0.0, 0.0), Vector3::new(0.3, 0.2, 0.15), Matrix3::identity()).unwrap()
    }

    #[test]
    fn consistent_orbit_yields_one_object() {
        let e = object();
        let mut map = ObjectMap::default();
        for i in 0..80 {
            let pose = orbit_pose(i, 0.5);
            map.process_frame(&frame(i, pose, vec![exact_detection(&e, &pose, 3)]), i % 5 == 0);
        }
        assert_eq!(map.object_count(), 1);
        let obj = map.objects().next().unwrap();
        assert_eq!(obj.category, 3);
        assert!((obj.ellipsoid().unwrap().center - e.center).norm() < 0.05);
        assert_eq!(map.category_index()[&3], BTreeSet::from([obj.id]));
    }

    #[test]
    fn low_score_detections_are_ignored() {
        let e = object();
        let mut map = ObjectMap::default();
        for i in 0..60 {
            let pose = orbit_pose(i, 0.5);
            let mut d = exact_detection(&e, &pose, 1);
            d.score = 0.4;
            let r = map.process_frame(&frame(i, pose, vec![d]), false);
            assert_eq!(r.low_score_dropped, 1);
        }
        assert_eq!(map.tracks().count(), 0);
    }

    #[test]
    fn scattered_false_positive_never_reconstructed() {
        let mut map = ObjectMap::default();
        for i in 0..120 {
            let pose = orbit_pose(i, 0.5);
            let dets = if i % 40 == 5 {
                vec![Detection { bbox: BBox::new(300.0, 200.0, 340.0, 260.0).unwrap(), category: 9, score: 0.9 }]
            } else {
                Vec::new()
            };
            let r = map.process_frame(&frame(i, pose, dets), false);
            assert!(r.reconstructed.is_empty());
        }
        assert_eq!(map.object_count(), 0);
    }

    #[test]
    fn keyframe_without_objects_refines_nothing() {
        let mut map: ObjectMap<f64> = ObjectMap::default();
        let r = map.process_frame(&frame(0, orbit_pose(0, 0.5), Vec::new()), true);
        assert!(r.refined.is_empty());
        assert_eq!(map.keyframes().len(), 1);
    }

    #[test]
    fn fusion_by_box_overlap_and_category() {
        let a = Ellipsoid::sphere(Vector3::new(0.0, 0.0, 0.0), 0.5).unwrap();
        // aligned boxes [-0.5,0.5]^3 and shifted by 0.6 along x: IoU = 0.4*1*1 / (2 - 0.4) = 0.25
        let b = Ellipsoid::sphere(Vector3::new(0.6, 0.0, 0.0), 0.5).unwrap();
        assert!((aligned_box_iou_3d(&a, &b) - 0.25f64).abs() < 1e-12);

        let mut map = ObjectMap::default();
        map.insert_object(1, a);
        map.insert_object(2, b);
        assert!(map.fuse_objects().is_empty());

        let mut map = ObjectMap::default();
        let ka = map.insert_object(1, a);
        let kb = map.insert_object(1, b);
        let merges = map.fuse_objects();
        assert_eq!(merges, vec![MergeRecord { kept: ka, absorbed: kb, criterion: FusionCriterion::BoxOverlap }]);
        assert_eq!(map.object_count(), 1);
        assert_eq!(map.category_index()[&1], BTreeSet::from([ka]));
    }

    #[test]
    fn fusion_by_shared_landmarks() {
        let a = Ellipsoid::sphere(Vector3::new(0.0, 0.0, 0.0), 0.5).unwrap();
        let b = Ellipsoid::sphere(Vector3::new(2.0, 0.0, 0.0), 0.5).unwrap();
        let mut map = ObjectMap::default();
        let ka = map.insert_object(4, a);
        let kb = map.insert_object(4, b);
        for i in 0..11u64 {
            map.insert_landmark(i, Vector3::new(0.1, 0.0, 0.0));
        }
        map.tracks.get_mut(&kb).unwrap().landmarks = (0..11).collect();
        let merges = map.fuse_objects();
        assert_eq!(merges.len(), 1);
        assert_eq!(merges[0].criterion, FusionCriterion::SharedLandmarks);
        assert_eq!(merges[0].kept, ka);

        // exactly ten shared does not trigger
        let mut map = ObjectMap::default();
        map.insert_object(4, a);
        let kb = map.insert_object(4, b);
        for i in 0..10u64 {
            map.insert_landmark(i, Vector3::new(0.1, 0.0, 0.0));
        }
        map.tracks.get_mut(&kb).unwrap().landmarks = (0..10).collect();
        assert!(map.fuse_objects().is_empty());
    }

    #[test]
    fn landmark_sets_follow_ellipsoid() {
        let mut map = ObjectMap::default();
        map.insert_landmark(1, Vector3::new(0.0, 0.0, 0.0));
        map.insert_landmark(2, Vector3::new(5.0, 0.0, 0.0));
        let id = map.insert_object(0, Ellipsoid::sphere(Vector3::zeros(), 1.0).unwrap());
        assert_eq!(map.object(id).unwrap().landmarks, BTreeSet::from([1]));
    }

    #[test]
    fn duplicate_ids_rejected_on_load() {
        let e = Ellipsoid::sphere(Vector3::zeros(), 1.0).unwrap();
        let r = ObjectMap::from_parts(vec![(3, 0, e), (3, 1, e)], Vec::new(), Vec::new());
        assert_eq!(r.unwrap_err(), MapError::DuplicateObject(3));
    }
}
