//! Frame-to-track data association.
//!
//! Pairs are first constrained by category, then scored by the better of
//! the 2D box overlap with the track's last box and the overlap with the
//! box of the projected ellipsoid. The optimal matching is found with the
//! Hungarian algorithm; leftover detections may still be attached to a
//! reconstructed object when enough matched keypoints agree.

mod hungarian;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Vector2};

use crate::geometry::{bbox_iou, BBox, Ellipsoid, ProjectionMatrix};
use crate::num::Real;

/// Detections at or below this score never enter the pipeline.
pub const SCORE_FLOOR: f64 = 0.5;
/// Hungarian pairs scoring below this are reported unmatched.
pub const ACCEPT_THRESHOLD: f64 = 0.1;
/// Minimum number of keypoint/landmark agreements for a point-based match.
pub const POINT_MATCH_MIN: usize = 10;

pub type LandmarkId = u64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection<T: Real> {
    pub bbox: BBox<T>,
    pub category: u32,
    pub score: T,
}

impl<T: Real> Detection<T> {
    pub fn new(bbox: BBox<T>, category: u32, score: T) -> Option<Self> {
        (score >= T::zero() && score <= T::one()).then_some(Self { bbox, category, score })
    }

    pub fn passes_score_floor(&self) -> bool {
        self.score > T::lit(SCORE_FLOOR)
    }
}

/// What association needs to know about a track or map object.
pub trait TrackView<T: Real> {
    fn id(&self) -> u64;
    fn category(&self) -> u32;
    fn last_bbox(&self) -> &BBox<T>;
    fn ellipsoid(&self) -> Option<&Ellipsoid<T>>;
    fn landmarks(&self) -> &BTreeSet<LandmarkId>;
}

impl<T: Real, V: TrackView<T>> TrackView<T> for &V {
    fn id(&self) -> u64 {
        (*self).id()
    }
    fn category(&self) -> u32 {
        (*self).category()
    }
    fn last_bbox(&self) -> &BBox<T> {
        (*self).last_bbox()
    }
    fn ellipsoid(&self) -> Option<&Ellipsoid<T>> {
        (*self).ellipsoid()
    }
    fn landmarks(&self) -> &BTreeSet<LandmarkId> {
        (*self).landmarks()
    }
}

/// `N x M` association scores with a category feasibility mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix<T: Real> {
    pub scores: DMatrix<T>,
    pub feasible: DMatrix<bool>,
}

impl<T: Real> ScoreMatrix<T> {
    /// All pairs feasible.
    pub fn dense(scores: DMatrix<T>) -> Self {
        let feasible = DMatrix::from_element(scores.nrows(), scores.ncols(), true);
        Self { scores, feasible }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.scores.shape()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(detection index, object index)`, sorted by detection index.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_objects: Vec<usize>,
    /// Subset of `matches` established by the keypoint rescue pass.
    pub point_matches: Vec<(usize, usize)>,
}

impl Assignment {
    fn from_rows(rows: &[Option<usize>], n_objects: usize) -> Self {
        let mut matches = Vec::new();
        let mut unmatched_detections = Vec::new();
        let mut used = vec![false; n_objects];
        for (i, j) in rows.iter().enumerate() {
            match j {
                Some(j) => {
                    matches.push((i, *j));
                    used[*j] = true;
                }
                None => unmatched_detections.push(i),
            }
        }
        let unmatched_objects = (0..n_objects).filter(|j| !used[*j]).collect();
        Self { matches, unmatched_detections, unmatched_objects, point_matches: Vec::new() }
    }

    pub fn object_for(&self, detection: usize) -> Option<usize> {
        self.matches.iter().find(|(d, _)| *d == detection).map(|(_, o)| *o)
    }
}

/// Optimal matching maximizing the total score over feasible pairs scoring
/// at least `accept_threshold`. Ties go to the lexicographically smallest
/// detection-to-object map.
pub fn hungarian<T: Real>(scores: &ScoreMatrix<T>, accept_threshold: T) -> Assignment {
    let (n, m) = scores.shape();
    let weights = DMatrix::from_fn(n, m, |i, j| {
        let s = scores.scores[(i, j)];
        if scores.feasible[(i, j)] && s >= accept_threshold && s > T::zero() {
            s
        } else {
            T::zero()
        }
    });
    let rows = hungarian::lexicographic_max_matching(&weights);
    Assignment::from_rows(&rows, m)
}

/// Score of every detection against every track for the current camera.
pub fn association_scores<T: Real, V: TrackView<T>>(
    dets: &[Detection<T>],
    tracks: &[V],
    p: &ProjectionMatrix<T>,
) -> ScoreMatrix<T> {
    let projected: Vec<Option<BBox<T>>> = tracks
        .iter()
        .map(|t| {
            let e = t.ellipsoid()?;
            let ell = e.to_dual_quadric().project(p).ok()?.to_ellipse().ok()?;
            Some(ell.bbox())
        })
        .collect();
    let n = dets.len();
    let m = tracks.len();
    let mut scores = DMatrix::zeros(n, m);
    let mut feasible = DMatrix::from_element(n, m, false);
    for (i, d) in dets.iter().enumerate() {
        for (j, t) in tracks.iter().enumerate() {
            if d.category != t.category() {
                continue;
            }
            feasible[(i, j)] = true;
            let tracked = bbox_iou(&d.bbox, t.last_bbox());
            let by_projection = projected[j].as_ref().map_or(T::zero(), |b| bbox_iou(&d.bbox, b));
            scores[(i, j)] = tracked.max(by_projection);
        }
    }
    ScoreMatrix { scores, feasible }
}

/// Landmark membership of a reconstructed object.
#[derive(Debug, Clone, Copy)]
pub struct ObjectLandmarks<'a> {
    pub id: u64,
    pub landmarks: &'a BTreeSet<LandmarkId>,
}

/// Number of matched keypoints inside detection `i` whose landmark belongs to object `j`.
pub fn point_based_matches<T: Real>(
    dets: &[Detection<T>],
    kp_landmark_matches: &[(Vector2<T>, LandmarkId)],
    objects: &[ObjectLandmarks<'_>],
) -> DMatrix<usize> {
    let mut counts = DMatrix::zeros(dets.len(), objects.len());
    for (kp, lm) in kp_landmark_matches {
        let owners: Vec<usize> = objects.iter().enumerate().filter(|(_, o)| o.landmarks.contains(lm)).map(|(j, _)| j).collect();
        if owners.is_empty() {
            continue;
        }
        for (i, d) in dets.iter().enumerate() {
            if d.bbox.contains(kp) {
                for &j in &owners {
                    counts[(i, j)] += 1;
                }
            }
        }
    }
    counts
}

pub fn is_point_candidate(count: usize) -> bool {
    count >= POINT_MATCH_MIN
}

/// Geometry-based matching followed by the keypoint rescue pass for
/// leftover detections and reconstructed objects.
pub fn associate<T: Real, V: TrackView<T>>(
    dets: &[Detection<T>],
    tracks: &[V],
    p: &ProjectionMatrix<T>,
    kp_landmark_matches: &[(Vector2<T>, LandmarkId)],
) -> Assignment {
    let scores = association_scores(dets, tracks, p);
    let mut assignment = hungarian(&scores, T::lit(ACCEPT_THRESHOLD));
    if kp_landmark_matches.is_empty() || assignment.unmatched_detections.is_empty() {
        return assignment;
    }

    let candidates: Vec<usize> = assignment
        .unmatched_objects
        .iter()
        .copied()
        .filter(|&j| tracks[j].ellipsoid().is_some() && !tracks[j].landmarks().is_empty())
        .collect();
    if candidates.is_empty() {
        return assignment;
    }
    let leftover: Vec<Detection<T>> = assignment.unmatched_detections.iter().map(|&i| dets[i]).collect();
    let objects: Vec<ObjectLandmarks<'_>> =
        candidates.iter().map(|&j| ObjectLandmarks { id: tracks[j].id(), landmarks: tracks[j].landmarks() }).collect();
    let counts = point_based_matches(&leftover, kp_landmark_matches, &objects);

    let mut taken = vec![false; candidates.len()];
    let mut rescued = Vec::new();
    for (row, &det_index) in assignment.unmatched_detections.iter().enumerate() {
        let best = (0..candidates.len())
            .filter(|&c| !taken[c] && is_point_candidate(counts[(row, c)]))
            .filter(|&c| tracks[candidates[c]].category() == dets[det_index].category)
            .max_by(|&a, &b| counts[(row, a)].cmp(&counts[(row, b)]).then(objects[b].id.cmp(&objects[a].id)));
        if let Some(c) = best {
            taken[c] = true;
            rescued.push((det_index, candidates[c]));
        }
    }
    for (d, o) in &rescued {
        assignment.matches.push((*d, *o));
        assignment.unmatched_detections.retain(|x| x != d);
        assignment.unmatched_objects.retain(|x| x != o);
    }
    assignment.matches.sort_unstable();
    assignment.point_matches = rescued;
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, Pose};
    use nalgebra::Vector3;

    struct Track {
        id: u64,
        category: u32,
        last: BBox<f64>,
        ellipsoid: Option<Ellipsoid<f64>>,
        landmarks: BTreeSet<LandmarkId>,
    }

    impl TrackView<f64> for Track {
        fn id(&self) -> u64 {
            self.id
        }
        fn category(&self) -> u32 {
            self.category
        }
        fn last_bbox(&self) -> &BBox<f64> {
            &self.last
        }
        fn ellipsoid(&self) -> Option<&Ellipsoid<f64>> {
            self.ellipsoid.as_ref()
        }
        fn landmarks(&self) -> &BTreeSet<LandmarkId> {
            &self.landmarks
        }
    }

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox<f64> {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(b: BBox<f64>, category: u32) -> Detection<f64> {
        Detection { bbox: b, category, score: 0.9 }
    }

    fn track(id: u64, category: u32, last: BBox<f64>) -> Track {
        Track { id, category, last, ellipsoid: None, landmarks: BTreeSet::new() }
    }

    fn camera() -> ProjectionMatrix<f64> {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        Pose::identity().projection(&k)
    }

    #[test]
    fn hungarian_examples() {
        let s = ScoreMatrix::dense(DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]));
        let a = hungarian(&s, 0.1);
        assert_eq!(a.matches, vec![(0, 0), (1, 1)]);

        let a = hungarian(&ScoreMatrix::dense(DMatrix::from_row_slice(1, 1, &[0.5])), 0.1);
        assert_eq!(a.matches, vec![(0, 0)]);

        let s = ScoreMatrix::dense(DMatrix::from_row_slice(2, 2, &[0.05, 0.0, 0.0, 0.04]));
        let a = hungarian(&s, 0.1);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched_detections, vec![0, 1]);
        assert_eq!(a.unmatched_objects, vec![0, 1]);

        let empty = hungarian(&ScoreMatrix::<f64>::dense(DMatrix::zeros(0, 3)), 0.1);
        assert_eq!(empty.unmatched_objects, vec![0, 1, 2]);
    }

    #[test]
    fn infeasible_pairs_never_match() {
        let mut s = ScoreMatrix::dense(DMatrix::from_row_slice(1, 2, &[0.9, 0.3]));
        s.feasible[(0, 0)] = false;
        assert_eq!(hungarian(&s, 0.1).matches, vec![(0, 1)]);
    }

    #[test]
    fn score_examples() {
        let b = bx(100.0, 100.0, 150.0, 160.0);
        let same = association_scores(&[det(b, 3)], &[track(0, 3, b)], &camera());
        assert_eq!(same.scores[(0, 0)], 1.0);
        assert!(same.feasible[(0, 0)]);

        let far = association_scores(&[det(b, 3)], &[track(0, 3, bx(400.0, 300.0, 420.0, 330.0))], &camera());
        assert_eq!(far.scores[(0, 0)], 0.0);

        let other = association_scores(&[det(b, 3)], &[track(0, 4, b)], &camera());
        assert_eq!(other.scores[(0, 0)], 0.0);
        assert!(!other.feasible[(0, 0)]);
    }

    #[test]
    fn projection_term_rescues_stale_box() {
        let e = Ellipsoid::sphere(Vector3::new(0.0, 0.0, 4.0), 0.4).unwrap();
        let projected = e.to_dual_quadric().project(&camera()).unwrap().to_ellipse().unwrap().bbox();
        let mut t = track(0, 1, bx(0.0, 0.0, 10.0, 10.0));
        t.ellipsoid = Some(e);
        let s = association_scores(&[det(projected, 1)], &[t], &camera());
        assert!((s.scores[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_counts() {
        let dets = [det(bx(0.0, 0.0, 100.0, 100.0), 1)];
        let set: BTreeSet<LandmarkId> = (0..12).collect();
        let objects = [ObjectLandmarks { id: 5, landmarks: &set }];
        let kps: Vec<_> = (0..12).map(|k| (Vector2::new(10.0 + k as f64, 50.0), k as u64)).collect();
        let c = point_based_matches(&dets, &kps, &objects);
        assert_eq!(c[(0, 0)], 12);
        assert!(is_point_candidate(c[(0, 0)]));

        assert_eq!(point_based_matches(&dets, &[], &objects)[(0, 0)], 0);
        let c9 = point_based_matches(&dets, &kps[..9], &objects);
        assert!(!is_point_candidate(c9[(0, 0)]));
    }

    #[test]
    fn associate_examples() {
        let b = bx(100.0, 100.0, 150.0, 160.0);
        let a = associate(&[det(b, 2)], &[track(0, 2, bx(105.0, 102.0, 152.0, 165.0))], &camera(), &[]);
        assert_eq!(a.matches, vec![(0, 0)]);

        let a = associate(&[det(b, 2)], &[track(0, 7, b)], &camera(), &[]);
        assert!(a.matches.is_empty());
        assert_eq!(a.unmatched_detections, vec![0]);
    }

    #[test]
    fn truncated_detection_rescued_by_points() {
        // Object projects far from the truncated detection box; 15 keypoints agree.
        let e = Ellipsoid::sphere(Vector3::new(0.0, 0.0, 4.0), 0.4).unwrap();
        let landmarks: BTreeSet<LandmarkId> = (100..115).collect();
        let t = Track { id: 9, category: 1, last: bx(250.0, 170.0, 390.0, 310.0), ellipsoid: Some(e), landmarks };
        let truncated = det(bx(0.0, 0.0, 40.0, 60.0), 1);
        let kps: Vec<_> = (0..15).map(|k| (Vector2::new(5.0 + 2.0 * k as f64, 30.0), 100 + k as u64)).collect();
        let a = associate(&[truncated], &[t], &camera(), &kps);
        assert_eq!(a.matches, vec![(0, 0)]);
        assert_eq!(a.point_matches, vec![(0, 0)]);
    }

    #[test]
    fn rescue_prefers_more_points_then_lower_id() {
        let e = Ellipsoid::sphere(Vector3::new(0.0, 0.0, 4.0), 0.4).unwrap();
        let far = bx(600.0, 400.0, 630.0, 430.0);
        let l1: BTreeSet<LandmarkId> = (0..20).collect();
        let l2: BTreeSet<LandmarkId> = (0..20).collect();
        let tracks = [
            Track { id: 8, category: 1, last: far, ellipsoid: Some(e), landmarks: l1 },
            Track { id: 3, category: 1, last: far, ellipsoid: Some(e), landmarks: l2 },
        ];
        let kps: Vec<_> = (0..12).map(|k| (Vector2::new(5.0 + k as f64, 5.0), k as u64)).collect();
        let a = associate(&[det(bx(0.0, 0.0, 30.0, 30.0), 1)], &tracks, &camera(), &kps);
        assert_eq!(a.point_matches, vec![(0, 1)]);
    }
}
