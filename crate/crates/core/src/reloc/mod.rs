//! Relocalization against an object map.
//!
//! Detection boxes and map ellipsoids of the same category form candidate
//! pairs. Every triplet of pairs gives up to four P3P poses; each pose is
//! scored by how well the projected map explains all detections. The best
//! candidates then seed point matching, and a pose backed by enough
//! keypoint/landmark matches is refined on points.

mod p3p;
mod points;

pub use p3p::{p3p, reprojection_tolerance};
pub use points::{guided_point_matching, pnp_refine, reprojection_rms, DEFAULT_MATCH_RADIUS};

use std::collections::BTreeSet;

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::assoc::{Detection, LandmarkId};
use crate::geometry::{bbox_iou, BBox, CameraIntrinsics, DualQuadric, Ellipsoid, Pose};
use crate::num::Real;
use crate::objmap::ObjectMap;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelocError {
    #[error("world points are (nearly) collinear")]
    DegenerateConfiguration,
    #[error("not enough point matches")]
    NotEnoughMatches,
    #[error("fewer than three category-compatible detection/object pairs")]
    InsufficientObjects,
    #[error("relocalization failed: {0}")]
    RelocFailed(Box<RelocError>),
}

impl RelocError {
    /// The innermost cause.
    pub fn reason(&self) -> &RelocError {
        match self {
            RelocError::RelocFailed(inner) => inner.reason(),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelocQuery<T: Real> {
    pub detections: Vec<Detection<T>>,
    pub keypoints: Vec<Vector2<T>>,
    pub intrinsics: CameraIntrinsics<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelocConfig<T: Real> {
    /// Exhaustive enumeration up to this many triplets, random sampling above.
    pub max_triplets: usize,
    pub seed: u64,
    /// Minimum IoU for a projected object to explain a detection.
    pub association_iou: T,
    pub match_radius: T,
    /// A candidate needs strictly more point matches than this.
    pub min_point_matches: usize,
    /// Number of candidates tried for point matching, in cost order.
    pub max_scanned: usize,
}

impl<T: Real> Default for RelocConfig<T> {
    fn default() -> Self {
        Self {
            max_triplets: 5000,
            seed: 0,
            association_iou: T::lit(0.1),
            match_radius: T::lit(DEFAULT_MATCH_RADIUS),
            min_point_matches: 30,
            max_scanned: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelocMode {
    ObjectOnly,
    PointRefined,
}

/// A scored pose hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseCandidate<T: Real> {
    pub pose: Pose<T>,
    /// `sum over detections of (1 - best IoU)`, 1 for unexplained detections.
    pub cost: T,
    /// Index of the triplet that produced the pose.
    pub triplet: usize,
    /// `(detection index, object id)` pairs used for the cost.
    pub correspondences: Vec<(usize, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelocResult<T: Real> {
    pub pose: Pose<T>,
    pub cost: T,
    pub match_count: usize,
    pub mode: RelocMode,
    pub correspondences: Vec<(usize, u64)>,
}

struct MapObject<T: Real> {
    id: u64,
    category: u32,
    ellipsoid: Ellipsoid<T>,
    /// Cached, since every pose hypothesis projects it.
    quadric: DualQuadric<T>,
}

type Triplet = [(usize, usize); 3];

/// Map objects of the given categories; others can never be associated.
fn map_objects<T: Real>(map: &ObjectMap<T>, categories: &BTreeSet<u32>) -> Vec<MapObject<T>> {
    map.objects()
        .filter(|t| categories.contains(&t.category))
        .filter_map(|t| {
            let ellipsoid = *t.ellipsoid()?;
            let quadric = ellipsoid.to_dual_quadric().normalized()?;
            Some(MapObject { id: t.id, category: t.category, ellipsoid, quadric })
        })
        .collect()
}

/// Feasible objects per detection.
fn feasible_pairs<T: Real>(dets: &[Detection<T>], objects: &[MapObject<T>]) -> Vec<Vec<usize>> {
    dets.iter()
        .map(|d| objects.iter().enumerate().filter(|(_, o)| o.category == d.category).map(|(j, _)| j).collect())
        .collect()
}

fn for_each_triplet(feasible: &[Vec<usize>], mut f: impl FnMut(Triplet) -> bool) {
    let n = feasible.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                for &a in &feasible[i] {
                    for &b in feasible[j].iter().filter(|&&b| b != a) {
                        for &c in feasible[k].iter().filter(|&&c| c != a && c != b) {
                            if !f([(i, a), (j, b), (k, c)]) {
                                return;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Largest triplet set that is materialized before falling back to rejection sampling.
const MATERIALIZE_LIMIT: usize = 200_000;

fn select_triplets(feasible: &[Vec<usize>], max: usize, seed: u64) -> Vec<Triplet> {
    let mut all = Vec::new();
    let mut overflow = false;
    for_each_triplet(feasible, |t| {
        all.push(t);
        if all.len() > MATERIALIZE_LIMIT {
            overflow = true;
            return false;
        }
        true
    });
    if all.len() <= max {
        return all;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if !overflow {
        let mut picked: Vec<usize> = sample(&mut rng, all.len(), max).into_vec();
        picked.sort_unstable();
        return picked.into_iter().map(|i| all[i]).collect();
    }
    let usable: Vec<usize> = (0..feasible.len()).filter(|&i| !feasible[i].is_empty()).collect();
    let mut out = Vec::with_capacity(max);
    while out.len() < max {
        let idx = sample(&mut rng, usable.len(), 3).into_vec();
        let mut dets = [usable[idx[0]], usable[idx[1]], usable[idx[2]]];
        dets.sort_unstable();
        let objs: Vec<usize> = dets.iter().map(|&d| feasible[d][rng.random_range(0..feasible[d].len())]).collect();
        if objs[0] != objs[1] && objs[0] != objs[2] && objs[1] != objs[2] {
            out.push([(dets[0], objs[0]), (dets[1], objs[1]), (dets[2], objs[2])]);
        }
    }
    out
}

/// Projected, image-clipped box of every object (None when not visible).
fn projected_boxes<T: Real>(pose: &Pose<T>, k: &CameraIntrinsics<T>, objects: &[MapObject<T>]) -> Vec<Option<BBox<T>>> {
    let p = pose.projection(k);
    let (w, h) = (T::lit(k.width as f64), T::lit(k.height as f64));
    objects
        .iter()
        .map(|o| o.quadric.project(&p).ok()?.bbox().ok()?.clip(w, h))
        .collect()
}

/// Object cost of `pose` and the detection/object pairs it implies.
pub fn pose_cost<T: Real>(
    pose: &Pose<T>,
    dets: &[Detection<T>],
    map: &ObjectMap<T>,
    k: &CameraIntrinsics<T>,
    association_iou: T,
) -> (T, Vec<(usize, u64)>) {
    let categories = dets.iter().map(|d| d.category).collect();
    score_pose(pose, dets, &map_objects(map, &categories), k, association_iou)
}

fn score_pose<T: Real>(
    pose: &Pose<T>,
    dets: &[Detection<T>],
    objects: &[MapObject<T>],
    k: &CameraIntrinsics<T>,
    association_iou: T,
) -> (T, Vec<(usize, u64)>) {
    let boxes = projected_boxes(pose, k, objects);
    let mut cost = T::zero();
    let mut pairs = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        let best = objects
            .iter()
            .zip(&boxes)
            .filter(|(o, _)| o.category == d.category)
            .filter_map(|(o, b)| b.as_ref().map(|b| (o.id, bbox_iou(&d.bbox, b))))
            .fold(None, |acc: Option<(u64, T)>, (id, iou)| match acc {
                Some((_, best)) if best >= iou => acc,
                _ => Some((id, iou)),
            });
        match best {
            Some((id, iou)) if iou >= association_iou => {
                cost += T::one() - iou;
                pairs.push((i, id));
            }
            _ => cost += T::one(),
        }
    }
    (cost, pairs)
}

/// Pose hypotheses from every sampled triplet, sorted by ascending cost.
pub fn object_pose_candidates<T: Real>(
    query: &RelocQuery<T>,
    map: &ObjectMap<T>,
    cfg: &RelocConfig<T>,
) -> Result<Vec<PoseCandidate<T>>, RelocError> {
    let dets: Vec<Detection<T>> = query.detections.iter().filter(|d| d.passes_score_floor()).copied().collect();
    let categories: BTreeSet<u32> = dets.iter().map(|d| d.category).collect();
    let objects = map_objects(map, &categories);
    let feasible = feasible_pairs(&dets, &objects);
    let triplets = select_triplets(&feasible, cfg.max_triplets, cfg.seed);
    if triplets.is_empty() {
        return Err(RelocError::InsufficientObjects);
    }
    let k = &query.intrinsics;
    let bearings: Vec<Vector3<T>> = dets.iter().map(|d| k.unproject(&d.bbox.center()).normalize()).collect();

    let per_triplet: Vec<Vec<PoseCandidate<T>>> = triplets
        .par_iter()
        .enumerate()
        .map(|(index, t)| {
            let b = [bearings[t[0].0], bearings[t[1].0], bearings[t[2].0]];
            let w = [objects[t[0].1].ellipsoid.center, objects[t[1].1].ellipsoid.center, objects[t[2].1].ellipsoid.center];
            let Ok(poses) = p3p(&b, &w) else { return Vec::new() };
            poses
                .into_iter()
                .map(|pose| {
                    let (cost, correspondences) = score_pose(&pose, &dets, &objects, k, cfg.association_iou);
                    PoseCandidate { pose, cost, triplet: index, correspondences }
                })
                .collect()
        })
        .collect();
    let mut candidates: Vec<PoseCandidate<T>> = per_triplet.into_iter().flatten().collect();
    if candidates.is_empty() {
        return Err(RelocError::DegenerateConfiguration);
    }
    candidates.sort_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap_or(std::cmp::Ordering::Equal));
    Ok(candidates)
}

/// Guided matching then point refinement from `pose`. Returns the refined
/// pose and its final match count when it keeps enough matches.
fn refine_on_points<T: Real>(
    pose: &Pose<T>,
    keypoints: &[Vector2<T>],
    landmarks: &[(LandmarkId, Vector3<T>)],
    k: &CameraIntrinsics<T>,
    cfg: &RelocConfig<T>,
) -> Option<(Pose<T>, usize)> {
    let lookup: std::collections::BTreeMap<LandmarkId, Vector3<T>> = landmarks.iter().copied().collect();
    let pairs = |ms: &[(usize, LandmarkId)]| -> Vec<(Vector2<T>, Vector3<T>)> {
        ms.iter().map(|(i, id)| (keypoints[*i], lookup[id])).collect()
    };
    let initial = guided_point_matching(pose, keypoints, landmarks, k, cfg.match_radius);
    if initial.len() <= cfg.min_point_matches {
        return None;
    }
    let mut pose = *pose;
    let mut matches = initial;
    for _ in 0..3 {
        pose = pnp_refine(&pose, &pairs(&matches), k).ok()?;
        let next = guided_point_matching(&pose, keypoints, landmarks, k, cfg.match_radius);
        let stable = next == matches;
        matches = next;
        if stable {
            break;
        }
    }
    // drop matches far from the refined projection (robust scale from the
    // median residual), then refine once more
    let all = pairs(&matches);
    let residual = |(uv, x): &(Vector2<T>, Vector3<T>)| k.project(&pose.transform(x)).map(|p| (p - uv).norm());
    let mut sorted: Vec<T> = all.iter().filter_map(residual).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let median = sorted.get(sorted.len() / 2).copied().unwrap_or(T::zero());
    let gate = (T::lit(3.0 * 1.4826) * median).max(T::lit(0.5)).min(cfg.match_radius / T::lit(2.0));
    let inliers: Vec<(Vector2<T>, Vector3<T>)> =
        all.into_iter().filter(|m| residual(m).is_some_and(|r| r <= gate)).collect();
    if inliers.len() <= cfg.min_point_matches {
        return None;
    }
    pose = pnp_refine(&pose, &inliers, k).ok()?;
    Some((pose, inliers.len()))
}

fn landmark_list<T: Real>(map: &ObjectMap<T>) -> Vec<(LandmarkId, Vector3<T>)> {
    map.landmarks().iter().map(|(id, x)| (*id, *x)).collect()
}

/// Full relocalization: object candidates, then the first one (in cost
/// order) with enough point support is refined on points. Without such a
/// candidate the cheapest object pose is returned unrefined.
pub fn relocalize<T: Real>(
    query: &RelocQuery<T>,
    map: &ObjectMap<T>,
    cfg: &RelocConfig<T>,
) -> Result<RelocResult<T>, RelocError> {
    let candidates = object_pose_candidates(query, map, cfg).map_err(|e| RelocError::RelocFailed(Box::new(e)))?;
    let landmarks = landmark_list(map);
    if !landmarks.is_empty() && query.keypoints.len() > cfg.min_point_matches {
        for c in candidates.iter().take(cfg.max_scanned) {
            if let Some((pose, count)) = refine_on_points(&c.pose, &query.keypoints, &landmarks, &query.intrinsics, cfg) {
                return Ok(RelocResult {
                    pose,
                    cost: c.cost,
                    match_count: count,
                    mode: RelocMode::PointRefined,
                    correspondences: c.correspondences.clone(),
                });
            }
        }
    }
    let best = &candidates[0];
    let match_count = if landmarks.is_empty() {
        0
    } else {
        guided_point_matching(&best.pose, &query.keypoints, &landmarks, &query.intrinsics, cfg.match_radius).len()
    };
    Ok(RelocResult {
        pose: best.pose,
        cost: best.cost,
        match_count: match_count.min(cfg.min_point_matches),
        mode: RelocMode::ObjectOnly,
        correspondences: best.correspondences.clone(),
    })
}

/// Point-only baseline: guided matching seeded from every keyframe pose.
pub fn relocalize_points_only<T: Real>(
    query: &RelocQuery<T>,
    map: &ObjectMap<T>,
    cfg: &RelocConfig<T>,
) -> Result<RelocResult<T>, RelocError> {
    let landmarks = landmark_list(map);
    let seeds: Vec<Pose<T>> = map.keyframes().values().map(|kf| kf.pose).collect();
    let found = seeds
        .par_iter()
        .map(|seed| refine_on_points(seed, &query.keypoints, &landmarks, &query.intrinsics, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .max_by_key(|(_, count)| *count);
    match found {
        Some((pose, count)) => Ok(RelocResult {
            pose,
            cost: T::zero(),
            match_count: count,
            mode: RelocMode::PointRefined,
            correspondences: Vec::new(),
        }),
        None => Err(RelocError::RelocFailed(Box::new(RelocError::NotEnoughMatches))),
    }
}
