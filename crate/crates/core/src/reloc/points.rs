use std::collections::HashMap;

use nalgebra::{Matrix6, Vector2, Vector3, Vector6};

use super::RelocError;
use crate::assoc::LandmarkId;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::num::Real;

/// Default search radius for guided matching (pixels).
pub const DEFAULT_MATCH_RADIUS: f64 = 8.0;

/// Mutual nearest neighbours between keypoints and landmark projections
/// within `radius` pixels. Returns `(keypoint index, landmark id)` pairs.
pub fn guided_point_matching<T: Real>(
    pose: &Pose<T>,
    keypoints: &[Vector2<T>],
    landmarks: &[(LandmarkId, Vector3<T>)],
    intrinsics: &CameraIntrinsics<T>,
    radius: T,
) -> Vec<(usize, LandmarkId)> {
    if keypoints.is_empty() || landmarks.is_empty() || !(radius > T::zero()) {
        return Vec::new();
    }
    let margin = radius;
    let (w, h) = (T::lit(intrinsics.width as f64), T::lit(intrinsics.height as f64));
    let projections: Vec<(usize, Vector2<T>)> = landmarks
        .iter()
        .enumerate()
        .filter_map(|(k, (_, x))| {
            let uv = intrinsics.project(&pose.transform(x))?;
            let inside = uv.x >= -margin && uv.y >= -margin && uv.x <= w + margin && uv.y <= h + margin;
            inside.then_some((k, uv))
        })
        .collect();
    if projections.is_empty() {
        return Vec::new();
    }

    let cell = |p: &Vector2<T>| -> (i64, i64) {
        ((p.x / radius).floor().to_f64_lossy() as i64, (p.y / radius).floor().to_f64_lossy() as i64)
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (slot, (_, uv)) in projections.iter().enumerate() {
        grid.entry(cell(uv)).or_default().push(slot);
    }
    let r2 = radius * radius;

    // nearest projection for every keypoint
    let mut kp_best: Vec<Option<(usize, T)>> = vec![None; keypoints.len()];
    let mut proj_best: Vec<Option<(usize, T)>> = vec![None; projections.len()];
    for (ki, kp) in keypoints.iter().enumerate() {
        let (cx, cy) = cell(kp);
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(bucket) = grid.get(&(cx + dx, cy + dy)) else { continue };
                for &slot in bucket {
                    let d2 = (projections[slot].1 - kp).norm_squared();
                    if d2 > r2 {
                        continue;
                    }
                    if kp_best[ki].is_none_or(|(_, b)| d2 < b) {
                        kp_best[ki] = Some((slot, d2));
                    }
                    if proj_best[slot].is_none_or(|(_, b)| d2 < b) {
                        proj_best[slot] = Some((ki, d2));
                    }
                }
            }
        }
    }
    kp_best
        .iter()
        .enumerate()
        .filter_map(|(ki, best)| {
            let (slot, _) = (*best)?;
            let (back, _) = proj_best[slot]?;
            (back == ki).then(|| (ki, landmarks[projections[slot].0].0))
        })
        .collect()
}

fn rms<T: Real>(pose: &Pose<T>, matches: &[(Vector2<T>, Vector3<T>)], k: &CameraIntrinsics<T>) -> T {
    let mut sum = T::zero();
    for (uv, x) in matches {
        match k.project(&pose.transform(x)) {
            Some(p) => sum += (p - uv).norm_squared(),
            None => return T::max_value().unwrap_or(T::lit(f64::MAX)),
        }
    }
    (sum / T::lit(matches.len() as f64)).sqrt()
}

/// Root-mean-square pixel reprojection error of `matches` under `pose`.
pub fn reprojection_rms<T: Real>(pose: &Pose<T>, matches: &[(Vector2<T>, Vector3<T>)], k: &CameraIntrinsics<T>) -> T {
    rms(pose, matches, k)
}

/// Gauss-Newton on pixel reprojection error over a left-multiplied
/// 6-dof increment. The result never has a larger RMS than `pose0`.
pub fn pnp_refine<T: Real>(
    pose0: &Pose<T>,
    matches: &[(Vector2<T>, Vector3<T>)],
    intrinsics: &CameraIntrinsics<T>,
) -> Result<Pose<T>, RelocError> {
    if matches.len() < 4 {
        return Err(RelocError::NotEnoughMatches);
    }
    let k = intrinsics;
    let mut pose = *pose0;
    let mut err = rms(&pose, matches, k);
    for _ in 0..30 {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (uv, x) in matches {
            let pc = pose.transform(x);
            if pc.z <= T::zero() {
                continue;
            }
            let iz = T::one() / pc.z;
            let proj = Vector2::new(k.fx * pc.x * iz + k.cx, k.fy * pc.y * iz + k.cy);
            let r = proj - uv;
            // d(pixel)/d(camera point)
            let du = Vector3::new(k.fx * iz, T::zero(), -k.fx * pc.x * iz * iz);
            let dv = Vector3::new(T::zero(), k.fy * iz, -k.fy * pc.y * iz * iz);
            // d(camera point)/d(omega) = -[pc]x, d/d(dt) = I
            for (row, d) in [(r.x, du), (r.y, dv)] {
                let jw = pc.cross(&d);
                let j = Vector6::new(jw.x, jw.y, jw.z, d.x, d.y, d.z);
                h += j * j.transpose();
                g += j * row;
            }
        }
        let Some(step) = h.cholesky().map(|c| c.solve(&(-g))) else { break };
        let mut scale = T::one();
        let mut improved = false;
        for _ in 0..8 {
            let s = step * scale;
            let cand = pose.retract(&Vector3::new(s[0], s[1], s[2]), &Vector3::new(s[3], s[4], s[5]));
            let e = rms(&cand, matches, k);
            if e <= err {
                let done = step.norm() * scale <= T::lit(1e-14) * (T::one() + pose.translation.norm());
                pose = cand;
                err = e;
                improved = true;
                if done {
                    return Ok(pose);
                }
                break;
            }
            scale /= T::lit(2.0);
        }
        if !improved {
            break;
        }
    }
    Ok(pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn scene(seed: u64, n: usize) -> (Pose<f64>, Vec<(LandmarkId, Vector3<f64>)>, Vec<Vector2<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose = Pose::look_at(&Vector3::new(0.3, -5.0, 1.0), &Vector3::zeros(), &Vector3::z());
        let mut lms = Vec::new();
        let mut kps = Vec::new();
        while lms.len() < n {
            let x = Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0));
            if let Some(uv) = k().project(&pose.transform(&x)) {
                if k().contains(&uv) {
                    kps.push(uv);
                    lms.push((lms.len() as u64, x));
                }
            }
        }
        (pose, lms, kps)
    }

    #[test]
    fn exact_pose_matches_everything() {
        let (pose, lms, kps) = scene(1, 60);
        let m = guided_point_matching(&pose, &kps, &lms, &k(), 8.0);
        assert_eq!(m.len(), 60);
        assert!(m.iter().all(|(ki, id)| *ki as u64 == *id));
    }

    #[test]
    fn far_pose_matches_nothing() {
        let (pose, lms, kps) = scene(2, 60);
        let off = Pose::new(pose.rotation, pose.translation + Vector3::new(50.0, 0.0, 0.0));
        assert!(guided_point_matching(&off, &kps, &lms, &k(), 8.0).is_empty());
    }

    #[test]
    fn refine_fixed_point_and_convergence() {
        let (pose, lms, kps) = scene(3, 50);
        let matches: Vec<_> = kps.iter().zip(&lms).map(|(uv, (_, x))| (*uv, *x)).collect();
        let same = pnp_refine(&pose, &matches, &k()).unwrap();
        assert!((same.rotation - pose.rotation).amax() < 1e-10);
        assert!((same.translation - pose.translation).amax() < 1e-10);

        let start = pose.retract(&Vector3::new(0.0, 2f64.to_radians(), 0.0), &(pose.translation * 0.02));
        let out = pnp_refine(&start, &matches, &k()).unwrap();
        assert!(out.rotation_angle_to(&pose) < 1e-6);
        assert!((out.translation - pose.translation).norm() < 1e-6);
        assert!(reprojection_rms(&out, &matches, &k()) <= reprojection_rms(&start, &matches, &k()));
    }

    #[test]
    fn refine_needs_four_matches() {
        let (pose, lms, kps) = scene(4, 3);
        let matches: Vec<_> = kps.iter().zip(&lms).map(|(uv, (_, x))| (*uv, *x)).collect();
        assert_eq!(pnp_refine(&pose, &matches, &k()), Err(RelocError::NotEnoughMatches));
    }
}
