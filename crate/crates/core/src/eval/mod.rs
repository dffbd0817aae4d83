//! Trajectory and relocalization metrics.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no overlapping timestamps between estimate and ground truth")]
    NoOverlap,
    #[error("alignment needs at least {0} matched positions")]
    TooFewPoints(usize),
}

/// Number of thresholds on the success curve.
pub const CURVE_POINTS: usize = 50;
/// Spacing of the success curve thresholds, as a fraction of the scene diameter.
pub const CURVE_STEP: f64 = 0.002;

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Similarity {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }
}

/// Closed-form least-squares alignment of `source` onto `target` (Umeyama),
/// rigid unless `with_scale`.
pub fn align(source: &[Vector3<f64>], target: &[Vector3<f64>], with_scale: bool) -> Result<Similarity, EvalError> {
    let n = source.len().min(target.len());
    if n == 0 {
        return Err(EvalError::TooFewPoints(1));
    }
    let mean = |v: &[Vector3<f64>]| v[..n].iter().sum::<Vector3<f64>>() / n as f64;
    let (ms, mt) = (mean(source), mean(target));
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for (s, t) in source.iter().zip(target).take(n) {
        let (ds, dt) = (s - ms, t - mt);
        cov += dt * ds.transpose();
        var += ds.norm_squared();
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if with_scale && var > 0.0 {
        (svd.singular_values.component_mul(&d.diagonal())).sum() / var
    } else {
        1.0
    };
    Ok(Similarity { rotation, translation: mt - rotation * ms * scale, scale })
}

/// Pairs `(estimate index, ground-truth index)` whose timestamps agree within `tolerance`,
/// taking the nearest ground-truth stamp for each estimate.
pub fn match_timestamps(estimate: &[f64], truth: &[f64], tolerance: f64) -> Vec<(usize, usize)> {
    estimate
        .iter()
        .enumerate()
        .filter_map(|(i, t)| {
            let (j, dt) = truth.iter().enumerate().map(|(j, g)| (j, (g - t).abs())).min_by(|a, b| a.1.total_cmp(&b.1))?;
            (dt <= tolerance).then_some((i, j))
        })
        .collect()
}

/// RMSE of positions after aligning the estimate onto the ground truth.
pub fn ate_rmse(estimate: &[Vector3<f64>], truth: &[Vector3<f64>], with_scale: bool) -> Result<f64, EvalError> {
    let sim = align(estimate, truth, with_scale)?;
    let sq: f64 = estimate.iter().zip(truth).map(|(e, g)| (sim.apply(e) - g).norm_squared()).sum();
    Ok((sq / estimate.len().min(truth.len()) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    /// Fraction of the scene diameter.
    pub threshold: f64,
    /// Same threshold in meters.
    pub threshold_m: f64,
    /// Percentage of all frames whose position error is at most the threshold.
    pub success_pct: f64,
}

/// Success rate at thresholds `i * step * diameter`, `i = 1..=points`.
/// Frames without an estimate (`None`) count as failures.
pub fn success_curve(errors: &[Option<f64>], diameter: f64, step: f64, points: usize) -> Vec<CurvePoint> {
    (1..=points)
        .map(|i| {
            let threshold = step * i as f64;
            let threshold_m = threshold * diameter;
            let hits = errors.iter().filter(|e| e.is_some_and(|e| e <= threshold_m)).count();
            let success_pct = if errors.is_empty() { 0.0 } else { 100.0 * hits as f64 / errors.len() as f64 };
            CurvePoint { threshold, threshold_m, success_pct }
        })
        .collect()
}

/// Fraction of `errors` at most `fraction * diameter`.
pub fn success_rate(errors: &[Option<f64>], diameter: f64, fraction: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|e| e.is_some_and(|e| e <= fraction * diameter)).count() as f64 / errors.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub median_ms: f64,
    pub p90_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile, `p` in `[0, 100]`.
pub fn percentile(samples: &[f64], p: f64) -> Option<f64> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

pub fn timing(samples_ms: &[f64]) -> Option<Timing> {
    Some(Timing {
        median_ms: percentile(samples_ms, 50.0)?,
        p90_ms: percentile(samples_ms, 90.0)?,
        max_ms: percentile(samples_ms, 100.0)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: usize,
    /// Frames with a pose estimate.
    pub estimated: usize,
    /// ATE RMSE over estimated frames, in centimeters.
    pub ate_rmse_cm: Option<f64>,
    pub scale_aligned: bool,
    pub diameter_m: f64,
    /// Success percentage at 1% of the scene diameter.
    pub success_at_1pct: f64,
    pub curve: Vec<CurvePoint>,
    pub timing: Option<Timing>,
}
