use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    #[default]
    Orbit,
    Line,
    NearFar,
    BackSide,
}

/// Camera path around a target point. Angles are azimuths in degrees,
/// measured in the ground plane from the +x axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub frames: usize,
    pub radius: f64,
    /// Camera height above the target.
    pub height: f64,
    /// Start azimuth of the mapping arc.
    pub start_deg: f64,
    /// Angular span of the mapping arc.
    pub arc_deg: f64,
    pub fps: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self { kind: TrajectoryKind::Orbit, frames: 300, radius: 4.0, height: 1.5, start_deg: 240.0, arc_deg: 60.0, fps: 30.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub timestamp: f64,
    pub pose: Pose<f64>,
}

fn camera_at(target: &Vector3<f64>, azimuth_deg: f64, radius: f64, height: f64) -> Vector3<f64> {
    let a = azimuth_deg.to_radians();
    target + Vector3::new(radius * a.cos(), radius * a.sin(), height)
}

/// Fraction of the way through the sequence, in `[0, 1]`.
fn progress(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Poses looking at `target`, timestamped at `fps`.
pub fn generate_trajectory(spec: &TrajectorySpec, target: &Vector3<f64>) -> Vec<TimedPose> {
    let n = spec.frames;
    let mid = spec.start_deg + spec.arc_deg / 2.0;
    (0..n)
        .map(|i| {
            let s = progress(i, n);
            let eye = match spec.kind {
                TrajectoryKind::Orbit => {
                    let az = spec.start_deg + spec.arc_deg * i as f64 / n.max(1) as f64;
                    camera_at(target, az, spec.radius, spec.height)
                }
                TrajectoryKind::Line => {
                    // chord of the mapping arc, seen from its midpoint direction
                    let half = (spec.arc_deg / 2.0).to_radians();
                    let m = mid.to_radians();
                    let across = Vector3::new(-m.sin(), m.cos(), 0.0);
                    let base = camera_at(target, mid, spec.radius * half.cos(), spec.height);
                    base + across * (spec.radius * half.sin() * (2.0 * s - 1.0))
                }
                TrajectoryKind::NearFar => {
                    let factor = 0.5 + 2.5 * s;
                    let az = spec.start_deg + spec.arc_deg * s;
                    camera_at(target, az, spec.radius * factor, spec.height * factor)
                }
                TrajectoryKind::BackSide => {
                    // stay at least 90 degrees away from every mapping azimuth
                    let half_window = 0.9 * (90.0 - spec.arc_deg / 2.0).max(0.0);
                    let az = mid + 180.0 + half_window * (2.0 * s - 1.0);
                    let factor = 1.0 + 0.3 * (s * 7.0 * std::f64::consts::PI).sin();
                    camera_at(target, az, spec.radius * factor, spec.height * factor)
                }
            };
            TimedPose { timestamp: i as f64 / spec.fps, pose: Pose::look_at(&eye, target, &Vector3::z()) }
        })
        .collect()
}
