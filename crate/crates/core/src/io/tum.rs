//! `timestamp tx ty tz qx qy qz qw` lines, camera-to-world.

use std::fmt::Write;

use super::{pose_from_tum, pose_to_tum, IoError};
use crate::sim::TimedPose;

/// One trajectory line as stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TumRecord {
    pub timestamp: f64,
    pub translation: [f64; 3],
    pub quaternion: [f64; 4],
}

impl TumRecord {
    pub fn from_pose(tp: &TimedPose) -> Self {
        let (translation, quaternion) = pose_to_tum(&tp.pose);
        Self { timestamp: tp.timestamp, translation, quaternion }
    }

    pub fn to_pose(&self) -> TimedPose {
        let pose = pose_from_tum(self.translation, self.quaternion, "").expect("records are validated on parse");
        TimedPose { timestamp: self.timestamp, pose }
    }
}

/// Floats use the shortest representation that reads back exactly, so
/// formatting parsed records reproduces the text.
pub fn format_tum(records: &[TumRecord]) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for r in records {
        let [x, y, z] = r.translation;
        let [qx, qy, qz, qw] = r.quaternion;
        writeln!(out, "{} {x} {y} {z} {qx} {qy} {qz} {qw}", r.timestamp).expect("writing to a String");
    }
    out
}

pub fn write_tum(poses: &[TimedPose]) -> String {
    format_tum(&poses.iter().map(TumRecord::from_pose).collect::<Vec<_>>())
}

/// Parses TUM text. Blank lines and `#` comments are skipped; timestamps
/// must increase and quaternions must be unit within 1e-6.
pub fn parse_tum_records(text: &str) -> Result<Vec<TumRecord>, IoError> {
    let mut records: Vec<TumRecord> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let what = format!("line {}", n + 1);
        let values = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| IoError::Schema(format!("{what}: bad number '{s}'"))))
            .collect::<Result<Vec<_>, _>>()?;
        let [t, x, y, z, qx, qy, qz, qw] = values[..] else {
            return Err(IoError::Schema(format!("{what}: expected 8 fields, found {}", values.len())));
        };
        if !t.is_finite() || records.last().is_some_and(|r| t <= r.timestamp) {
            return Err(IoError::Schema(format!("{what}: timestamps must increase")));
        }
        pose_from_tum([x, y, z], [qx, qy, qz, qw], &what)?;
        records.push(TumRecord { timestamp: t, translation: [x, y, z], quaternion: [qx, qy, qz, qw] });
    }
    Ok(records)
}

pub fn parse_tum(text: &str) -> Result<Vec<TimedPose>, IoError> {
    Ok(parse_tum_records(text)?.iter().map(TumRecord::to_pose).collect())
}
