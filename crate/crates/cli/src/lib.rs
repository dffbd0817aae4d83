//! Subcommands of the `eslam` driver: simulate, map, reloc and eval.
//!
//! Each command reads and writes plain files, so simulated and real data go
//! through the same path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ellipsoid_slam::assoc::Detection;
use ellipsoid_slam::eval::{self, EvalError, EvalReport, CURVE_POINTS, CURVE_STEP};
use ellipsoid_slam::geometry::{CameraIntrinsics, Pose};
use ellipsoid_slam::io::{
    self, DetectionFile, DetectionFrame, IoError, KeypointFile, KeypointFrame, LandmarkRecord, SceneFile,
};
use ellipsoid_slam::objmap::{FrameData, ObjectMap};
use ellipsoid_slam::reloc::{relocalize, relocalize_points_only, RelocConfig, RelocError, RelocMode, RelocQuery};
use ellipsoid_slam::sim::{
    frame_seed, generate_scene, generate_trajectory, render_frame, NoiseSpec, SceneSpec, SimError, TimedPose,
    TrajectorySpec,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DETECTIONS_FILE: &str = "detections.json";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const KEYPOINTS_FILE: &str = "keypoints.json";
pub const SCENE_FILE: &str = "scene.json";
pub const MAP_FILE: &str = "map.json";
pub const RELOC_FILE: &str = "reloc.csv";
pub const EVAL_FILE: &str = "eval.json";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Schema(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        if e.is_schema() {
            CliError::Schema(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.kind() {
            csv::ErrorKind::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Schema(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { fx: 500.0, fy: 500.0, cx: 320.0, cy: 240.0, width: 640, height: 480 }
    }
}

impl CameraConfig {
    pub fn intrinsics(&self) -> Result<CameraIntrinsics<f64>, CliError> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            .map_err(|e| CliError::Usage(format!("camera: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSettings {
    /// Every n-th frame becomes a keyframe.
    pub keyframe_interval: usize,
    /// Largest timestamp gap when pairing detections with trajectory poses.
    pub timestamp_tolerance: f64,
}

impl Default for MapSettings {
    fn default() -> Self {
        Self { keyframe_interval: 5, timestamp_tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelocSettings {
    pub max_triplets: usize,
    pub seed: u64,
    pub association_iou: f64,
    pub match_radius: f64,
    pub min_point_matches: usize,
    pub max_scanned: usize,
}

impl Default for RelocSettings {
    fn default() -> Self {
        let d = RelocConfig::<f64>::default();
        Self {
            max_triplets: d.max_triplets,
            seed: d.seed,
            association_iou: d.association_iou,
            match_radius: d.match_radius,
            min_point_matches: d.min_point_matches,
            max_scanned: d.max_scanned,
        }
    }
}

impl RelocSettings {
    pub fn config(&self) -> RelocConfig<f64> {
        RelocConfig {
            max_triplets: self.max_triplets,
            seed: self.seed,
            association_iou: self.association_iou,
            match_radius: self.match_radius,
            min_point_matches: self.min_point_matches,
            max_scanned: self.max_scanned,
        }
    }
}

/// Everything a run can be configured with; read from TOML, every section optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseSpec,
    pub camera: CameraConfig,
    pub map: MapSettings,
    pub reloc: RelocSettings,
    /// Base seed of the per-frame noise; derived from the scene seed and
    /// trajectory kind when absent.
    pub render_seed: Option<u64>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Schema(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_toml(&io::read_text(path)?)
    }

    /// Applies `--seed` to the scene and to triplet sampling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scene.seed = seed;
        self.reloc.seed = seed;
        self
    }

    pub fn render_seed(&self) -> u64 {
        let kind = self.trajectory.kind as u64;
        self.render_seed.unwrap_or_else(|| self.scene.seed.wrapping_mul(0x9E37_79B9).wrapping_add(kind + 1))
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub objects: usize,
    pub landmarks: usize,
    pub frames: usize,
    pub detections: usize,
    pub files: Vec<PathBuf>,
}

/// Generates a scene and a trajectory and writes detections, ground-truth
/// trajectory, keypoints and scene files into `out_dir`.
pub fn cmd_simulate(cfg: &Config, out_dir: &Path) -> Result<SimulateSummary, CliError> {
    cfg.noise.validate()?;
    let k = cfg.camera.intrinsics()?;
    let mut scene = generate_scene(&cfg.scene)?;
    scene.trajectory = generate_trajectory(&cfg.trajectory, &scene.centroid());
    let base = cfg.render_seed();

    let mut detections = DetectionFile::default();
    let mut keypoints = KeypointFile {
        landmarks: scene.landmarks.iter().map(|l| LandmarkRecord { id: l.id, position: l.position.into() }).collect(),
        frames: Vec::new(),
    };
    for (i, tp) in scene.trajectory.iter().enumerate() {
        let frame = render_frame(&scene, &tp.pose, &k, &cfg.noise, frame_seed(base, i as u64));
        detections.frames.push(DetectionFrame::new(i as u64, tp.timestamp, &frame.detections));
        keypoints.frames.push(KeypointFrame::new(i as u64, &frame.keypoints));
    }

    ensure_dir(out_dir)?;
    let files: Vec<PathBuf> =
        [DETECTIONS_FILE, TRAJECTORY_FILE, KEYPOINTS_FILE, SCENE_FILE].iter().map(|f| out_dir.join(f)).collect();
    io::write_text(&files[0], &detections.to_json())?;
    io::write_text(&files[1], &io::write_tum(&scene.trajectory))?;
    io::write_text(&files[2], &keypoints.to_json())?;
    io::write_text(&files[3], &SceneFile::from_scene(&scene).to_json())?;
    Ok(SimulateSummary {
        objects: scene.objects.len(),
        landmarks: scene.landmarks.len(),
        frames: scene.trajectory.len(),
        detections: detections.frames.iter().map(|f| f.detections.len()).sum(),
        files,
    })
}

/// Nearest pose in `trajectory` within `tolerance` of `t`.
fn pose_at<'a>(trajectory: &'a [TimedPose], t: f64, tolerance: f64) -> Option<&'a TimedPose> {
    let i = trajectory.partition_point(|p| p.timestamp < t);
    [i.checked_sub(1), Some(i)]
        .into_iter()
        .flatten()
        .filter_map(|j| trajectory.get(j))
        .filter(|p| (p.timestamp - t).abs() <= tolerance)
        .min_by(|a, b| (a.timestamp - t).abs().total_cmp(&(b.timestamp - t).abs()))
}

fn load_keypoints(path: Option<&Path>) -> Result<Option<KeypointFile>, CliError> {
    path.map(|p| Ok(KeypointFile::from_json(&io::read_text(p)?)?)).transpose()
}

fn keypoint_frames(file: &Option<KeypointFile>, detections: &DetectionFile) -> Result<BTreeMap<u64, KeypointFrame>, CliError> {
    let Some(file) = file else { return Ok(BTreeMap::new()) };
    let known: std::collections::BTreeSet<u64> = detections.frames.iter().map(|f| f.frame_id).collect();
    file.frames
        .iter()
        .map(|f| {
            if known.contains(&f.frame_id) {
                Ok((f.frame_id, f.clone()))
            } else {
                Err(CliError::Schema(format!("keypoint frame {} has no detection frame", f.frame_id)))
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSummary {
    pub frames: usize,
    pub keyframes: usize,
    pub objects: usize,
    pub rejected: usize,
    pub merges: usize,
    pub timing: Option<eval::Timing>,
    pub map: PathBuf,
}

/// Runs the mapper over a detection sequence with known poses and writes the map.
pub fn cmd_map(
    cfg: &Config,
    detections: &Path,
    trajectory: &Path,
    keypoints: Option<&Path>,
    map_out: &Path,
) -> Result<MapSummary, CliError> {
    let k = cfg.camera.intrinsics()?;
    if cfg.map.keyframe_interval == 0 {
        return Err(CliError::Usage("keyframe_interval must be positive".into()));
    }
    let dets = DetectionFile::from_json(&io::read_text(detections)?)?;
    let traj = io::parse_tum(&io::read_text(trajectory)?)?;
    let kp_file = load_keypoints(keypoints)?;
    let kp_frames = keypoint_frames(&kp_file, &dets)?;

    let mut frames = Vec::with_capacity(dets.frames.len());
    for f in &dets.frames {
        let tp = pose_at(&traj, f.timestamp, cfg.map.timestamp_tolerance).ok_or_else(|| {
            CliError::Schema(format!("frame {} at t={} has no trajectory pose", f.frame_id, f.timestamp))
        })?;
        frames.push((f, tp.pose));
    }

    let mut map = ObjectMap::default();
    let mut times = Vec::with_capacity(frames.len());
    let mut merges = 0;
    for (i, (f, pose)) in frames.iter().enumerate() {
        let landmarks = match (&kp_file, i) {
            (Some(file), 0) => file.landmarks(),
            _ => Vec::new(),
        };
        let data = FrameData {
            frame_id: f.frame_id,
            timestamp: f.timestamp,
            pose: *pose,
            intrinsics: k,
            detections: f.detections(),
            matches: kp_frames.get(&f.frame_id).map(KeypointFrame::matches).unwrap_or_default(),
            landmarks,
        };
        let start = Instant::now();
        let report = map.process_frame(&data, i % cfg.map.keyframe_interval == 0);
        times.push(start.elapsed().as_secs_f64() * 1e3);
        merges += report.merges.len();
    }
    if let Some(dir) = map_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    io::save_map(&map, map_out)?;
    Ok(MapSummary {
        frames: frames.len(),
        keyframes: map.keyframes().len(),
        objects: map.object_count(),
        rejected: map.rejected_ids().len(),
        merges,
        timing: eval::timing(&times),
        map: map_out.to_path_buf(),
    })
}

/// One row of the relocalization results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelocRow {
    pub frame_id: u64,
    pub timestamp: f64,
    pub success: bool,
    pub mode: String,
    pub tx: Option<f64>,
    pub ty: Option<f64>,
    pub tz: Option<f64>,
    pub qx: Option<f64>,
    pub qy: Option<f64>,
    pub qz: Option<f64>,
    pub qw: Option<f64>,
    pub cost: Option<f64>,
    pub matches: usize,
    pub reason: String,
    pub time_ms: f64,
    /// Distance to the ground-truth camera center, when ground truth is given.
    pub position_error: Option<f64>,
    pub rotation_error_deg: Option<f64>,
}

impl RelocRow {
    pub fn position(&self) -> Option<[f64; 3]> {
        Some([self.tx?, self.ty?, self.tz?])
    }
}

fn mode_name(mode: RelocMode) -> &'static str {
    match mode {
        RelocMode::ObjectOnly => "ObjectOnly",
        RelocMode::PointRefined => "PointRefined",
    }
}

fn reason_name(e: &RelocError) -> String {
    match e.reason() {
        RelocError::DegenerateConfiguration => "DegenerateConfiguration",
        RelocError::NotEnoughMatches => "NotEnoughMatches",
        RelocError::InsufficientObjects => "InsufficientObjects",
        RelocError::RelocFailed(_) => "RelocFailed",
    }
    .to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelocSummary {
    pub frames: usize,
    pub localized: usize,
    pub point_refined: usize,
    pub timing: Option<eval::Timing>,
    pub results: PathBuf,
}

/// Relocalizes every query frame against a stored map and writes one CSV row per frame.
/// Per-frame failures become rows; only file problems abort.
#[allow(clippy::too_many_arguments)]
pub fn cmd_reloc(
    cfg: &Config,
    map_path: &Path,
    detections: &Path,
    keypoints: Option<&Path>,
    ground_truth: Option<&Path>,
    points_only: bool,
    results_out: &Path,
) -> Result<RelocSummary, CliError> {
    let k = cfg.camera.intrinsics()?;
    let map = io::load_map(map_path)?;
    let dets = DetectionFile::from_json(&io::read_text(detections)?)?;
    let kp_frames = keypoint_frames(&load_keypoints(keypoints)?, &dets)?;
    let gt = ground_truth.map(|p| io::parse_tum(&io::read_text(p)?)).transpose()?;
    let rcfg = cfg.reloc.config();

    let mut rows = Vec::with_capacity(dets.frames.len());
    for f in &dets.frames {
        let query = RelocQuery {
            detections: f.detections().into_iter().filter(Detection::passes_score_floor).collect(),
            keypoints: kp_frames.get(&f.frame_id).map(KeypointFrame::points).unwrap_or_default(),
            intrinsics: k,
        };
        let start = Instant::now();
        let result =
            if points_only { relocalize_points_only(&query, &map, &rcfg) } else { relocalize(&query, &map, &rcfg) };
        let time_ms = start.elapsed().as_secs_f64() * 1e3;
        let truth = gt.as_ref().and_then(|g| pose_at(g, f.timestamp, cfg.map.timestamp_tolerance));
        rows.push(result_row(f, result.map(|r| (r.pose, r.cost, r.match_count, r.mode)), truth, time_ms));
    }

    if let Some(dir) = results_out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    let mut writer = csv::Writer::from_path(results_out)?;
    for row in &rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|e| CliError::Runtime(e.to_string()))?;
    let times: Vec<f64> = rows.iter().map(|r| r.time_ms).collect();
    Ok(RelocSummary {
        frames: rows.len(),
        localized: rows.iter().filter(|r| r.success).count(),
        point_refined: rows.iter().filter(|r| r.mode == "PointRefined").count(),
        timing: eval::timing(&times),
        results: results_out.to_path_buf(),
    })
}

fn result_row(
    frame: &DetectionFrame,
    result: Result<(Pose<f64>, f64, usize, RelocMode), RelocError>,
    truth: Option<&TimedPose>,
    time_ms: f64,
) -> RelocRow {
    let mut row = RelocRow {
        frame_id: frame.frame_id,
        timestamp: frame.timestamp,
        success: false,
        mode: String::new(),
        tx: None,
        ty: None,
        tz: None,
        qx: None,
        qy: None,
        qz: None,
        qw: None,
        cost: None,
        matches: 0,
        reason: String::new(),
        time_ms,
        position_error: None,
        rotation_error_deg: None,
    };
    match result {
        Ok((pose, cost, matches, mode)) => {
            let ([x, y, z], [qx, qy, qz, qw]) = io::pose_to_tum(&pose);
            (row.tx, row.ty, row.tz) = (Some(x), Some(y), Some(z));
            (row.qx, row.qy, row.qz, row.qw) = (Some(qx), Some(qy), Some(qz), Some(qw));
            row.success = true;
            row.mode = mode_name(mode).into();
            row.cost = Some(cost);
            row.matches = matches;
            if let Some(t) = truth {
                row.position_error = Some((pose.center() - t.pose.center()).norm());
                row.rotation_error_deg = Some(pose.rotation_angle_to(&t.pose).to_degrees());
            }
        }
        Err(e) => row.reason = reason_name(&e),
    }
    row
}

pub fn read_results(path: &Path) -> Result<Vec<RelocRow>, CliError> {
    let context = |e: csv::Error| match CliError::from(e) {
        CliError::Runtime(m) => CliError::Runtime(format!("{}: {m}", path.display())),
        CliError::Schema(m) => CliError::Schema(format!("{}: {m}", path.display())),
        other => other,
    };
    let mut reader = csv::Reader::from_path(path).map_err(context)?;
    reader.deserialize().map(|r| r.map_err(context)).collect()
}

/// Scene diameter for normalized thresholds.
#[derive(Debug, Clone, PartialEq)]
pub enum Diameter {
    Scene(PathBuf),
    Meters(f64),
}

/// ATE and success curve of relocalization results against ground truth.
pub fn cmd_eval(
    cfg: &Config,
    results: &Path,
    ground_truth: &Path,
    diameter: &Diameter,
    align_scale: bool,
) -> Result<EvalReport, CliError> {
    let rows = read_results(results)?;
    let gt = io::parse_tum(&io::read_text(ground_truth)?)?;
    let diameter_m = match diameter {
        Diameter::Meters(d) if d.is_finite() && *d > 0.0 => *d,
        Diameter::Meters(d) => return Err(CliError::Usage(format!("diameter must be positive, got {d}"))),
        Diameter::Scene(p) => SceneFile::from_json(&io::read_text(p)?)?.diameter,
    };

    let mut errors = Vec::new();
    let (mut est, mut truth) = (Vec::new(), Vec::new());
    for row in &rows {
        let Some(t) = pose_at(&gt, row.timestamp, cfg.map.timestamp_tolerance) else { continue };
        let c = t.pose.center();
        match row.position().filter(|_| row.success) {
            Some(p) => {
                let p = nalgebra::Vector3::from(p);
                errors.push(Some((p - c).norm()));
                est.push(p);
                truth.push(c);
            }
            None => errors.push(None),
        }
    }
    if errors.is_empty() {
        return Err(EvalError::NoOverlap.into());
    }
    let ate = if est.is_empty() { None } else { Some(eval::ate_rmse(&est, &truth, align_scale)? * 100.0) };
    let times: Vec<f64> = rows.iter().map(|r| r.time_ms).collect();
    Ok(EvalReport {
        frames: errors.len(),
        estimated: est.len(),
        ate_rmse_cm: ate,
        scale_aligned: align_scale,
        diameter_m,
        success_at_1pct: 100.0 * eval::success_rate(&errors, diameter_m, 0.01),
        curve: eval::success_curve(&errors, diameter_m, CURVE_STEP, CURVE_POINTS),
        timing: eval::timing(&times),
    })
}

pub fn write_report<S: Serialize>(value: &S, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    Ok(io::write_text(path, &io::to_json(value).map_err(|e| CliError::Runtime(e.to_string()))?)?)
}
