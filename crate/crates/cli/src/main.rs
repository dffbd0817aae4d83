use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ellipsoid_slam_cli::{
    cmd_eval, cmd_map, cmd_reloc, cmd_simulate, write_report, CliError, Config, Diameter, EVAL_FILE, MAP_FILE,
    RELOC_FILE,
};
use serde::Serialize;

/// Ellipsoidal object mapping and object-aided relocalization.
#[derive(Debug, Parser)]
#[command(name = "eslam", version)]
struct Cli {
    /// Seed for scene generation and triplet sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML file with scene, trajectory, noise, camera, map and reloc sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    output_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write detections, ground-truth trajectory, keypoints and scene files.
    Simulate,
    /// Build an object map from detections and known camera poses.
    Map {
        #[arg(long)]
        detections: PathBuf,
        /// Camera poses in TUM format.
        #[arg(long)]
        trajectory: PathBuf,
        /// Optional keypoint file; without it, point-based association is disabled.
        #[arg(long)]
        keypoints: Option<PathBuf>,
        /// Output map; defaults to `<output-dir>/map.json`.
        #[arg(long)]
        map: Option<PathBuf>,
    },
    /// Relocalize query frames against a map.
    Reloc {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        keypoints: Option<PathBuf>,
        /// Ground-truth TUM trajectory for per-frame errors.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        /// Baseline: skip objects and match points from every keyframe pose.
        #[arg(long)]
        points_only: bool,
        /// Output CSV; defaults to `<output-dir>/reloc.csv`.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Trajectory error and success curve of relocalization results.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Scene file providing the diameter for normalized thresholds.
        #[arg(long, conflicts_with = "diameter", required_unless_present = "diameter")]
        scene: Option<PathBuf>,
        /// Scene diameter in meters.
        #[arg(long)]
        diameter: Option<f64>,
        /// Similarity instead of rigid alignment.
        #[arg(long)]
        align_scale: bool,
    },
}

fn print<S: Serialize>(value: &S) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let _ = writeln!(std::io::stdout(), "{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = cli.output_dir.as_path();
    let or_default = |p: Option<PathBuf>, name: &str| p.unwrap_or_else(|| out.join(name));
    match cli.command {
        Command::Simulate => print(&cmd_simulate(&cfg, out)?),
        Command::Map { detections, trajectory, keypoints, map } => {
            let map = or_default(map, MAP_FILE);
            print(&cmd_map(&cfg, &detections, &trajectory, keypoints.as_deref(), &map)?)
        }
        Command::Reloc { map, detections, keypoints, ground_truth, points_only, results } => {
            let results = or_default(results, RELOC_FILE);
            let summary =
                cmd_reloc(&cfg, &map, &detections, keypoints.as_deref(), ground_truth.as_deref(), points_only, &results)?;
            print(&summary)
        }
        Command::Eval { results, ground_truth, scene, diameter, align_scale } => {
            let diameter = match (scene, diameter) {
                (Some(p), _) => Diameter::Scene(p),
                (None, Some(d)) => Diameter::Meters(d),
                (None, None) => return Err(CliError::Usage("either --scene or --diameter is required".into())),
            };
            let report = cmd_eval(&cfg, &results, &ground_truth, &diameter, align_scale)?;
            write_report(&report, &Path::new(out).join(EVAL_FILE))?;
            print(&report)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
