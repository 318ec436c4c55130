//! The `simulate`, `run` and `eval` commands over files.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::evaluation::{ape_sim3, ApeReport, EvalError, Trajectory};
use crate::geometry::Pose;
use crate::io::{self, IoError};
use crate::odometry::{Counters, Odometry, OdometryError};
use crate::simulator::{generate, SimError};

pub const TRACKS_FILE: &str = "tracks.txt";
pub const GROUND_TRUTH_FILE: &str = "groundtruth.txt";
pub const LANDMARKS_FILE: &str = "landmarks.txt";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const EVENTS_FILE: &str = "events.log";
pub const DIMENSIONS_FILE: &str = "dimensions.txt";
pub const METRICS_FILE: &str = "metrics.json";
pub const RESIDUALS_FILE: &str = "residuals.txt";

#[derive(Debug, Error)]
pub enum AppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Diverged(OdometryError),
}

impl AppError {
    /// 1 configuration, 2 data, 3 filter divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 1,
            AppError::Io(_) | AppError::Data(_) => 2,
            AppError::Diverged(_) => 3,
        }
    }
}

impl From<SimError> for AppError {
    fn from(SimError::InvalidConfig { field, reason }: SimError) -> Self {
        AppError::Config(ConfigError::Invalid { field: format!("simulator.{field}"), reason })
    }
}

impl From<EvalError> for AppError {
    fn from(e: EvalError) -> Self {
        AppError::Data(e.to_string())
    }
}

fn prepare(out_dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(out_dir).map_err(|source| IoError::Io { path: out_dir.display().to_string(), source }.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub tracks: PathBuf,
    pub ground_truth: PathBuf,
    pub landmarks: PathBuf,
    pub updates: usize,
    pub records: usize,
}

pub fn cmd_simulate(config: &RunConfig, out_dir: &Path) -> Result<SimulateSummary, AppError> {
    let sim = config.sim_config();
    let out = generate(&sim)?;
    prepare(out_dir)?;
    let summary = SimulateSummary {
        tracks: out_dir.join(TRACKS_FILE),
        ground_truth: out_dir.join(GROUND_TRUTH_FILE),
        landmarks: out_dir.join(LANDMARKS_FILE),
        updates: out.update_count(),
        records: out.messages.len(),
    };
    io::write_tracks(&summary.tracks, &out.messages)?;
    io::write_trajectory(&summary.ground_truth, &out.ground_truth)?;
    io::write_landmarks(&summary.landmarks, &out.landmarks)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub trajectory: PathBuf,
    pub events: PathBuf,
    pub dimensions: PathBuf,
    pub samples: usize,
    pub initialization_t: Option<f64>,
    pub counters: Counters,
}

/// Runs the filter over a track file. Outputs are written even when the
/// filter diverges, then the divergence is returned.
pub fn cmd_run(config: &RunConfig, tracks: &Path, out_dir: &Path) -> Result<RunSummary, AppError> {
    let messages = io::read_tracks(tracks)?;
    let mut odo = Odometry::new(config.odometry_config());
    let result = odo.run(&messages);
    prepare(out_dir)?;
    let (_, records) = odo.trajectory();
    let records: Vec<_> = records.into_iter().filter(|r| is_finite(r.t, &Pose::new(r.p, r.q))).collect();
    let finite: Vec<_> = records.iter().map(|r| (r.t, Pose::new(r.p, r.q))).collect();
    let summary = RunSummary {
        trajectory: out_dir.join(TRAJECTORY_FILE),
        events: out_dir.join(EVENTS_FILE),
        dimensions: out_dir.join(DIMENSIONS_FILE),
        samples: finite.len(),
        initialization_t: odo.initialization_time(),
        counters: odo.counters.clone(),
    };
    io::write_trajectory(&summary.trajectory, &Trajectory { samples: finite })?;
    io::write_dimensions(&summary.dimensions, &records)?;
    let mut events: Vec<String> = odo.events().iter().map(|e| e.to_string()).collect();
    if !odo.is_initialized() {
        log::warn!("stream ended before initialization; trajectory is empty");
        events.push("NOT_INITIALIZED stream ended before the bootstrap could initialize".into());
    }
    if let Err(e) = &result {
        events.push(format!("ABORTED {e}"));
    }
    io::write_lines(&summary.events, events)?;
    match result {
        Ok(()) => Ok(summary),
        Err(e @ OdometryError::OutOfOrder { .. }) => Err(AppError::Data(e.to_string())),
        Err(e) => Err(AppError::Diverged(e)),
    }
}

fn is_finite(t: f64, pose: &Pose) -> bool {
    t.is_finite() && pose.p.iter().all(|x| x.is_finite()) && pose.q.coords.iter().all(|x| x.is_finite())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub metrics: PathBuf,
    pub residuals: PathBuf,
    pub report: ApeReport,
}

pub fn cmd_eval(config: &RunConfig, estimate: &Path, reference: &Path, out_dir: &Path) -> Result<EvalSummary, AppError> {
    let est = io::read_trajectory(estimate)?;
    let gt = io::read_trajectory(reference)?;
    let (Some(est_span), Some(ref_span)) = (est.span(), gt.span()) else {
        return Err(EvalError::Empty.into());
    };
    let max_dt = config.evaluation.max_dt;
    let report = ape_sim3(&est, &gt, max_dt)?;
    prepare(out_dir)?;
    let summary = EvalSummary { metrics: out_dir.join(METRICS_FILE), residuals: out_dir.join(RESIDUALS_FILE), report };
    let r = &summary.report;
    let doc = serde_json::json!({
        "ape_mean": r.mean,
        "ape_rmse": r.rmse,
        "ape_median": r.median,
        "ape_max": r.max,
        "matched": r.count,
        "max_dt": max_dt,
        "initialization_t": est_span.0,
        "estimate_span": [est_span.0, est_span.1],
        "reference_span": [ref_span.0, ref_span.1],
        "alignment": serde_json::to_value(r).expect("report serializes")["alignment"].clone(),
    });
    let text = serde_json::to_string_pretty(&doc).expect("metrics serialize");
    io::write_lines(&summary.metrics, [text])?;
    let rows = std::iter::once("# t ape_m".to_owned()).chain(r.residuals.iter().map(|(t, d)| format!("{t:.6} {d:.9}")));
    io::write_lines(&summary.residuals, rows)?;
    Ok(summary)
}
