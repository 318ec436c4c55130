//! TOML run configuration.
//!
//! Every section is optional and falls back to its defaults; unknown keys are
//! rejected. The camera section is shared by the simulator and the filter.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::BootstrapConfig;
use crate::eskf::NoiseConfig;
use crate::geometry::CameraIntrinsics;
use crate::landmarks::LandmarkConfig;
use crate::odometry::{OdometryConfig, TrackingLossConfig};
use crate::simulator::{SceneConfig, SimConfig, SimError, TrajectoryConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_owned(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub sigma_a: f64,
    pub sigma_w: f64,
    pub sigma_px: f64,
    pub gating: bool,
    pub gate_threshold: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseConfig::default();
        Self { sigma_a: n.sigma_a, sigma_w: n.sigma_w, sigma_px: n.sigma_px, gating: true, gate_threshold: 9.21 }
    }
}

impl NoiseSection {
    pub fn to_noise(&self) -> NoiseConfig {
        NoiseConfig {
            sigma_a: self.sigma_a,
            sigma_w: self.sigma_w,
            sigma_px: self.sigma_px,
            gate_threshold: self.gating.then_some(self.gate_threshold),
        }
    }
}

/// Simulator settings; intrinsics come from the camera section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorSection {
    pub seed: u64,
    pub landmark_count: usize,
    pub scene: SceneConfig,
    pub lifetime_mean_s: f64,
    pub lifetime_std_s: f64,
    pub trajectory: TrajectoryConfig,
    pub tick_rate_hz: f64,
    pub pixel_noise_sigma: f64,
    pub min_pixel_motion: f64,
}

impl Default for SimulatorSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            seed: s.seed,
            landmark_count: s.landmark_count,
            scene: s.scene,
            lifetime_mean_s: s.lifetime_mean_s,
            lifetime_std_s: s.lifetime_std_s,
            trajectory: s.trajectory,
            tick_rate_hz: s.tick_rate_hz,
            pixel_noise_sigma: s.pixel_noise_sigma,
            min_pixel_motion: s.min_pixel_motion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Largest timestamp gap accepted when pairing estimates with ground truth.
    pub max_dt: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self { max_dt: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub camera: CameraIntrinsics,
    pub noise: NoiseSection,
    pub landmarks: LandmarkConfig,
    pub bootstrap: BootstrapConfig,
    pub tracking_loss: TrackingLossConfig,
    pub simulator: SimulatorSection,
    pub evaluation: EvaluationSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            camera: SimConfig::default().intrinsics,
            noise: NoiseSection::default(),
            landmarks: LandmarkConfig::default(),
            bootstrap: BootstrapConfig::default(),
            tracking_loss: TrackingLossConfig::default(),
            simulator: SimulatorSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse { path: "<string>".into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: name.clone(), source })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse { path: name, message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.camera.validate().map_err(|e| invalid("camera", e.to_string()))?;
        let positive = |field: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive, got {x}")))
            }
        };
        positive("noise.sigma_a", self.noise.sigma_a)?;
        positive("noise.sigma_w", self.noise.sigma_w)?;
        positive("noise.sigma_px", self.noise.sigma_px)?;
        positive("noise.gate_threshold", self.noise.gate_threshold)?;
        positive("landmarks.parallax_threshold_deg", self.landmarks.parallax_threshold_deg)?;
        if self.landmarks.parallax_threshold_deg >= 180.0 {
            return Err(invalid("landmarks.parallax_threshold_deg", "must be below 180"));
        }
        if self.landmarks.max_landmarks == 0 {
            return Err(invalid("landmarks.max_landmarks", "must be positive"));
        }
        positive("landmarks.fd_state_step", self.landmarks.fd_state_step)?;
        positive("landmarks.fd_pixel_step", self.landmarks.fd_pixel_step)?;
        let b = &self.bootstrap;
        if b.min_correspondences < 4 {
            return Err(invalid("bootstrap.min_correspondences", "a homography needs at least 4"));
        }
        if b.reference_size < b.min_correspondences {
            return Err(invalid("bootstrap.reference_size", "must be at least bootstrap.min_correspondences"));
        }
        if !(b.min_median_displacement_px >= 0.0 && b.min_median_displacement_px.is_finite()) {
            return Err(invalid("bootstrap.min_median_displacement_px", "must be non-negative"));
        }
        if !(b.min_parallax_deg >= 0.0 && b.min_parallax_deg < 180.0) {
            return Err(invalid("bootstrap.min_parallax_deg", "must lie in [0, 180)"));
        }
        positive("bootstrap.smoother_accel_std", b.smoother_accel_std)?;
        positive("bootstrap.reference_variance", b.reference_variance)?;
        positive("bootstrap.prior_position_std", b.prior_position_std)?;
        positive("bootstrap.prior_orientation_std", b.prior_orientation_std)?;
        positive("bootstrap.prior_velocity_std", b.prior_velocity_std)?;
        if !(self.tracking_loss.duration_s >= 0.0 && self.tracking_loss.duration_s.is_finite()) {
            return Err(invalid("tracking_loss.duration_s", "must be non-negative"));
        }
        positive("evaluation.max_dt", self.evaluation.max_dt)?;
        self.sim_config().validate().map_err(|SimError::InvalidConfig { field, reason }| invalid(&format!("simulator.{field}"), reason))?;
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = self.simulator.clone();
        SimConfig {
            seed: s.seed,
            landmark_count: s.landmark_count,
            scene: s.scene,
            lifetime_mean_s: s.lifetime_mean_s,
            lifetime_std_s: s.lifetime_std_s,
            trajectory: s.trajectory,
            tick_rate_hz: s.tick_rate_hz,
            pixel_noise_sigma: s.pixel_noise_sigma,
            intrinsics: self.camera,
            min_pixel_motion: s.min_pixel_motion,
        }
    }

    pub fn odometry_config(&self) -> OdometryConfig {
        OdometryConfig {
            intrinsics: self.camera,
            noise: self.noise.to_noise(),
            landmarks: self.landmarks,
            bootstrap: self.bootstrap,
            tracking_loss: self.tracking_loss,
        }
    }
}
