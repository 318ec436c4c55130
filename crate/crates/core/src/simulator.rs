//! Synthetic world with appearing and disappearing landmarks, a smooth camera
//! path and an asynchronous, randomly interleaved track stream.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eskf::{Message, TrackDeletion, TrackUpdate};
use crate::evaluation::Trajectory;
use crate::geometry::{canonicalize, CameraIntrinsics, Pose};
use crate::state::FeatureId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulator config: {field}: {reason}")]
    InvalidConfig { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> SimError {
    SimError::InvalidConfig { field: field.to_owned(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneConfig {
    /// Rectangle of half extents `half_extent` around `center`, perpendicular to `normal`.
    Plane { center: [f64; 3], normal: [f64; 3], half_extent: [f64; 2] },
    /// Axis-aligned box volume.
    Box { min: [f64; 3], max: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub waypoints: Vec<[f64; 3]>,
    /// Close the spline back onto the first waypoint.
    pub closed: bool,
    /// Traversals of a closed path within `duration_s`.
    pub laps: u32,
    pub duration_s: f64,
    /// Point the optical axis keeps facing.
    pub look_at: [f64; 3],
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        let waypoints = (0..8)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 8.0;
                [1.5 * a.cos(), 1.0 * a.sin(), 0.3 * (2.0 * a).sin()]
            })
            .collect();
        Self { waypoints, closed: true, laps: 6, duration_s: 30.0, look_at: [0.0, 0.0, 10.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub landmark_count: usize,
    pub scene: SceneConfig,
    pub lifetime_mean_s: f64,
    pub lifetime_std_s: f64,
    pub trajectory: TrajectoryConfig,
    /// Simulation ticks per second; every emitted record carries a tick timestamp.
    pub tick_rate_hz: f64,
    pub pixel_noise_sigma: f64,
    pub intrinsics: CameraIntrinsics,
    pub min_pixel_motion: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let tilt = 30f64.to_radians();
        Self {
            seed: 0,
            landmark_count: 1000,
            scene: SceneConfig::Plane {
                center: [0.0, 0.0, 3.5],
                normal: [0.0, tilt.sin(), -tilt.cos()],
                half_extent: [3.5, 3.0],
            },
            lifetime_mean_s: 8.0,
            lifetime_std_s: 2.0,
            trajectory: TrajectoryConfig::default(),
            tick_rate_hz: 1000.0,
            pixel_noise_sigma: 1.0,
            intrinsics: CameraIntrinsics { fx: 200.0, fy: 200.0, cx: 120.0, cy: 90.0, width: 240.0, height: 180.0 },
            min_pixel_motion: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = |field: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("must be positive, got {x}")))
            }
        };
        if self.landmark_count == 0 {
            return Err(invalid("landmark_count", "must be positive"));
        }
        positive("lifetime_mean_s", self.lifetime_mean_s)?;
        if !(self.lifetime_std_s >= 0.0 && self.lifetime_std_s.is_finite()) {
            return Err(invalid("lifetime_std_s", "must be non-negative"));
        }
        positive("trajectory.duration_s", self.trajectory.duration_s)?;
        positive("tick_rate_hz", self.tick_rate_hz)?;
        if !(self.pixel_noise_sigma >= 0.0 && self.pixel_noise_sigma.is_finite()) {
            return Err(invalid("pixel_noise_sigma", "must be non-negative"));
        }
        positive("min_pixel_motion", self.min_pixel_motion)?;
        self.intrinsics.validate().map_err(|e| invalid("intrinsics", e.to_string()))?;
        if self.trajectory.laps == 0 {
            return Err(invalid("trajectory.laps", "must be at least 1"));
        }
        if self.trajectory.laps > 1 && !self.trajectory.closed {
            return Err(invalid("trajectory.laps", "repeated laps need a closed path"));
        }
        if self.trajectory.waypoints.is_empty() {
            return Err(invalid("trajectory.waypoints", "needs at least one waypoint"));
        }
        if self.trajectory.waypoints.iter().flatten().any(|x| !x.is_finite()) {
            return Err(invalid("trajectory.waypoints", "must be finite"));
        }
        match &self.scene {
            SceneConfig::Plane { normal, half_extent, .. } => {
                if Vector3::from(*normal).norm() < 1e-12 {
                    return Err(invalid("scene.normal", "must be non-zero"));
                }
                positive("scene.half_extent", half_extent[0].min(half_extent[1]))?;
            }
            SceneConfig::Box { min, max } => {
                if (0..3).any(|k| max[k] <= min[k]) {
                    return Err(invalid("scene.max", "must exceed scene.min on every axis"));
                }
            }
        }
        Ok(())
    }
}

/// Uniform Catmull-Rom spline through waypoints, parametrized by time.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPath {
    points: Vec<Vector3<f64>>,
    closed: bool,
    lap_duration: f64,
    look_at: Vector3<f64>,
}

impl CameraPath {
    pub fn new(config: &TrajectoryConfig) -> Self {
        Self {
            points: config.waypoints.iter().map(|w| Vector3::from(*w)).collect(),
            closed: config.closed,
            lap_duration: config.duration_s / config.laps.max(1) as f64,
            look_at: Vector3::from(config.look_at),
        }
    }

    fn segments(&self) -> usize {
        if self.closed {
            self.points.len()
        } else {
            self.points.len().saturating_sub(1)
        }
    }

    fn point(&self, i: isize) -> Vector3<f64> {
        let n = self.points.len() as isize;
        let idx = if self.closed { i.rem_euclid(n) } else { i.clamp(0, n - 1) };
        self.points[idx as usize]
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        let segs = self.segments();
        if segs == 0 {
            return self.points[0];
        }
        let lap = t / self.lap_duration;
        let frac = if self.closed && lap > 0.0 { lap - lap.floor() } else { lap.clamp(0.0, 1.0) };
        let u = frac * segs as f64;
        let i = (u.floor() as usize).min(segs - 1);
        let s = u - i as f64;
        let i = i as isize;
        let (p0, p1, p2, p3) = (self.point(i - 1), self.point(i), self.point(i + 1), self.point(i + 2));
        let (s2, s3) = (s * s, s * s * s);
        0.5 * (2.0 * p1 + (p2 - p0) * s + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * s2 + (3.0 * p1 - p0 - 3.0 * p2 + p3) * s3)
    }

    /// Camera-to-global pose; optical axis towards `look_at`, image y along global +y.
    pub fn pose(&self, t: f64) -> Pose {
        let p = self.position(t);
        let z = (self.look_at - p).normalize();
        let x = Vector3::y().cross(&z).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        Pose::new(p, canonicalize(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r))))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkRecord {
    pub id: FeatureId,
    pub position: Vector3<f64>,
    pub birth: f64,
    pub death: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub messages: Vec<Message>,
    pub ground_truth: Trajectory,
    pub landmarks: Vec<LandmarkRecord>,
}

impl SimOutput {
    pub fn update_count(&self) -> usize {
        self.messages.iter().filter(|m| matches!(m, Message::Update(_))).count()
    }
}

fn sample_scene(scene: &SceneConfig, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    match scene {
        SceneConfig::Plane { center, normal, half_extent } => {
            let n = Vector3::from(*normal).normalize();
            let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let e1 = (helper - n * n.dot(&helper)).normalize();
            let e2 = n.cross(&e1);
            let a = rng.random_range(-half_extent[0]..=half_extent[0]);
            let b = rng.random_range(-half_extent[1]..=half_extent[1]);
            Vector3::from(*center) + a * e1 + b * e2
        }
        SceneConfig::Box { min, max } => {
            Vector3::new(rng.random_range(min[0]..max[0]), rng.random_range(min[1]..max[1]), rng.random_range(min[2]..max[2]))
        }
    }
}

#[derive(Clone, Copy)]
enum Track {
    Unseen,
    Active { last: Vector2<f64> },
    Ended,
}

/// Runs the simulation; a fixed config yields an identical output.
pub fn generate(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let duration = config.trajectory.duration_s;
    let life = Normal::new(config.lifetime_mean_s, config.lifetime_std_s).map_err(|e| invalid("lifetime_std_s", e.to_string()))?;
    let min_life = 0.05 * config.lifetime_mean_s;
    let landmarks: Vec<LandmarkRecord> = (0..config.landmark_count)
        .map(|i| {
            let position = sample_scene(&config.scene, &mut rng);
            let birth = rng.random_range(-config.lifetime_mean_s..duration);
            let mut l = life.sample(&mut rng);
            while l < min_life {
                l = life.sample(&mut rng);
            }
            LandmarkRecord { id: i as FeatureId, position, birth, death: birth + l }
        })
        .collect();

    let path = CameraPath::new(&config.trajectory);
    let intr = &config.intrinsics;
    let noise = Normal::new(0.0, config.pixel_noise_sigma).map_err(|e| invalid("pixel_noise_sigma", e.to_string()))?;
    let ticks = (duration * config.tick_rate_hz).round() as u64;
    let mut tracks = vec![Track::Unseen; landmarks.len()];
    let mut messages = Vec::new();
    let mut ground_truth = Trajectory::new();
    let mut updates = Vec::new();
    let mut deleted = Vec::new();
    for k in 0..=ticks {
        let t = k as f64 / config.tick_rate_hz;
        let pose = path.pose(t);
        ground_truth.samples.push((t, pose));
        updates.clear();
        deleted.clear();
        for (lm, track) in landmarks.iter().zip(tracks.iter_mut()) {
            if matches!(track, Track::Ended) || lm.birth > t {
                continue;
            }
            let pc = pose.to_camera(&lm.position);
            let pixel = if pc.z > 0.0 { Some(intr.project_camera_point(&pc)).filter(|z| intr.contains(z)) } else { None };
            let alive = t <= lm.death;
            match (*track, alive, pixel) {
                (Track::Active { .. }, false, _) | (Track::Active { .. }, true, None) => {
                    deleted.push(lm.id);
                    *track = Track::Ended;
                }
                (Track::Unseen, false, _) => *track = Track::Ended,
                (Track::Unseen, true, Some(z)) => {
                    updates.push((lm.id, z));
                    *track = Track::Active { last: z };
                }
                (Track::Active { last }, true, Some(z)) => {
                    let d = z - last;
                    if d.x.abs() >= config.min_pixel_motion || d.y.abs() >= config.min_pixel_motion {
                        updates.push((lm.id, z));
                        *track = Track::Active { last: z };
                    }
                }
                _ => {}
            }
        }
        if !deleted.is_empty() {
            messages.push(Message::Deletion(TrackDeletion { t, feature_ids: deleted.clone() }));
        }
        updates.shuffle(&mut rng);
        for (id, z) in &updates {
            let (nu, nv) = if config.pixel_noise_sigma > 0.0 { (noise.sample(&mut rng), noise.sample(&mut rng)) } else { (0.0, 0.0) };
            messages.push(Message::Update(TrackUpdate { feature_id: *id, t, u: z.x + nu, v: z.y + nv }));
        }
    }
    Ok(SimOutput { messages, ground_truth, landmarks })
}
