//! Message-driven odometry: bootstrap until initialized, then asynchronous
//! filtering with delayed landmark insertion.

use nalgebra::{Matrix6, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bootstrap::{Bootstrap, BootstrapConfig, InitOutcome};
use crate::eskf::{handle_deletion, propagate, update, FilterError, GateDecision, Message, NoiseConfig, TrackDeletion, TrackUpdate};
use crate::evaluation::Trajectory;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::landmarks::{LandmarkConfig, LandmarkPipeline, TriangulationOutcome};
use crate::state::{Entity, StateManager};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingLossConfig {
    /// Mapped-landmark count below which tracking counts as degraded.
    pub min_landmarks: usize,
    /// How long the count must stay low before the loss is reported.
    pub duration_s: f64,
}

impl Default for TrackingLossConfig {
    fn default() -> Self {
        Self { min_landmarks: 5, duration_s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdometryConfig {
    pub intrinsics: CameraIntrinsics,
    pub noise: NoiseConfig,
    pub landmarks: LandmarkConfig,
    pub bootstrap: BootstrapConfig,
    pub tracking_loss: TrackingLossConfig,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdometryError {
    #[error("message at t={t} precedes filter time {filter_t}")]
    OutOfOrder { t: f64, filter_t: f64 },
    #[error("filter diverged at t={t}: {what}")]
    Divergence { t: f64, what: String },
    #[error("filter error at t={t}: {source}")]
    Filter { t: f64, source: FilterError },
}

/// Filter output after an accepted update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateRecord {
    pub t: f64,
    pub p: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
    pub v: Vector3<f64>,
    pub landmarks: usize,
    pub clones: usize,
    pub camera_trace: f64,
    /// `[δp, δθ]` covariance.
    pub pose_cov: Matrix6<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Initialized { t: f64, reference_t: f64, pose: Pose, landmarks: usize, dropped: usize },
    TrackingLost { t: f64, landmarks: usize },
    TrackingRecovered { t: f64, landmarks: usize },
    BootstrapStalled { t: f64, reason: String },
}

impl std::fmt::Display for Event {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Event::Initialized { t, reference_t, pose, landmarks, dropped } => {
                let q = pose.q.quaternion();
                write!(
                    f,
                    "{t:.6} INIT reference_t={reference_t:.6} p={:.6},{:.6},{:.6} q={:.6},{:.6},{:.6},{:.6} landmarks={landmarks} dropped={dropped}",
                    pose.p.x, pose.p.y, pose.p.z, q.i, q.j, q.k, q.w
                )
            }
            Event::TrackingLost { t, landmarks } => write!(f, "{t:.6} TRACKING_LOST landmarks={landmarks}"),
            Event::TrackingRecovered { t, landmarks } => write!(f, "{t:.6} TRACKING_RECOVERED landmarks={landmarks}"),
            Event::BootstrapStalled { t, reason } => write!(f, "{t:.6} BOOTSTRAP_STALLED {reason}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub updates: usize,
    pub accepted: usize,
    pub gated: usize,
    pub inserted: usize,
    pub rejected: usize,
    pub behind_camera: usize,
}

pub struct Odometry {
    pub config: OdometryConfig,
    bootstrap: Bootstrap,
    filter: Option<StateManager>,
    filter_t: f64,
    pipeline: LandmarkPipeline,
    records: Vec<EstimateRecord>,
    events: Vec<Event>,
    low_since: Option<f64>,
    lost: bool,
    last_stall_reason: Option<String>,
    pub counters: Counters,
}

impl Odometry {
    pub fn new(config: OdometryConfig) -> Self {
        Self {
            bootstrap: Bootstrap::new(config.bootstrap, config.noise.sigma_px),
            pipeline: LandmarkPipeline::new(config.landmarks),
            config,
            filter: None,
            filter_t: f64::NEG_INFINITY,
            records: Vec::new(),
            events: Vec::new(),
            low_since: None,
            lost: false,
            last_stall_reason: None,
            counters: Counters::default(),
        }
    }

    /// Skips bootstrap and starts filtering from a known state at time `t`.
    pub fn seed(&mut self, manager: StateManager, t: f64) {
        self.filter = Some(manager);
        self.filter_t = t;
    }

    pub fn is_initialized(&self) -> bool {
        self.filter.is_some()
    }

    pub fn filter(&self) -> Option<&StateManager> {
        self.filter.as_ref()
    }

    pub fn pipeline(&self) -> &LandmarkPipeline {
        &self.pipeline
    }

    pub fn records(&self) -> &[EstimateRecord] {
        &self.records
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn initialization_time(&self) -> Option<f64> {
        self.events.iter().find_map(|e| if let Event::Initialized { t, .. } = e { Some(*t) } else { None })
    }

    pub fn process(&mut self, msg: &Message) -> Result<(), OdometryError> {
        match msg {
            Message::Update(u) => self.on_update(u),
            Message::Deletion(d) => self.on_deletion(d),
        }
    }

    pub fn run<'a>(&mut self, messages: impl IntoIterator<Item = &'a Message>) -> Result<(), OdometryError> {
        for m in messages {
            self.process(m)?;
        }
        Ok(())
    }

    fn on_update(&mut self, msg: &TrackUpdate) -> Result<(), OdometryError> {
        let Some(sm) = self.filter.as_mut() else {
            return self.bootstrap_step(msg);
        };
        let t = msg.t;
        if t < self.filter_t {
            return Err(OdometryError::OutOfOrder { t, filter_t: self.filter_t });
        }
        let filter_err = |source| OdometryError::Filter { t, source };
        propagate(sm, t - self.filter_t, &self.config.noise).map_err(filter_err)?;
        self.filter_t = t;
        self.counters.updates += 1;
        let id = msg.feature_id;
        let intr = &self.config.intrinsics;
        if sm.state().landmarks.contains_key(&id) {
            match update(sm, msg, intr, &self.config.noise) {
                Ok(out) if out.decision == GateDecision::Accepted => {
                    self.counters.accepted += 1;
                    check_finite(sm, t)?;
                    self.records.push(record(sm, t));
                }
                Ok(_) => self.counters.gated += 1,
                Err(FilterError::NonPositiveDepth(_)) => {
                    self.counters.behind_camera += 1;
                    sm.marginalize(Entity::Landmark(id)).map_err(|e| filter_err(e.into()))?;
                    self.pipeline.retire(id);
                }
                Err(e) => return Err(filter_err(e)),
            }
        } else if self.pipeline.is_pending(id) {
            match self.pipeline.try_triangulate(sm, msg, intr, &self.config.noise).map_err(|e| filter_err(e.into()))? {
                TriangulationOutcome::Inserted(_) => {
                    self.counters.inserted += 1;
                    check_finite(sm, t)?;
                }
                TriangulationOutcome::Rejected(_) => self.counters.rejected += 1,
                TriangulationOutcome::StillPending { .. } => {}
            }
        } else if !self.pipeline.is_retired(id) {
            let occupied = sm.state().landmarks.len() + self.pipeline.pending().len();
            if occupied < self.pipeline.config.max_landmarks {
                self.pipeline.register_feature(sm, msg).map_err(|e| filter_err(e.into()))?;
            }
        }
        self.track_health(t);
        Ok(())
    }

    fn bootstrap_step(&mut self, msg: &TrackUpdate) -> Result<(), OdometryError> {
        self.bootstrap.accumulate(msg);
        match self.bootstrap.try_initialize(&self.config.intrinsics, &self.config.noise) {
            InitOutcome::Initialized(seed) => {
                let pose = seed.manager.state().pose();
                let landmarks = seed.manager.state().landmarks.len();
                log::info!("initialized at t={:.6} with {landmarks} landmarks", seed.t);
                self.events.push(Event::Initialized { t: seed.t, reference_t: seed.reference_t, pose, landmarks, dropped: seed.dropped.len() });
                self.filter_t = seed.t.max(msg.t);
                self.filter = Some(seed.manager);
                let sm = self.filter.as_ref().expect("just set");
                check_finite(sm, self.filter_t)?;
                self.records.push(record(sm, self.filter_t));
            }
            InitOutcome::NotReady(reason) => {
                if let crate::bootstrap::NotReady::Geometry(e) = &reason {
                    let r = e.to_string();
                    if self.last_stall_reason.as_deref() != Some(&r) {
                        log::debug!("bootstrap not ready at t={:.6}: {r}", msg.t);
                        self.events.push(Event::BootstrapStalled { t: msg.t, reason: r.clone() });
                        self.last_stall_reason = Some(r);
                    }
                }
            }
        }
        Ok(())
    }

    fn on_deletion(&mut self, msg: &TrackDeletion) -> Result<(), OdometryError> {
        let Some(sm) = self.filter.as_mut() else {
            self.bootstrap.handle_deletion(&msg.feature_ids);
            return Ok(());
        };
        handle_deletion(sm, msg);
        for id in &msg.feature_ids {
            self.pipeline.retire(*id);
        }
        self.track_health(msg.t);
        Ok(())
    }

    fn track_health(&mut self, t: f64) {
        let Some(sm) = self.filter.as_ref() else { return };
        let m = sm.state().landmarks.len();
        let cfg = self.config.tracking_loss;
        if m < cfg.min_landmarks {
            let since = *self.low_since.get_or_insert(t);
            if !self.lost && t - since >= cfg.duration_s {
                self.lost = true;
                log::warn!("tracking lost at t={t:.6}: {m} mapped landmarks");
                self.events.push(Event::TrackingLost { t, landmarks: m });
            }
        } else {
            self.low_since = None;
            if self.lost {
                self.lost = false;
                log::info!("tracking recovered at t={t:.6}");
                self.events.push(Event::TrackingRecovered { t, landmarks: m });
            }
        }
    }

    /// Last record per timestamp as a trajectory.
    pub fn trajectory(&self) -> (Trajectory, Vec<EstimateRecord>) {
        let mut out: Vec<EstimateRecord> = Vec::new();
        for r in &self.records {
            match out.last_mut() {
                Some(last) if last.t == r.t => *last = *r,
                _ => out.push(*r),
            }
        }
        let traj = Trajectory { samples: out.iter().map(|r| (r.t, Pose::new(r.p, r.q))).collect() };
        (traj, out)
    }
}

fn record(sm: &StateManager, t: f64) -> EstimateRecord {
    let s = sm.state();
    let cov = sm.covariance();
    EstimateRecord {
        t,
        p: s.p,
        q: s.q,
        v: s.v,
        landmarks: s.landmarks.len(),
        clones: s.clones.len(),
        camera_trace: (0..9).map(|k| cov.matrix[(k, k)]).sum(),
        pose_cov: cov.camera_pose_block(),
    }
}

fn check_finite(sm: &StateManager, t: f64) -> Result<(), OdometryError> {
    let s = sm.state();
    let ok = s.p.iter().chain(s.v.iter()).all(|x| x.is_finite())
        && s.q.coords.iter().all(|x| x.is_finite())
        && s.landmarks.values().all(|l| l.iter().all(|x| x.is_finite()));
    if !ok {
        return Err(OdometryError::Divergence { t, what: "non-finite nominal state".into() });
    }
    if (0..sm.dim()).any(|k| !sm.covariance().matrix[(k, k)].is_finite()) {
        return Err(OdometryError::Divergence { t, what: "non-finite covariance".into() });
    }
    Ok(())
}
