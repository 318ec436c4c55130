//! Homography-based initialization from asynchronous track updates.
//!
//! The first `reference_size` distinct features freeze a reference set. Their
//! later updates feed one constant-velocity Kalman smoother per feature; the
//! current set is the smoothed positions extrapolated to the latest message
//! time. Once the median displacement between the two sets is large enough,
//! the relative motion is recovered from the homography, scale is fixed by a
//! unit baseline, and the surviving features are triangulated to seed the map.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix2, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::eskf::{NoiseConfig, TrackUpdate};
use crate::geometry::{
    canonicalize, decompose_homography, estimate_homography, ray_angle, triangulate_two_view, CameraIntrinsics,
    Correspondence, GeometryError, Pose,
};
use crate::landmarks::triangulation_partials;
use crate::state::{FeatureId, FilterState, StateManager, CAMERA_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    /// Distinct features that make up the reference set.
    pub reference_size: usize,
    pub min_correspondences: usize,
    pub min_median_displacement_px: f64,
    /// Median ray angle the triangulated features must reach, degrees.
    pub min_parallax_deg: f64,
    /// Smoother acceleration noise, px/s².
    pub smoother_accel_std: f64,
    /// Variance of the pinned reference pose.
    pub reference_variance: f64,
    /// Prior std of the seeded camera position, in baseline units.
    pub prior_position_std: f64,
    pub prior_orientation_std: f64,
    pub prior_velocity_std: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            reference_size: 40,
            min_correspondences: 8,
            min_median_displacement_px: 5.0,
            min_parallax_deg: 6.0,
            smoother_accel_std: 50.0,
            reference_variance: 1e-6,
            prior_position_std: 0.05,
            prior_orientation_std: 0.01,
            prior_velocity_std: 0.5,
        }
    }
}

/// Per-feature constant-velocity Kalman filter on pixel position.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSmoother {
    /// `[u, v, u̇, v̇]`
    pub x: Vector4<f64>,
    pub p: Matrix4<f64>,
    pub t: f64,
}

impl TrackSmoother {
    const INITIAL_VELOCITY_STD: f64 = 100.0;

    pub fn new(z: Vector2<f64>, t: f64, meas_std: f64) -> Self {
        let pv = meas_std * meas_std;
        let vv = Self::INITIAL_VELOCITY_STD * Self::INITIAL_VELOCITY_STD;
        Self { x: Vector4::new(z.x, z.y, 0.0, 0.0), p: Matrix4::from_diagonal(&Vector4::new(pv, pv, vv, vv)), t }
    }

    fn transition(dt: f64, accel_std: f64) -> (Matrix4<f64>, Matrix4<f64>) {
        let mut f = Matrix4::identity();
        f[(0, 2)] = dt;
        f[(1, 3)] = dt;
        let q = accel_std * accel_std;
        let (a, b, c) = (q * dt.powi(3) / 3.0, q * dt * dt / 2.0, q * dt);
        let qm = Matrix4::new(a, 0.0, b, 0.0, 0.0, a, 0.0, b, b, 0.0, c, 0.0, 0.0, b, 0.0, c);
        (f, qm)
    }

    fn predict(&mut self, t: f64, accel_std: f64) {
        let dt = (t - self.t).max(0.0);
        if dt > 0.0 {
            let (f, q) = Self::transition(dt, accel_std);
            self.x = f * self.x;
            self.p = f * self.p * f.transpose() + q;
            self.t = t;
        }
    }

    pub fn update(&mut self, z: Vector2<f64>, t: f64, accel_std: f64, meas_std: f64) {
        self.predict(t, accel_std);
        let r = (meas_std * meas_std).max(1e-12);
        let s = self.p.fixed_view::<2, 2>(0, 0) + Matrix2::identity() * r;
        let Some(si) = s.try_inverse() else { return };
        let k = self.p.fixed_view::<4, 2>(0, 0) * si;
        let y = z - self.x.fixed_rows::<2>(0);
        self.x += k * y;
        let hp = self.p.fixed_view::<2, 4>(0, 0).into_owned();
        self.p -= k * hp;
        self.p = (self.p + self.p.transpose()) * 0.5;
    }

    /// Position covariance extrapolated to `t`.
    pub fn covariance_at(&self, t: f64, accel_std: f64) -> Matrix2<f64> {
        let dt = (t - self.t).max(0.0);
        let (f, q) = Self::transition(dt, accel_std);
        (f * self.p * f.transpose() + q).fixed_view::<2, 2>(0, 0).into_owned()
    }

    /// Smoothed position extrapolated to `t`.
    pub fn position_at(&self, t: f64) -> Vector2<f64> {
        let dt = (t - self.t).max(0.0);
        Vector2::new(self.x[0] + dt * self.x[2], self.x[1] + dt * self.x[3])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSet {
    pub entries: BTreeMap<FeatureId, (Vector2<f64>, f64)>,
    pub creation_t: f64,
    /// Pixel covariance per entry; entries without one use `σ_px² I`.
    pub pixel_cov: BTreeMap<FeatureId, Matrix2<f64>>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Latest timestamp of any entry.
    pub fn time(&self) -> f64 {
        self.entries.values().map(|(_, t)| *t).fold(self.creation_t, f64::max)
    }

    fn covariance(&self, id: FeatureId, sigma_px: f64) -> Matrix2<f64> {
        self.pixel_cov.get(&id).copied().unwrap_or_else(|| Matrix2::identity() * sigma_px * sigma_px)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapPhase {
    Collecting { distinct: usize },
    ReferenceFrozen,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NotReady {
    TooFewCorrespondences { found: usize, needed: usize },
    InsufficientMotion { median_px: f64 },
    InsufficientParallax { median_deg: f64 },
    Geometry(GeometryError),
}

/// Seeded filter produced by a successful initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct Seed {
    pub manager: StateManager,
    pub t: f64,
    pub reference_t: f64,
    /// Features that failed triangulation and were left out of the map.
    pub dropped: Vec<FeatureId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitOutcome {
    NotReady(NotReady),
    Initialized(Box<Seed>),
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Estimates the motion between `reference` and `current` and seeds the map.
///
/// The reference camera defines the global frame; the returned state carries
/// the current camera pose with a unit-norm baseline.
pub fn try_initialize(
    reference: &FeatureSet,
    current: &FeatureSet,
    intr: &CameraIntrinsics,
    config: &BootstrapConfig,
    noise: &NoiseConfig,
) -> InitOutcome {
    let matched: Vec<(FeatureId, Vector2<f64>, Vector2<f64>)> = reference
        .entries
        .iter()
        .filter_map(|(id, (zr, _))| current.entries.get(id).map(|(zc, _)| (*id, *zr, *zc)))
        .collect();
    let needed = config.min_correspondences.max(4);
    if matched.len() < needed {
        return InitOutcome::NotReady(NotReady::TooFewCorrespondences { found: matched.len(), needed });
    }
    let mut disp: Vec<f64> = matched.iter().map(|(_, a, b)| (b - a).norm()).collect();
    let median_px = median(&mut disp);
    if median_px < config.min_median_displacement_px {
        return InitOutcome::NotReady(NotReady::InsufficientMotion { median_px });
    }

    let pairs: Vec<Correspondence> = matched.iter().map(|(_, a, b)| (intr.normalize(a), intr.normalize(b))).collect();
    let dec = match estimate_homography(&pairs).and_then(|h| decompose_homography(&h, &pairs)) {
        Ok(d) => d,
        Err(e) => return InitOutcome::NotReady(NotReady::Geometry(e)),
    };
    // X_cur = R X_ref + t  ⇒  camera-to-global rotation Rᵀ, centre −Rᵀ t.
    let q_cur = canonicalize(dec.rotation.inverse());
    let p_cur = -(q_cur * dec.translation);
    let ref_pose = Pose::identity();
    let cur_pose = Pose::new(p_cur, q_cur);

    let mut points = Vec::new();
    let mut dropped = Vec::new();
    let mut angles = Vec::new();
    for (id, zr, zc) in &matched {
        match triangulate_two_view(&ref_pose, &cur_pose, zr, zc, intr, 0.0) {
            Ok(p) => {
                angles.push(ray_angle(&(p - ref_pose.p), &(p - cur_pose.p)));
                points.push((*id, *zr, *zc, p));
            }
            Err(_) => dropped.push(*id),
        }
    }
    if points.len() < needed {
        return InitOutcome::NotReady(NotReady::TooFewCorrespondences { found: points.len(), needed });
    }
    let median_deg = median(&mut angles).to_degrees();
    if median_deg < config.min_parallax_deg {
        return InitOutcome::NotReady(NotReady::InsufficientParallax { median_deg });
    }

    let t_ref = reference.creation_t;
    let t_cur = current.time();
    let v = if t_cur > t_ref { p_cur / (t_cur - t_ref) } else { Vector3::zeros() };

    // Joint covariance by first-order propagation of independent priors:
    // [camera (9), reference pose (6), pixels (4 per landmark)] → [camera, landmarks].
    let m = points.len();
    let n_out = CAMERA_DIM + 3 * m;
    let n_in = CAMERA_DIM + 6 + 4 * m;
    let mut prior = DMatrix::<f64>::zeros(n_in, n_in);
    for k in 0..3 {
        prior[(k, k)] = config.prior_position_std.powi(2);
        prior[(3 + k, 3 + k)] = config.prior_orientation_std.powi(2);
        prior[(6 + k, 6 + k)] = config.prior_velocity_std.powi(2);
    }
    for k in 0..6 {
        prior[(CAMERA_DIM + k, CAMERA_DIM + k)] = config.reference_variance;
    }
    for (j, (id, ..)) in points.iter().enumerate() {
        let o = CAMERA_DIM + 6 + 4 * j;
        prior.fixed_view_mut::<2, 2>(o, o).copy_from(&reference.covariance(*id, noise.sigma_px));
        prior.fixed_view_mut::<2, 2>(o + 2, o + 2).copy_from(&current.covariance(*id, noise.sigma_px));
    }
    let mut jac = DMatrix::<f64>::zeros(n_out, n_in);
    jac.view_mut((0, 0), (CAMERA_DIM, CAMERA_DIM)).fill_with_identity();
    let step_state = 1e-6;
    let step_px = 1e-4;
    for (j, (_, zr, zc, _)) in points.iter().enumerate() {
        let d = triangulation_partials(intr, &ref_pose, &cur_pose, zr, zc, step_state, step_px);
        let row = CAMERA_DIM + 3 * j;
        jac.view_mut((row, 0), (3, 6)).copy_from(&d.pose_b);
        jac.view_mut((row, CAMERA_DIM), (3, 6)).copy_from(&d.pose_a);
        jac.view_mut((row, CAMERA_DIM + 6 + 4 * j), (3, 4)).copy_from(&d.pixels);
    }
    let cov = &jac * prior * jac.transpose();

    let mut state = FilterState::new(p_cur, q_cur, v);
    for (id, _, _, p) in &points {
        state.landmarks.insert(*id, *p);
    }
    match StateManager::new(state, cov) {
        Ok(manager) => InitOutcome::Initialized(Box::new(Seed { manager, t: t_cur, reference_t: t_ref, dropped })),
        Err(e) => InitOutcome::NotReady(NotReady::Geometry(GeometryError::DegenerateConfiguration(e.to_string()))),
    }
}

/// Collects the reference and current sets from the raw update stream.
///
/// Every live feature keeps a smoother so that a replacement reference can be
/// frozen at once when the current one dies out; only reference ids enter the
/// current set.
#[derive(Debug, Clone)]
pub struct Bootstrap {
    pub config: BootstrapConfig,
    reference: Option<FeatureSet>,
    smoothers: BTreeMap<FeatureId, (u64, TrackSmoother)>,
    next_seq: u64,
    latest_t: f64,
    meas_std: f64,
}

impl Bootstrap {
    pub fn new(config: BootstrapConfig, meas_std: f64) -> Self {
        Self { config, reference: None, smoothers: BTreeMap::new(), next_seq: 0, latest_t: f64::NEG_INFINITY, meas_std }
    }

    pub fn phase(&self) -> BootstrapPhase {
        match self.reference {
            Some(_) => BootstrapPhase::ReferenceFrozen,
            None => BootstrapPhase::Collecting { distinct: self.smoothers.len() },
        }
    }

    pub fn reference_set(&self) -> Option<&FeatureSet> {
        self.reference.as_ref()
    }

    /// Smoothed positions of the surviving reference features at the latest message time.
    pub fn current_set(&self) -> FeatureSet {
        let t = self.latest_t;
        let mut set = FeatureSet { creation_t: t, ..Default::default() };
        if let Some(r) = &self.reference {
            for id in r.entries.keys() {
                if let Some((_, s)) = self.smoothers.get(id) {
                    set.entries.insert(*id, (s.position_at(t), t));
                    set.pixel_cov.insert(*id, s.covariance_at(t, self.config.smoother_accel_std));
                }
            }
        }
        set
    }

    pub fn smoother(&self, id: FeatureId) -> Option<&TrackSmoother> {
        self.smoothers.get(&id).map(|(_, s)| s)
    }

    pub fn accumulate(&mut self, msg: &TrackUpdate) -> BootstrapPhase {
        let id = msg.feature_id;
        let z = msg.pixel();
        self.latest_t = self.latest_t.max(msg.t);
        let accel = self.config.smoother_accel_std;
        match self.smoothers.get_mut(&id) {
            Some((_, s)) => s.update(z, msg.t, accel, self.meas_std),
            None => {
                self.smoothers.insert(id, (self.next_seq, TrackSmoother::new(z, msg.t, self.meas_std)));
                self.next_seq += 1;
            }
        }
        if self.reference.is_none() {
            self.freeze();
        }
        self.phase()
    }

    /// Snapshot of the `reference_size` earliest live features at the latest time.
    fn freeze(&mut self) {
        if self.smoothers.len() < self.config.reference_size {
            return;
        }
        let mut order: Vec<(u64, FeatureId)> = self.smoothers.iter().map(|(id, (seq, _))| (*seq, *id)).collect();
        order.sort_unstable();
        let t = self.latest_t;
        let mut set = FeatureSet { creation_t: t, ..Default::default() };
        for (_, id) in order.into_iter().take(self.config.reference_size) {
            let s = &self.smoothers[&id].1;
            set.entries.insert(id, (s.position_at(t), t));
            set.pixel_cov.insert(id, s.covariance_at(t, self.config.smoother_accel_std));
        }
        self.reference = Some(set);
    }

    /// Drops deleted features; re-seeds once too few reference features survive.
    pub fn handle_deletion(&mut self, ids: &[FeatureId]) {
        for id in ids {
            self.smoothers.remove(id);
            if let Some(r) = self.reference.as_mut() {
                r.entries.remove(id);
                r.pixel_cov.remove(id);
            }
        }
        let needed = self.config.min_correspondences.max(4);
        if self.reference.as_ref().is_some_and(|r| r.len() < needed) {
            log::info!("bootstrap reference set fell below {needed} features; re-seeding");
            self.reference = None;
            self.freeze();
        }
    }

    pub fn try_initialize(&self, intr: &CameraIntrinsics, noise: &NoiseConfig) -> InitOutcome {
        match &self.reference {
            Some(r) => try_initialize(r, &self.current_set(), intr, &self.config, noise),
            None => InitOutcome::NotReady(NotReady::TooFewCorrespondences {
                found: self.smoothers.len(),
                needed: self.config.reference_size,
            }),
        }
    }
}
