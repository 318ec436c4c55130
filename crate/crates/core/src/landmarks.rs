//! Feature lifecycle between first sighting and map insertion.
//!
//! A new feature clones the current camera pose. Later observations only
//! refresh its latest pixel until the ray angle between the first and the
//! latest observation passes the parallax threshold; the feature is then
//! triangulated from the clone and the current pose and inserted into the map
//! with a covariance obtained from numerical Jacobians of the triangulation.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::eskf::{NoiseConfig, TrackUpdate};
use crate::geometry::{global_ray, midpoint_unchecked, ray_angle, triangulate_two_view, CameraIntrinsics, GeometryError, Pose};
use crate::state::{Entity, FeatureId, StateError, StateManager};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandmarkConfig {
    pub parallax_threshold_deg: f64,
    /// Upper bound on mapped plus pending features.
    pub max_landmarks: usize,
    /// Central-difference step on pose error entries (m, rad).
    pub fd_state_step: f64,
    /// Central-difference step on pixel measurements.
    pub fd_pixel_step: f64,
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self { parallax_threshold_deg: 8.0, max_landmarks: 50, fd_state_step: 1e-6, fd_pixel_step: 1e-4 }
    }
}

impl LandmarkConfig {
    pub fn parallax_threshold(&self) -> f64 {
        self.parallax_threshold_deg.to_radians()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingFeature {
    pub feature_id: FeatureId,
    pub first_obs: Vector2<f64>,
    pub latest_obs: Vector2<f64>,
    pub latest_t: f64,
    pub obs_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TriangulationOutcome {
    Inserted(Vector3<f64>),
    StillPending { parallax: f64 },
    Rejected(GeometryError),
}

/// Angle between the first-sighting ray (from the clone) and the latest ray
/// (from `current`), both in the global frame.
pub fn parallax_of(pending: &PendingFeature, clone_pose: &Pose, current: &Pose, intr: &CameraIntrinsics) -> f64 {
    let a = global_ray(intr, clone_pose, &pending.first_obs);
    let b = global_ray(intr, current, &pending.latest_obs);
    ray_angle(&a, &b)
}

/// Central-difference partials of `midpoint(pose_a, pose_b, z_a, z_b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationPartials {
    /// 3×6 w.r.t. `[δp, δθ]` of view a.
    pub pose_a: DMatrix<f64>,
    /// 3×6 w.r.t. `[δp, δθ]` of view b.
    pub pose_b: DMatrix<f64>,
    /// 3×4 w.r.t. `[z_a, z_b]`.
    pub pixels: DMatrix<f64>,
}

pub fn triangulation_partials(
    intr: &CameraIntrinsics,
    pose_a: &Pose,
    pose_b: &Pose,
    z_a: &Vector2<f64>,
    z_b: &Vector2<f64>,
    state_step: f64,
    pixel_step: f64,
) -> TriangulationPartials {
    let g = |a: &Pose, b: &Pose, za: &Vector2<f64>, zb: &Vector2<f64>| {
        midpoint_unchecked(intr, a, b, za, zb).unwrap_or_else(|| Vector3::repeat(f64::NAN))
    };
    let perturb = |pose: &Pose, k: usize, sign: f64| {
        let mut d = [Vector3::zeros(), Vector3::zeros()];
        d[k / 3][k % 3] = sign * state_step;
        pose.perturbed(&d[0], &d[1])
    };
    let mut out = TriangulationPartials {
        pose_a: DMatrix::zeros(3, 6),
        pose_b: DMatrix::zeros(3, 6),
        pixels: DMatrix::zeros(3, 4),
    };
    let denom = 2.0 * state_step;
    for k in 0..6 {
        let col = (g(&perturb(pose_a, k, 1.0), pose_b, z_a, z_b) - g(&perturb(pose_a, k, -1.0), pose_b, z_a, z_b)) / denom;
        out.pose_a.set_column(k, &col);
        let col = (g(pose_a, &perturb(pose_b, k, 1.0), z_a, z_b) - g(pose_a, &perturb(pose_b, k, -1.0), z_a, z_b)) / denom;
        out.pose_b.set_column(k, &col);
    }
    for k in 0..4 {
        let mut e = [Vector2::zeros(), Vector2::zeros()];
        e[k / 2][k % 2] = pixel_step;
        let plus = g(pose_a, pose_b, &(z_a + e[0]), &(z_b + e[1]));
        let minus = g(pose_a, pose_b, &(z_a - e[0]), &(z_b - e[1]));
        out.pixels.set_column(k, &((plus - minus) / (2.0 * pixel_step)));
    }
    out
}

/// Numerical Jacobians of the triangulation of a pending feature.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangulationJacobians {
    /// 3×N w.r.t. the full error state; non-zero only in the camera pose and clone columns.
    pub g_x: DMatrix<f64>,
    /// 3×4 w.r.t. `[first_obs, latest_obs]`.
    pub g_z: DMatrix<f64>,
}

/// `G_x`, `G_z` of `midpoint(clone ⊕ δ, camera ⊕ δ, z_first, z_latest)`.
pub fn triangulation_jacobians(
    sm: &StateManager,
    id: FeatureId,
    latest: &Vector2<f64>,
    intr: &CameraIntrinsics,
    state_step: f64,
    pixel_step: f64,
) -> Result<TriangulationJacobians, StateError> {
    let state = sm.state();
    let clone = state.clones.get(&id).ok_or(StateError::UnknownClone(id))?;
    let clone_off = state.clone_offset(id).ok_or(StateError::UnknownClone(id))?;
    let d = triangulation_partials(intr, &clone.pose, &state.pose(), &clone.pixel, latest, state_step, pixel_step);
    let mut g_x = DMatrix::zeros(3, sm.dim());
    g_x.columns_mut(0, 6).copy_from(&d.pose_b);
    g_x.columns_mut(clone_off, 6).copy_from(&d.pose_a);
    Ok(TriangulationJacobians { g_x, g_z: d.pixels })
}

/// Pending features and ids retired for good.
#[derive(Debug, Clone, Default)]
pub struct LandmarkPipeline {
    pub config: LandmarkConfig,
    pending: BTreeMap<FeatureId, PendingFeature>,
    retired: HashSet<FeatureId>,
}

impl LandmarkPipeline {
    pub fn new(config: LandmarkConfig) -> Self {
        Self { config, ..Default::default() }
    }

    pub fn pending(&self) -> &BTreeMap<FeatureId, PendingFeature> {
        &self.pending
    }

    pub fn is_pending(&self, id: FeatureId) -> bool {
        self.pending.contains_key(&id)
    }

    pub fn is_retired(&self, id: FeatureId) -> bool {
        self.retired.contains(&id)
    }

    /// Marks an id as deleted; its clone, if any, must already be gone.
    pub fn retire(&mut self, id: FeatureId) {
        self.pending.remove(&id);
        self.retired.insert(id);
    }

    /// Clones the current camera pose for a feature seen for the first time.
    pub fn register_feature(&mut self, sm: &mut StateManager, msg: &TrackUpdate) -> Result<(), StateError> {
        let id = msg.feature_id;
        if self.pending.contains_key(&id) || self.retired.contains(&id) {
            return Err(StateError::DuplicateFeature(id));
        }
        sm.clone_camera_pose(id, msg.pixel(), msg.t)?;
        self.pending.insert(
            id,
            PendingFeature { feature_id: id, first_obs: msg.pixel(), latest_obs: msg.pixel(), latest_t: msg.t, obs_count: 1 },
        );
        Ok(())
    }

    /// Refreshes a pending feature and inserts it once parallax suffices.
    pub fn try_triangulate(
        &mut self,
        sm: &mut StateManager,
        msg: &TrackUpdate,
        intr: &CameraIntrinsics,
        noise: &NoiseConfig,
    ) -> Result<TriangulationOutcome, StateError> {
        let id = msg.feature_id;
        let pending = self.pending.get_mut(&id).ok_or(StateError::UnknownClone(id))?;
        pending.latest_obs = msg.pixel();
        pending.latest_t = msg.t;
        pending.obs_count += 1;
        let pending = *pending;

        let clone_pose = sm.state().clones.get(&id).ok_or(StateError::UnknownClone(id))?.pose;
        let current = sm.state().pose();
        let parallax = parallax_of(&pending, &clone_pose, &current, intr);
        let threshold = self.config.parallax_threshold();
        if parallax < threshold {
            return Ok(TriangulationOutcome::StillPending { parallax });
        }
        let point = match triangulate_two_view(&clone_pose, &current, &pending.first_obs, &pending.latest_obs, intr, threshold) {
            Ok(p) => p,
            Err(GeometryError::InsufficientParallax { angle }) => {
                return Ok(TriangulationOutcome::StillPending { parallax: angle });
            }
            Err(e) => {
                sm.marginalize(Entity::Clone(id))?;
                self.retire(id);
                return Ok(TriangulationOutcome::Rejected(e));
            }
        };
        let jac = triangulation_jacobians(sm, id, &pending.latest_obs, intr, self.config.fd_state_step, self.config.fd_pixel_step)?;
        let r = DMatrix::identity(4, 4) * (noise.sigma_px * noise.sigma_px);
        sm.insert_landmark(id, point, &jac.g_x, &jac.g_z, &r)?;
        self.pending.remove(&id);
        Ok(TriangulationOutcome::Inserted(point))
    }
}

/// Covariance a triangulated point would receive: `G_x P G_xᵀ + G_z R G_zᵀ`.
pub fn landmark_block(p: &DMatrix<f64>, jac: &TriangulationJacobians, r: &DMatrix<f64>) -> Matrix3<f64> {
    let b = &jac.g_x * p * jac.g_x.transpose() + &jac.g_z * r * jac.g_z.transpose();
    Matrix3::from_fn(|i, j| b[(i, j)])
}
