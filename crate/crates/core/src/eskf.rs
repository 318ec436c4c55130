//! Constant-velocity propagation, single-measurement correction and error reset.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{projection_jacobians, skew, CameraIntrinsics};
use crate::state::{Entity, ErrorVector, FeatureId, StateError, StateManager, CAMERA_DIM, CLONE_DIM};

/// One asynchronous feature observation from the tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackUpdate {
    pub feature_id: FeatureId,
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

impl TrackUpdate {
    pub fn pixel(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }
}

/// Features the tracker has dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackDeletion {
    pub t: f64,
    pub feature_ids: Vec<FeatureId>,
}

/// A record of the track stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Update(TrackUpdate),
    Deletion(TrackDeletion),
}

impl Message {
    pub fn t(&self) -> f64 {
        match self {
            Message::Update(u) => u.t,
            Message::Deletion(d) => d.t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Velocity random walk, m/s/√s.
    pub sigma_a: f64,
    /// Orientation random walk, rad/√s.
    pub sigma_w: f64,
    /// Per-axis pixel measurement std.
    pub sigma_px: f64,
    /// Chi-square gate on the 2-DoF innovation; `None` disables gating.
    pub gate_threshold: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma_a: 2.0, sigma_w: 2.0, sigma_px: 1.0, gate_threshold: Some(9.21) }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("negative time step {0}")]
    NegativeDt(f64),
    #[error("landmark {0} is not in front of the camera")]
    NonPositiveDepth(FeatureId),
    #[error("innovation covariance is singular")]
    SingularInnovation,
    #[error("landmark {0} is not mapped")]
    UnknownLandmark(FeatureId),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Accepted,
    Gated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub innovation: Vector2<f64>,
    pub innovation_cov: Matrix2<f64>,
    /// `ỹᵀ S⁻¹ ỹ`
    pub mahalanobis: f64,
    pub decision: GateDecision,
}

/// `x ← f(x, dt)`, `P ← F P Fᵀ + Q` for the constant-velocity, constant-orientation model.
pub fn propagate(sm: &mut StateManager, dt: f64, noise: &NoiseConfig) -> Result<(), FilterError> {
    if dt < 0.0 || dt.is_nan() {
        return Err(FilterError::NegativeDt(dt));
    }
    if dt == 0.0 {
        return Ok(());
    }
    let (state, p) = sm.parts_mut();
    state.p += state.v * dt;

    let n = p.nrows();
    // F = I + dt·E where E couples δp to δv.
    for j in 0..n {
        for k in 0..3 {
            let add = dt * p[(6 + k, j)];
            p[(k, j)] += add;
        }
    }
    for k in 0..3 {
        let (mut pos, vel) = p.columns_range_pair_mut(k, 6 + k);
        pos.axpy(dt, &vel, 1.0);
    }
    let qa = noise.sigma_a * noise.sigma_a * dt;
    let qw = noise.sigma_w * noise.sigma_w * dt;
    for k in 0..3 {
        p[(3 + k, 3 + k)] += qw;
        p[(6 + k, 6 + k)] += qa;
    }
    for k in 0..3 {
        for j in 0..n {
            let avg = 0.5 * (p[(k, j)] + p[(j, k)]);
            p[(k, j)] = avg;
            p[(j, k)] = avg;
        }
    }
    Ok(())
}

/// Innovation statistics of one landmark observation, without modifying the filter.
pub fn innovation(
    sm: &StateManager,
    msg: &TrackUpdate,
    intr: &CameraIntrinsics,
    noise: &NoiseConfig,
) -> Result<UpdateOutcome, FilterError> {
    let m = Measurement::new(sm, msg, intr, noise)?;
    Ok(m.outcome(noise))
}

/// Sparse row pair of `H` plus the quantities shared by the gate and the gain.
struct Measurement {
    y: Vector2<f64>,
    w0: DVector<f64>,
    w1: DVector<f64>,
    s: Matrix2<f64>,
}

impl Measurement {
    fn new(sm: &StateManager, msg: &TrackUpdate, intr: &CameraIntrinsics, noise: &NoiseConfig) -> Result<Self, FilterError> {
        let state = sm.state();
        let id = msg.feature_id;
        let lo = state.landmark_offset(id).ok_or(FilterError::UnknownLandmark(id))?;
        let landmark = state.landmarks[&id];
        let jac = projection_jacobians(intr, &state.pose(), &landmark).map_err(|_| FilterError::NonPositiveDepth(id))?;
        let y = msg.pixel() - jac.pixel;

        let mut cols = [(0usize, Vector2::zeros()); 9];
        let blocks: [(usize, &Matrix2x3<f64>); 3] = [(0, &jac.h_pos), (3, &jac.h_rot), (lo, &jac.h_f)];
        for (b, (offset, h)) in blocks.iter().enumerate() {
            for k in 0..3 {
                cols[3 * b + k] = (offset + k, h.column(k).into_owned());
            }
        }

        let p = &sm.covariance().matrix;
        let n = p.nrows();
        let mut w0 = DVector::zeros(n);
        let mut w1 = DVector::zeros(n);
        for (c, h) in &cols {
            let col = p.column(*c);
            w0.axpy(h.x, &col, 1.0);
            w1.axpy(h.y, &col, 1.0);
        }
        let mut s = Matrix2::zeros();
        for (c, h) in &cols {
            s[(0, 0)] += h.x * w0[*c];
            s[(0, 1)] += h.x * w1[*c];
            s[(1, 0)] += h.y * w0[*c];
            s[(1, 1)] += h.y * w1[*c];
        }
        let r = noise.sigma_px * noise.sigma_px;
        s[(0, 0)] += r;
        s[(1, 1)] += r;
        let off = 0.5 * (s[(0, 1)] + s[(1, 0)]);
        s[(0, 1)] = off;
        s[(1, 0)] = off;
        Ok(Self { y, w0, w1, s })
    }

    fn outcome(&self, noise: &NoiseConfig) -> UpdateOutcome {
        let mahalanobis = match self.s.try_inverse() {
            Some(si) => (self.y.transpose() * si * self.y)[0],
            None => f64::INFINITY,
        };
        let decision = match noise.gate_threshold {
            Some(th) if mahalanobis > th => GateDecision::Gated,
            _ => GateDecision::Accepted,
        };
        UpdateOutcome { innovation: self.y, innovation_cov: self.s, mahalanobis, decision }
    }
}

/// Asynchronous correction with one observation of a mapped landmark.
///
/// `H` is non-zero only in the camera pose columns and the landmark's slot.
/// On acceptance: `K = P Hᵀ S⁻¹`, `δx̂ = K ỹ`, `x ← x ⊕ δx̂`,
/// `P ← (I − K H) P` (symmetrized), followed by [`reset`].
pub fn update(
    sm: &mut StateManager,
    msg: &TrackUpdate,
    intr: &CameraIntrinsics,
    noise: &NoiseConfig,
) -> Result<UpdateOutcome, FilterError> {
    let m = Measurement::new(sm, msg, intr, noise)?;
    let outcome = m.outcome(noise);
    if outcome.decision == GateDecision::Gated {
        return Ok(outcome);
    }
    // S = L Lᵀ and U = W L⁻ᵀ with W = P Hᵀ, so K S Kᵀ = U Uᵀ and δx̂ = U L⁻¹ ỹ.
    let Some(chol) = m.s.cholesky() else {
        return Err(FilterError::SingularInnovation);
    };
    let l = chol.l();
    let (a, b, d) = (l[(0, 0)], l[(1, 0)], l[(1, 1)]);
    let u0 = &m.w0 / a;
    let u1 = (&m.w1 - &u0 * b) / d;
    let e0 = m.y.x / a;
    let e1 = (m.y.y - b * e0) / d;
    let delta = ErrorVector(&u0 * e0 + &u1 * e1);

    {
        let (_, p) = sm.parts_mut();
        // (I − K H) P = P − U Uᵀ; both products are formed identically for
        // (i, j) and (j, i), so symmetry is preserved exactly.
        let n = p.nrows();
        let (u0, u1) = (u0.as_slice(), u1.as_slice());
        for (j, col) in p.as_mut_slice().chunks_exact_mut(n).enumerate() {
            let (c0, c1) = (u0[j], u1[j]);
            for ((x, a), b) in col.iter_mut().zip(u0).zip(u1) {
                *x = *x - c0 * a - c1 * b;
            }
        }
    }
    sm.compose(&delta)?;
    reset(sm, &delta);
    Ok(outcome)
}

/// Orientation block of the reset Jacobian for `q_true = exp(δθ) ⊗ q`.
///
/// After folding `δθ̂` into the nominal state the new error is
/// `log(exp(δθ) exp(−δθ̂)) ≈ δθ − δθ̂ + ½[δθ̂]× δθ`.
pub fn reset_orientation_block(dtheta: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::identity() + skew(&(0.5 * dtheta))
}

fn orientation_offsets(sm: &StateManager) -> Vec<usize> {
    let s = sm.state();
    let first_clone = CAMERA_DIM + 3 * s.landmarks.len();
    std::iter::once(3)
        .chain((0..s.clones.len()).map(|k| first_clone + CLONE_DIM * k + 3))
        .collect()
}

/// `P ← G P Gᵀ` where `G` is identity except the orientation blocks.
pub fn reset(sm: &mut StateManager, applied_delta: &ErrorVector) {
    let offsets = orientation_offsets(sm);
    let d = &applied_delta.0;
    let blocks: Vec<(usize, Matrix3<f64>)> = offsets
        .into_iter()
        .filter_map(|o| {
            let dtheta = Vector3::new(d[o], d[o + 1], d[o + 2]);
            (dtheta != Vector3::zeros()).then(|| (o, reset_orientation_block(&dtheta)))
        })
        .collect();
    if blocks.is_empty() {
        return;
    }
    let (_, p) = sm.parts_mut();
    let n = p.nrows();
    for (o, g) in &blocks {
        let rows = p.rows(*o, 3).into_owned();
        p.rows_mut(*o, 3).copy_from(&(g * rows));
    }
    for (o, g) in &blocks {
        let cols = p.columns(*o, 3).into_owned();
        p.columns_mut(*o, 3).copy_from(&(cols * g.transpose()));
    }
    // Only the touched rows and columns can have lost symmetry.
    for (o, _) in &blocks {
        for r in *o..*o + 3 {
            for j in 0..n {
                let avg = 0.5 * (p[(r, j)] + p[(j, r)]);
                p[(r, j)] = avg;
                p[(j, r)] = avg;
            }
        }
    }
}

/// Dense reset Jacobian, used for checking [`reset`].
pub fn reset_jacobian(sm: &StateManager, applied_delta: &ErrorVector) -> DMatrix<f64> {
    let n = sm.dim();
    let mut g = DMatrix::identity(n, n);
    let d = &applied_delta.0;
    for o in orientation_offsets(sm) {
        let block = reset_orientation_block(&Vector3::new(d[o], d[o + 1], d[o + 2]));
        g.view_mut((o, o), (3, 3)).copy_from(&block);
    }
    g
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeletionSummary {
    pub landmarks: Vec<FeatureId>,
    pub clones: Vec<FeatureId>,
    pub unknown: usize,
}

/// Marginalizes every mapped landmark and pending clone named in `msg`.
pub fn handle_deletion(sm: &mut StateManager, msg: &TrackDeletion) -> DeletionSummary {
    let mut summary = DeletionSummary::default();
    for &id in &msg.feature_ids {
        if sm.marginalize(Entity::Landmark(id)).is_ok() {
            summary.landmarks.push(id);
        } else if sm.marginalize(Entity::Clone(id)).is_ok() {
            summary.clones.push(id);
        } else {
            summary.unknown += 1;
        }
    }
    if summary.unknown > 0 {
        log::debug!("deletion at t={} named {} unknown feature ids", msg.t, summary.unknown);
    }
    summary
}
