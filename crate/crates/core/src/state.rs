//! Nominal state, error-state layout and covariance bookkeeping.
//!
//! Error-state layout: camera `[δp, δθ, δv]` (9), then one 3-block per mapped
//! landmark in insertion order, then one `[δp, δθ]` 6-block per pose clone in
//! insertion order.

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, UnitQuaternion, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{perturb_global, Pose};

pub type FeatureId = u64;

pub const CAMERA_DIM: usize = 9;
pub const LANDMARK_DIM: usize = 3;
pub const CLONE_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("feature {0} is already cloned or mapped")]
    DuplicateFeature(FeatureId),
    #[error("feature {0} has no pose clone")]
    UnknownClone(FeatureId),
    #[error("{0:?} is not part of the state")]
    UnknownEntity(Entity),
}

/// Camera pose saved when a feature was first observed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseClone {
    pub pose: Pose,
    pub pixel: Vector2<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entity {
    Landmark(FeatureId),
    Clone(FeatureId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    Camera,
    Landmark,
    Clone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutEntry {
    pub kind: EntityKind,
    pub id: Option<FeatureId>,
    pub offset: usize,
    pub dim: usize,
}

/// Nominal state: camera position, orientation (camera to global), velocity,
/// mapped landmarks and pose clones of features awaiting triangulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub p: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
    pub v: Vector3<f64>,
    pub landmarks: IndexMap<FeatureId, Vector3<f64>>,
    pub clones: IndexMap<FeatureId, PoseClone>,
}

impl FilterState {
    pub fn new(p: Vector3<f64>, q: UnitQuaternion<f64>, v: Vector3<f64>) -> Self {
        Self { p, q, v, landmarks: IndexMap::new(), clones: IndexMap::new() }
    }

    pub fn pose(&self) -> Pose {
        Pose { p: self.p, q: self.q }
    }

    pub fn error_dim(&self) -> usize {
        CAMERA_DIM + LANDMARK_DIM * self.landmarks.len() + CLONE_DIM * self.clones.len()
    }

    pub fn landmark_offset(&self, id: FeatureId) -> Option<usize> {
        self.landmarks.get_index_of(&id).map(|i| CAMERA_DIM + LANDMARK_DIM * i)
    }

    pub fn clone_offset(&self, id: FeatureId) -> Option<usize> {
        self.clones
            .get_index_of(&id)
            .map(|i| CAMERA_DIM + LANDMARK_DIM * self.landmarks.len() + CLONE_DIM * i)
    }

    pub fn layout(&self) -> Vec<LayoutEntry> {
        let mut out = Vec::with_capacity(1 + self.landmarks.len() + self.clones.len());
        out.push(LayoutEntry { kind: EntityKind::Camera, id: None, offset: 0, dim: CAMERA_DIM });
        let mut offset = CAMERA_DIM;
        for id in self.landmarks.keys() {
            out.push(LayoutEntry { kind: EntityKind::Landmark, id: Some(*id), offset, dim: LANDMARK_DIM });
            offset += LANDMARK_DIM;
        }
        for id in self.clones.keys() {
            out.push(LayoutEntry { kind: EntityKind::Clone, id: Some(*id), offset, dim: CLONE_DIM });
            offset += CLONE_DIM;
        }
        out
    }

    /// `self ⊕ δx`.
    pub fn compose(&self, delta: &ErrorVector) -> Result<FilterState, StateError> {
        let mut out = self.clone();
        out.compose_in_place(delta)?;
        Ok(out)
    }

    pub(crate) fn compose_in_place(&mut self, delta: &ErrorVector) -> Result<(), StateError> {
        let d = &delta.0;
        let expected = self.error_dim();
        if d.len() != expected {
            return Err(StateError::DimensionMismatch { expected, actual: d.len() });
        }
        let seg = |o: usize| Vector3::new(d[o], d[o + 1], d[o + 2]);
        self.p += seg(0);
        self.q = perturb_global(&self.q, &seg(3));
        self.v += seg(6);
        let mut o = CAMERA_DIM;
        for lm in self.landmarks.values_mut() {
            *lm += seg(o);
            o += LANDMARK_DIM;
        }
        for c in self.clones.values_mut() {
            c.pose = c.pose.perturbed(&seg(o), &seg(o + 3));
            o += CLONE_DIM;
        }
        Ok(())
    }
}

/// Error-state vector laid out like [`FilterState::layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorVector(pub DVector<f64>);

impl ErrorVector {
    pub fn zeros(dim: usize) -> Self {
        Self(DVector::zeros(dim))
    }
}

impl std::ops::Neg for ErrorVector {
    type Output = ErrorVector;
    fn neg(self) -> ErrorVector {
        ErrorVector(-self.0)
    }
}

/// Dense symmetric error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCovariance {
    pub matrix: DMatrix<f64>,
}

impl ErrorCovariance {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// Largest `|P_ij − P_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for j in 0..n {
            for i in 0..j {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)]).abs());
            }
        }
        worst
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = symmetrized(&self.matrix);
        sym.symmetric_eigenvalues().min()
    }

    pub fn camera_pose_block(&self) -> Matrix6<f64> {
        self.matrix.fixed_view::<6, 6>(0, 0).into_owned()
    }

    pub fn block3(&self, offset: usize) -> Matrix3<f64> {
        self.matrix.fixed_view::<3, 3>(offset, offset).into_owned()
    }
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `P ← (P + Pᵀ)/2` in place.
pub(crate) fn resymmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Nominal state together with its error covariance; every structural change
/// goes through here so the two stay dimensionally consistent.
#[derive(Debug, Clone, PartialEq)]
pub struct StateManager {
    state: FilterState,
    cov: ErrorCovariance,
}

impl StateManager {
    pub fn new(state: FilterState, covariance: DMatrix<f64>) -> Result<Self, StateError> {
        let expected = state.error_dim();
        if covariance.nrows() != expected || covariance.ncols() != expected {
            return Err(StateError::DimensionMismatch { expected, actual: covariance.nrows() });
        }
        let mut covariance = covariance;
        resymmetrize(&mut covariance);
        Ok(Self { state, cov: ErrorCovariance { matrix: covariance } })
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn covariance(&self) -> &ErrorCovariance {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    pub fn layout(&self) -> Vec<LayoutEntry> {
        self.state.layout()
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut FilterState, &mut DMatrix<f64>) {
        (&mut self.state, &mut self.cov.matrix)
    }

    pub fn compose(&mut self, delta: &ErrorVector) -> Result<(), StateError> {
        self.state.compose_in_place(delta)
    }

    fn is_known(&self, id: FeatureId) -> bool {
        self.state.landmarks.contains_key(&id) || self.state.clones.contains_key(&id)
    }

    /// Stochastic cloning: appends the current camera pose as a clone block,
    /// `P ← C P Cᵀ` with `C = [I; I*]` and `I*` selecting `[δp, δθ]`.
    pub fn clone_camera_pose(&mut self, id: FeatureId, pixel: Vector2<f64>, t: f64) -> Result<(), StateError> {
        if self.is_known(id) {
            return Err(StateError::DuplicateFeature(id));
        }
        let n = self.dim();
        let old = std::mem::replace(&mut self.cov.matrix, DMatrix::zeros(0, 0));
        let mut p = old.resize(n + CLONE_DIM, n + CLONE_DIM, 0.0);
        for j in 0..n {
            for k in 0..CLONE_DIM {
                p[(n + k, j)] = p[(k, j)];
                p[(j, n + k)] = p[(j, k)];
            }
        }
        for a in 0..CLONE_DIM {
            for b in 0..CLONE_DIM {
                p[(n + a, n + b)] = p[(a, b)];
            }
        }
        self.cov.matrix = p;
        let pose = self.state.pose();
        self.state.clones.insert(id, PoseClone { pose, pixel, t });
        Ok(())
    }

    /// Appends a triangulated landmark and drops its clone.
    ///
    /// With `G_x` (3×N) and `G_z` (3×m) the landmark error is
    /// `δp_f ≈ G_x δx + G_z δz`, giving
    /// `P̄ = [[P, P G_xᵀ], [G_x P, G_x P G_xᵀ + G_z R G_zᵀ]]`.
    pub fn insert_landmark(
        &mut self,
        id: FeatureId,
        position: Vector3<f64>,
        g_x: &DMatrix<f64>,
        g_z: &DMatrix<f64>,
        r_meas: &DMatrix<f64>,
    ) -> Result<(), StateError> {
        if !self.state.clones.contains_key(&id) {
            return Err(StateError::UnknownClone(id));
        }
        self.augment_landmark(id, position, g_x, g_z, r_meas)?;
        self.marginalize(Entity::Clone(id))
    }

    fn augment_landmark(
        &mut self,
        id: FeatureId,
        position: Vector3<f64>,
        g_x: &DMatrix<f64>,
        g_z: &DMatrix<f64>,
        r_meas: &DMatrix<f64>,
    ) -> Result<(), StateError> {
        let n = self.dim();
        let check = |expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(StateError::DimensionMismatch { expected, actual })
            }
        };
        check(3, g_x.nrows())?;
        check(n, g_x.ncols())?;
        check(3, g_z.nrows())?;
        check(g_z.ncols(), r_meas.nrows())?;
        check(g_z.ncols(), r_meas.ncols())?;

        let p = &self.cov.matrix;
        let cross = p * g_x.transpose(); // N×3
        let block = g_x * &cross + g_z * r_meas * g_z.transpose();

        let at = CAMERA_DIM + LANDMARK_DIM * self.state.landmarks.len();
        let old = std::mem::replace(&mut self.cov.matrix, DMatrix::zeros(0, 0));
        let mut grown = old.insert_rows(at, 3, 0.0).insert_columns(at, 3, 0.0);
        for i in 0..n {
            let row = if i < at { i } else { i + 3 };
            for a in 0..3 {
                grown[(row, at + a)] = cross[(i, a)];
                grown[(at + a, row)] = cross[(i, a)];
            }
        }
        for a in 0..3 {
            for b in 0..3 {
                grown[(at + a, at + b)] = 0.5 * (block[(a, b)] + block[(b, a)]);
            }
        }
        self.cov.matrix = grown;
        self.state.landmarks.insert(id, position);
        Ok(())
    }

    /// Removes an entity's rows and columns.
    pub fn marginalize(&mut self, entity: Entity) -> Result<(), StateError> {
        let (offset, dim) = match entity {
            Entity::Landmark(id) => (self.state.landmark_offset(id), LANDMARK_DIM),
            Entity::Clone(id) => (self.state.clone_offset(id), CLONE_DIM),
        };
        let offset = offset.ok_or(StateError::UnknownEntity(entity))?;
        let old = std::mem::replace(&mut self.cov.matrix, DMatrix::zeros(0, 0));
        self.cov.matrix = old.remove_rows(offset, dim).remove_columns(offset, dim);
        match entity {
            Entity::Landmark(id) => {
                self.state.landmarks.shift_remove(&id);
            }
            Entity::Clone(id) => {
                self.state.clones.shift_remove(&id);
            }
        }
        Ok(())
    }
}
