//! Pinhole camera model and camera poses.

use nalgebra::{Matrix2x3, Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::so3::{canonicalize, perturb_global, skew};
use super::GeometryError;

/// Landmarks closer to the image plane than this are treated as behind the camera.
pub const DEPTH_FLOOR: f64 = 1e-6;

/// Pinhole intrinsics for undistorted pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let intr = Self { fx, fy, cx, cy, width, height };
        intr.validate()?;
        Ok(intr)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |what: &str| Err(GeometryError::InvalidIntrinsics(what.to_owned()));
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            return bad("fx must be positive");
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            return bad("fy must be positive");
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("image size must be positive");
        }
        if !(0.0..self.width).contains(&self.cx) {
            return bad("cx must lie inside the image");
        }
        if !(0.0..self.height).contains(&self.cy) {
            return bad("cy must lie inside the image");
        }
        Ok(())
    }

    /// Camera-frame point to pixel, no depth check.
    pub fn project_camera_point(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy)
    }

    /// Pixel to normalized image coordinates `(x, y)` on the `z = 1` plane.
    pub fn normalize(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    pub fn denormalize(&self, xn: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(xn.x * self.fx + self.cx, xn.y * self.fy + self.cy)
    }

    /// Camera-frame ray through a pixel, with unit `z`.
    pub fn ray(&self, px: &Vector2<f64>) -> Vector3<f64> {
        let n = self.normalize(px);
        Vector3::new(n.x, n.y, 1.0)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x < self.width && px.y >= 0.0 && px.y < self.height
    }
}

/// Camera pose in the global frame. `q` rotates camera-frame vectors into the global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub p: Vector3<f64>,
    pub q: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(p: Vector3<f64>, q: UnitQuaternion<f64>) -> Self {
        Self { p, q: canonicalize(q) }
    }

    pub fn identity() -> Self {
        Self { p: Vector3::zeros(), q: UnitQuaternion::identity() }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    /// Global point expressed in the camera frame: `R(q)ᵀ (p_f − p)`.
    pub fn to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.q.inverse_transform_vector(&(point - self.p))
    }

    pub fn to_global(&self, point_c: &Vector3<f64>) -> Vector3<f64> {
        self.q.transform_vector(point_c) + self.p
    }

    /// `self ⊕ (δp, δθ)` with the global orientation perturbation.
    pub fn perturbed(&self, dp: &Vector3<f64>, dtheta: &Vector3<f64>) -> Self {
        Self { p: self.p + dp, q: perturb_global(&self.q, dtheta) }
    }
}

/// Projects a global landmark into the image of a camera at `pose`.
pub fn project(intr: &CameraIntrinsics, pose: &Pose, landmark: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
    let pc = pose.to_camera(landmark);
    if pc.z <= DEPTH_FLOOR {
        return Err(GeometryError::NonPositiveDepth { depth: pc.z });
    }
    Ok(intr.project_camera_point(&pc))
}

/// Measurement Jacobians at the zero error state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionJacobians {
    pub pixel: Vector2<f64>,
    /// w.r.t. camera position error
    pub h_pos: Matrix2x3<f64>,
    /// w.r.t. global camera orientation error
    pub h_rot: Matrix2x3<f64>,
    /// w.r.t. landmark position error
    pub h_f: Matrix2x3<f64>,
}

/// Analytic Jacobians of [`project`] under `p ⊕ δp`, `exp(δθ) ⊗ q`, `p_f ⊕ δp_f`.
pub fn projection_jacobians(
    intr: &CameraIntrinsics,
    pose: &Pose,
    landmark: &Vector3<f64>,
) -> Result<ProjectionJacobians, GeometryError> {
    let d = landmark - pose.p;
    let rt = pose.rotation().transpose();
    let pc = rt * d;
    if pc.z <= DEPTH_FLOOR {
        return Err(GeometryError::NonPositiveDepth { depth: pc.z });
    }
    let inv_z = 1.0 / pc.z;
    let d_pi = Matrix2x3::new(
        intr.fx * inv_z,
        0.0,
        -intr.fx * pc.x * inv_z * inv_z,
        0.0,
        intr.fy * inv_z,
        -intr.fy * pc.y * inv_z * inv_z,
    );
    // R(exp(δθ)q)ᵀ d ≈ Rᵀ d + Rᵀ [d]× δθ
    let h_f = d_pi * rt;
    let h_rot = h_f * skew(&d);
    Ok(ProjectionJacobians { pixel: intr.project_camera_point(&pc), h_pos: -h_f, h_rot, h_f })
}
