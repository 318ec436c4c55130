//! Rotation-vector / unit-quaternion conversions and small SO(3) helpers.
//!
//! Quaternions are stored `(w, x, y, z)` and always returned with `w >= 0`
//! so that each rotation has one representative.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

/// Axis-angle rotation vector, radians.
pub type RotationVector = Vector3<f64>;

const SMALL_ANGLE: f64 = 1e-8;

/// Flip `q` into the `w >= 0` hemisphere.
pub fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Quaternion of the rotation by `|r|` about `r / |r|`.
pub fn exp_so3(r: &RotationVector) -> UnitQuaternion<f64> {
    let theta_sq = r.norm_squared();
    let theta = theta_sq.sqrt();
    let (w, k) = if theta < SMALL_ANGLE {
        // sin(θ/2)/θ ≈ 1/2 − θ²/48
        (1.0 - theta_sq / 8.0, 0.5 - theta_sq / 48.0)
    } else {
        let half = 0.5 * theta;
        (half.cos(), half.sin() / theta)
    };
    let q = Quaternion::new(w, k * r.x, k * r.y, k * r.z);
    canonicalize(UnitQuaternion::new_normalize(q))
}

/// Minimal rotation vector (`|r| <= π`) of a unit quaternion.
pub fn log_so3(q: &UnitQuaternion<f64>) -> RotationVector {
    let q = canonicalize(*q);
    let w = q.w;
    let v = q.imag();
    let n = v.norm();
    if n < SMALL_ANGLE {
        // 2·atan2(n, w)/n ≈ (2/w)(1 − n²/(3w²))
        let scale = 2.0 / w * (1.0 - n * n / (3.0 * w * w));
        return v * scale;
    }
    let theta = 2.0 * n.atan2(w);
    v * (theta / n)
}

/// Cross-product matrix: `skew(a) * b == a × b`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Global (left) perturbation: `exp(δθ) ⊗ q`, renormalized and canonical.
pub fn perturb_global(q: &UnitQuaternion<f64>, delta: &RotationVector) -> UnitQuaternion<f64> {
    canonicalize(UnitQuaternion::new_normalize((exp_so3(delta) * q).into_inner()))
}
