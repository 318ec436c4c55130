//! Closed-form least-squares similarity alignment of two point sets.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::GeometryError;

/// `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sim3Transform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Sim3Transform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.scale * self.rotation.transform_vector(x) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        let scale = 1.0 / self.scale;
        Self { scale, rotation, translation: -scale * rotation.transform_vector(&self.translation) }
    }
}

/// Similarity minimizing `Σ ‖ref_i − (s·R·est_i + t)‖²`.
pub fn umeyama_sim3(est: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<Sim3Transform, GeometryError> {
    if est.len() != reference.len() {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "point sets differ in length ({} vs {})",
            est.len(),
            reference.len()
        )));
    }
    if est.len() < 3 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "alignment needs at least 3 points, got {}",
            est.len()
        )));
    }
    let n = est.len() as f64;
    let mu_x = est.iter().sum::<Vector3<f64>>() / n;
    let mu_y = reference.iter().sum::<Vector3<f64>>() / n;
    let mut sigma = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in est.iter().zip(reference) {
        let dx = x - mu_x;
        sigma += (y - mu_y) * dx.transpose();
        var_x += dx.norm_squared();
    }
    sigma /= n;
    var_x /= n;

    let svd = sigma.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateConfiguration("SVD failed".into())),
    };
    let d = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    if var_x <= f64::EPSILON || d[idx[1]] <= 1e-12 * d[idx[0]].max(f64::MIN_POSITIVE) {
        return Err(GeometryError::DegenerateConfiguration("points are collinear or coincident".into()));
    }
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        // Flip the axis of the smallest singular value.
        s[(idx[2], idx[2])] = -1.0;
    }
    let r = u * s * v_t;
    let scale = (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_x;
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let translation = mu_y - scale * (r * mu_x);
    Ok(Sim3Transform { scale, rotation, translation })
}
