//! Two-view midpoint triangulation.

use nalgebra::{Vector2, Vector3};

use super::camera::{CameraIntrinsics, Pose, DEPTH_FLOOR};
use super::GeometryError;

/// Angle between two direction vectors, radians.
pub fn ray_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Global-frame ray through pixel `z` seen from `pose` (camera-frame `z` component 1).
pub fn global_ray(intr: &CameraIntrinsics, pose: &Pose, z: &Vector2<f64>) -> Vector3<f64> {
    pose.q.transform_vector(&intr.ray(z))
}

/// Closest-approach parameters `(λa, λb)` of two rays, `None` if parallel.
fn closest_approach(
    ca: &Vector3<f64>,
    da: &Vector3<f64>,
    cb: &Vector3<f64>,
    db: &Vector3<f64>,
) -> Option<(f64, f64)> {
    let b = cb - ca;
    let aa = da.dot(da);
    let ab = da.dot(db);
    let bb = db.dot(db);
    let det = aa * bb - ab * ab;
    if det <= 1e-14 * aa * bb {
        return None;
    }
    let rhs_a = da.dot(&b);
    let rhs_b = db.dot(&b);
    let la = (bb * rhs_a - ab * rhs_b) / det;
    let lb = (ab * rhs_a - aa * rhs_b) / det;
    Some((la, lb))
}

/// Midpoint of the common perpendicular, without parallax or cheirality checks.
///
/// Used as the smooth triangulation function when differentiating numerically.
pub fn midpoint_unchecked(
    intr: &CameraIntrinsics,
    pose_a: &Pose,
    pose_b: &Pose,
    z_a: &Vector2<f64>,
    z_b: &Vector2<f64>,
) -> Option<Vector3<f64>> {
    let da = global_ray(intr, pose_a, z_a);
    let db = global_ray(intr, pose_b, z_b);
    let (la, lb) = closest_approach(&pose_a.p, &da, &pose_b.p, &db)?;
    Some(0.5 * ((pose_a.p + da * la) + (pose_b.p + db * lb)))
}

/// Triangulates a global point from two views.
///
/// Fails with `InsufficientParallax` when the ray angle is below `min_parallax`
/// (radians) or the baseline vanishes, and with `NegativeDepth` when the point is
/// not in front of both cameras.
pub fn triangulate_two_view(
    pose_a: &Pose,
    pose_b: &Pose,
    z_a: &Vector2<f64>,
    z_b: &Vector2<f64>,
    intr: &CameraIntrinsics,
    min_parallax: f64,
) -> Result<Vector3<f64>, GeometryError> {
    let da = global_ray(intr, pose_a, z_a);
    let db = global_ray(intr, pose_b, z_b);
    let angle = ray_angle(&da, &db);
    let baseline = (pose_b.p - pose_a.p).norm();
    if baseline < 1e-12 || angle < min_parallax {
        return Err(GeometryError::InsufficientParallax { angle });
    }
    let (la, lb) = closest_approach(&pose_a.p, &da, &pose_b.p, &db)
        .ok_or(GeometryError::InsufficientParallax { angle })?;
    if la <= DEPTH_FLOOR || lb <= DEPTH_FLOOR {
        return Err(GeometryError::NegativeDepth);
    }
    let point = 0.5 * ((pose_a.p + da * la) + (pose_b.p + db * lb));
    if pose_a.to_camera(&point).z <= DEPTH_FLOOR || pose_b.to_camera(&point).z <= DEPTH_FLOOR {
        return Err(GeometryError::NegativeDepth);
    }
    Ok(point)
}
