//! Pure geometry used by the filter, the bootstrap and the evaluation code.

mod camera;
mod homography;
mod so3;
mod triangulation;
mod umeyama;

pub use camera::{project, projection_jacobians, CameraIntrinsics, Pose, ProjectionJacobians, DEPTH_FLOOR};
pub use homography::{
    decompose_homography, estimate_homography, normalize_homography, transfer, Correspondence,
    HomographyDecomposition,
};
pub use so3::{canonicalize, exp_so3, log_so3, perturb_global, skew, RotationVector};
pub use triangulation::{global_ray, midpoint_unchecked, ray_angle, triangulate_two_view};
pub use umeyama::{umeyama_sim3, Sim3Transform};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point at depth {depth} is not in front of the camera")]
    NonPositiveDepth { depth: f64 },
    #[error("insufficient parallax ({angle} rad)")]
    InsufficientParallax { angle: f64 },
    #[error("triangulated point is behind one of the cameras")]
    NegativeDepth,
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("no homography decomposition passes the cheirality test")]
    NoValidSolution,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}
