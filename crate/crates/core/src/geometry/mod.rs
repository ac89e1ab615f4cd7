//! Pinhole cameras, rigid poses, two-view epipolar geometry and triangulation.

mod camera;
mod essential;
mod triangulation;

pub use camera::{Intrinsics, PointMap, Pose};
pub use essential::{
    decompose_essential, eight_point, essential_from_pose, estimate_essential_ransac,
    fundamental_from_essential, project_to_essential, recover_pose, EssentialEstimate,
    RansacOptions,
};
pub use triangulation::{triangulate, triangulate_normalized};

use nalgebra::{Matrix3, Vector3};

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
