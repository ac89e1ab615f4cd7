use super::camera::{Intrinsics, Pose};
use crate::error::{Error, Result};
use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point2, Point3, Vector3};

/// Minimum angle between the two viewing rays.
const MIN_PARALLAX: f64 = 1e-8;

/// Linear (DLT) triangulation of one correspondence.
///
/// Works in normalized image coordinates around the midpoint of the two
/// camera centers for conditioning. Rays closer than 1e-8 rad to parallel,
/// or coincident camera centers, are rejected as low parallax.
pub fn triangulate(
    p1: &Point2<f64>,
    p2: &Point2<f64>,
    pose1: &Pose,
    pose2: &Pose,
    k1: &Intrinsics,
    k2: &Intrinsics,
) -> Result<Point3<f64>> {
    let x1 = k1.normalize(p1);
    let x2 = k2.normalize(p2);
    let d1 = (pose1.rotation * x1).normalize();
    let d2 = (pose2.rotation * x2).normalize();
    let parallax = d1.cross(&d2).norm().atan2(d1.dot(&d2));
    let baseline = (pose2.translation - pose1.translation).norm();
    let extent = pose1.translation.norm().max(pose2.translation.norm()).max(1.0);
    if parallax < MIN_PARALLAX || baseline <= 1e-12 * extent {
        return Err(Error::LowParallax(format!(
            "parallax {parallax:.3e} rad, baseline {baseline:.3e}"
        )));
    }
    let origin = 0.5 * (pose1.translation + pose2.translation);
    let proj = |pose: &Pose| -> Matrix3x4<f64> {
        // camera-from-world about the shifted origin
        let r: Matrix3<f64> = pose.rotation.inverse().to_rotation_matrix().into_inner();
        let t = -r * (pose.translation - origin);
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.set_column(3, &t);
        m
    };
    let local = dlt(&[(x1, proj(pose1)), (x2, proj(pose2))])
        .ok_or_else(|| Error::LowParallax("triangulated point at infinity".into()))?;
    Ok(Point3::from(local + origin))
}

/// Triangulates normalized coordinates with the first camera at the origin
/// and the second at `X2 = R X1 + t`. Returns the point in the first frame.
pub fn triangulate_normalized(
    x1: &Vector3<f64>,
    x2: &Vector3<f64>,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let p1 = Matrix3x4::identity();
    let mut p2 = Matrix3x4::zeros();
    p2.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    p2.set_column(3, t);
    dlt(&[(*x1, p1), (*x2, p2)])
}

fn dlt(views: &[(Vector3<f64>, Matrix3x4<f64>); 2]) -> Option<Vector3<f64>> {
    let mut a = Matrix4::zeros();
    for (k, (x, p)) in views.iter().enumerate() {
        let r0 = x.x / x.z * p.row(2) - p.row(0);
        let r1 = x.y / x.z * p.row(2) - p.row(1);
        a.set_row(2 * k, &(r0 / r0.norm()));
        a.set_row(2 * k + 1, &(r1 / r1.norm()));
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = v_t.row(min_idx);
    if h[3].abs() < 1e-14 * h.norm() {
        return None;
    }
    Some(Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}
