use crate::error::{Error, Result};
use crate::geometry::Pose;
use nalgebra::{Matrix3, UnitQuaternion, Vector3};

/// Similarity transform `x -> s R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sim3 {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Sim3 {
    fn default() -> Self {
        Sim3::identity()
    }
}

impl Sim3 {
    pub fn identity() -> Self {
        Sim3 {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Sim3 {
            scale,
            rotation,
            translation,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Sim3) -> Sim3 {
        Sim3 {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.transform_point(&other.translation),
        }
    }

    pub fn inverse(&self) -> Sim3 {
        let r_inv = self.rotation.inverse();
        Sim3 {
            scale: 1.0 / self.scale,
            rotation: r_inv,
            translation: -(r_inv * self.translation) / self.scale,
        }
    }

    /// Moves a world-from-camera pose into the transformed world.
    pub fn transform_pose(&self, pose: &Pose) -> Pose {
        Pose::new(self.rotation * pose.rotation, self.transform_point(&pose.translation))
    }
}

/// Closed-form weighted Umeyama fit minimizing
/// `sum w_i |s R src_i + t - dst_i|^2`, with the determinant sign
/// correction against reflections.
pub fn estimate_sim3_weighted(src: &[Vector3<f64>], dst: &[Vector3<f64>], weights: &[f64]) -> Result<Sim3> {
    if src.len() != dst.len() || src.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} source, {} target points and {} weights",
            src.len(),
            dst.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!("weight {w} is not a non-negative real")));
    }
    let active = weights.iter().filter(|&&w| w > 0.0).count();
    if active < 3 {
        return Err(Error::Rank(format!("{active} weighted points; need at least 3")));
    }
    let total: f64 = weights.iter().sum();
    let mut mu_s = Vector3::zeros();
    let mut mu_d = Vector3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        mu_s += *w * s;
        mu_d += *w * d;
    }
    mu_s /= total;
    mu_d /= total;
    let mut cross = Matrix3::zeros();
    let mut cov_s = Matrix3::zeros();
    for ((s, d), w) in src.iter().zip(dst).zip(weights) {
        let (a, b) = (s - mu_s, d - mu_d);
        cross += *w * b * a.transpose();
        cov_s += *w * a * a.transpose();
    }
    cross /= total;
    cov_s /= total;
    let var_s = cov_s.trace();
    let spread = cov_s.symmetric_eigenvalues();
    let mut ev: Vec<f64> = spread.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if !(var_s > 0.0) || ev[1] <= 1e-12 * ev[0] {
        return Err(Error::Rank("source points are collinear or coincident".into()));
    }
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = if (u * v_t).determinant() < 0.0 { -1.0 } else { 1.0 };
    let fix = Vector3::new(1.0, 1.0, d);
    let r = u * Matrix3::from_diagonal(&fix) * v_t;
    let scale = svd.singular_values.component_mul(&fix).sum() / var_s;
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mu_d - scale * (rotation * mu_s);
    Ok(Sim3 {
        scale,
        rotation,
        translation,
    })
}
