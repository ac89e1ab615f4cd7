use crate::error::{Error, Result};
use nalgebra::{Isometry3, Matrix3, Point2, Point3, Translation3, UnitQuaternion, Vector3};

/// Pinhole intrinsics in pixels, no distortion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive (fx = {fx}, fy = {fy})"
            )));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    /// Warns when the principal point falls outside a `width x height` image.
    pub fn check_principal_point(&self, width: usize, height: usize) -> bool {
        let inside = (0.0..=width as f64).contains(&self.cx) && (0.0..=height as f64).contains(&self.cy);
        if !inside {
            log::warn!(
                "principal point ({}, {}) lies outside the {width}x{height} image",
                self.cx,
                self.cy
            );
        }
        inside
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a point given in the camera frame.
    pub fn project(&self, p: &Vector3<f64>) -> Point2<f64> {
        Point2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Homogeneous normalized coordinates `(x, y, 1)` of a pixel.
    pub fn normalize(&self, px: &Point2<f64>) -> Vector3<f64> {
        Vector3::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy, 1.0)
    }
}

/// World-from-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    /// Camera center in world coordinates.
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Pose {
            rotation: iso.rotation,
            translation: iso.translation.vector,
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.translation)
    }

    pub fn inverse(&self) -> Pose {
        Pose::from_isometry(&self.to_isometry().inverse())
    }

    /// `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::from_isometry(&(self.to_isometry() * other.to_isometry()))
    }

    /// Maps a camera-frame point to world coordinates.
    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps a world point into this camera's frame.
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn is_normalized(&self) -> bool {
        (self.rotation.as_ref().norm() - 1.0).abs() < 1e-9
    }
}

/// Dense per-pixel 3D points in a camera's local frame.
///
/// A pixel is invalid when any coordinate is non-finite.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMap {
    pub width: usize,
    pub height: usize,
    /// Row-major `[x, y, z]` per pixel.
    pub points: Vec<[f64; 3]>,
    pub confidence: Vec<f64>,
}

impl PointMap {
    pub fn new(width: usize, height: usize, points: Vec<[f64; 3]>, confidence: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if points.len() != n || confidence.len() != n {
            return Err(Error::Dimension(format!(
                "pointmap {width}x{height} needs {n} points and confidences, got {} and {}",
                points.len(),
                confidence.len()
            )));
        }
        if let Some(c) = confidence.iter().find(|c| **c < 0.0) {
            return Err(Error::InvalidArgument(format!("negative confidence {c}")));
        }
        Ok(PointMap {
            width,
            height,
            points,
            confidence,
        })
    }

    /// All pixels invalid.
    pub fn empty(width: usize, height: usize) -> Self {
        PointMap {
            width,
            height,
            points: vec![[f64::NAN; 3]; width * height],
            confidence: vec![0.0; width * height],
        }
    }

    pub fn set(&mut self, x: usize, y: usize, p: Vector3<f64>, confidence: f64) {
        let i = y * self.width + x;
        self.points[i] = [p.x, p.y, p.z];
        self.confidence[i] = confidence;
    }

    /// Point and confidence at an integer pixel, `None` if invalid or out of
    /// bounds.
    pub fn get(&self, x: usize, y: usize) -> Option<(Vector3<f64>, f64)> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let i = y * self.width + x;
        let [px, py, pz] = self.points[i];
        if px.is_finite() && py.is_finite() && pz.is_finite() {
            Some((Vector3::new(px, py, pz), self.confidence[i]))
        } else {
            None
        }
    }

    /// Lookup at the pixel nearest to a sub-pixel location.
    pub fn sample(&self, p: &Point2<f64>) -> Option<(Vector3<f64>, f64)> {
        let (x, y) = (p.x.round(), p.y.round());
        if x < 0.0 || y < 0.0 {
            return None;
        }
        self.get(x as usize, y as usize)
    }

    pub fn valid_count(&self) -> usize {
        (0..self.width * self.height)
            .filter(|&i| self.points[i].iter().all(|v| v.is_finite()))
            .count()
    }
}
