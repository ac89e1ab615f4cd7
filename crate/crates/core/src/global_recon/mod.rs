//! Global reconstruction: register per-pair pointmaps into one world frame,
//! then refine cameras, intrinsics and points by bundle adjustment.

mod bundle;
mod coarse;
mod sim3;

pub use bundle::{
    bundle_adjust, project_with_jacobians, BundleOptions, BundleReport, LinearSolver, ProjectionJacobians,
};
pub use coarse::{coarse_align, CoarseAlignment, CoarseOptions, PairPrediction};
pub use sim3::{estimate_sim3_weighted, Sim3};

use crate::geometry::{Intrinsics, Pose};
use nalgebra::{Point2, Vector3};

/// A pixel measurement of a track in one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub image: usize,
    pub pixel: Point2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub position: Vector3<f64>,
    pub observations: Vec<Observation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub poses: Vec<Pose>,
    pub intrinsics: Vec<Intrinsics>,
    pub points: Vec<Track>,
    /// Scale taking each image's local pointmap into the world frame.
    pub scales: Vec<f64>,
}

impl Reconstruction {
    pub fn observation_count(&self) -> usize {
        self.points.iter().map(|t| t.observations.len()).sum()
    }

    /// Root-mean-square reprojection error over all observations, pixels.
    pub fn reprojection_rmse(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in &self.points {
            for o in &t.observations {
                let cam = self.poses[o.image].to_camera(&t.position);
                let px = self.intrinsics[o.image].project(&cam);
                sum += (px - o.pixel).norm_squared();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }
}
