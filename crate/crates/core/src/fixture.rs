//! Deterministic synthetic data: a smooth textured test image and a ring of
//! cameras around a ball of points, with everything the reconstruction
//! stages consume derived from it.

use crate::geometry::{Intrinsics, PointMap, Pose};
use crate::global_recon::{estimate_sim3_weighted, Observation, PairPrediction, Reconstruction, Track};
use crate::matching::{Correspondence, FeatureMap};
use crate::raw_pipeline::LinearImage;
use crate::scene_graph::SceneGraph;
use nalgebra::{Matrix3, Point2, Rotation3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::TAU;

/// Three-channel image in sensor-like units (roughly 0 to 1000) built from
/// gradients, soft blobs and fine texture.
pub fn natural_image(width: usize, height: usize, seed: u64) -> LinearImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.05..0.3),
                [rng.random_range(0.0..600.0), rng.random_range(0.0..600.0), rng.random_range(0.0..600.0)],
            )
        })
        .collect();
    let freq = [rng.random_range(20.0..40.0), rng.random_range(20.0..40.0)];
    let tint = [1.0, 0.8, 0.6];
    LinearImage::from_fn(width, height, 3, |c, x, y| {
        let u = x as f64 / width.max(1) as f64;
        let v = y as f64 / height.max(1) as f64;
        let mut val = 80.0 + 200.0 * u * tint[c] + 120.0 * v;
        for (bx, by, r, amp) in &blobs {
            let d2 = (u - bx).powi(2) + (v - by).powi(2);
            val += amp[c] * (-d2 / (r * r)).exp();
        }
        val + 30.0 * (freq[0] * u).sin() * (freq[1] * v).cos()
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RingSceneConfig {
    pub cameras: usize,
    pub points: usize,
    /// Radius of the camera ring.
    pub radius: f64,
    /// Radius of the ball the points are drawn from.
    pub extent: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub seed: u64,
}

impl Default for RingSceneConfig {
    fn default() -> Self {
        RingSceneConfig {
            cameras: 10,
            points: 500,
            radius: 5.0,
            extent: 1.5,
            width: 256,
            height: 192,
            focal: 240.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseErrors {
    /// RMS camera-center error after similarity alignment.
    pub ate: f64,
    pub max_center: f64,
    /// Largest rotation error after alignment, radians.
    pub max_rotation: f64,
}

/// Cameras on a ring looking at the origin, every point visible everywhere.
#[derive(Clone, Debug)]
pub struct RingScene {
    pub config: RingSceneConfig,
    /// World-from-camera.
    pub poses: Vec<Pose>,
    pub intrinsics: Vec<Intrinsics>,
    pub points: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
    unit_noise: Vec<Vec<Vector2<f64>>>,
    edge_scales: Vec<f64>,
}

fn look_at_origin(center: Vector3<f64>) -> UnitQuaternion<f64> {
    let z = (-center).normalize();
    let up = Vector3::new(0.0, -1.0, 0.0);
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z])))
}

impl RingScene {
    pub fn generate(config: &RingSceneConfig) -> RingScene {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.cameras;
        let poses: Vec<Pose> = (0..n)
            .map(|k| {
                let theta = TAU * k as f64 / n as f64;
                let c = Vector3::new(
                    config.radius * theta.cos(),
                    0.1 * config.radius * (2.0 * theta).sin(),
                    config.radius * theta.sin(),
                );
                Pose::new(look_at_origin(c), c)
            })
            .collect();
        let intrinsics = vec![
            Intrinsics {
                fx: config.focal,
                fy: config.focal,
                cx: config.width as f64 / 2.0,
                cy: config.height as f64 / 2.0,
            };
            n
        ];
        let mut points = Vec::with_capacity(config.points);
        while points.len() < config.points {
            let p = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            if p.norm() <= 1.0 {
                points.push(p * config.extent);
            }
        }
        let colors = (0..config.points)
            .map(|_| [rng.random_range(0.1..1.0), rng.random_range(0.1..1.0), rng.random_range(0.1..1.0)])
            .collect();
        let unit_noise = (0..n)
            .map(|_| {
                (0..config.points)
                    .map(|_| Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                    .collect()
            })
            .collect();
        let edge_scales = (0..n * n).map(|_| rng.random_range(0.5..2.0)).collect();
        RingScene {
            config: *config,
            poses,
            intrinsics,
            points,
            colors,
            unit_noise,
            edge_scales,
        }
    }

    pub fn camera_point(&self, image: usize, point: usize) -> Vector3<f64> {
        self.poses[image].to_camera(&self.points[point])
    }

    /// Projection of `point` into `image`, displaced by `sigma` pixels of the
    /// fixed per-observation Gaussian noise.
    pub fn observed_pixel(&self, image: usize, point: usize, sigma: f64) -> Point2<f64> {
        self.intrinsics[image].project(&self.camera_point(image, point)) + sigma * self.unit_noise[image][point]
    }

    fn visible(&self, p: &Point2<f64>) -> bool {
        let (w, h) = (self.config.width as f64, self.config.height as f64);
        p.x.round() >= 0.0 && p.y.round() >= 0.0 && p.x.round() < w && p.y.round() < h
    }

    /// Ground-truth reconstruction with observations at `sigma` pixel noise.
    pub fn reconstruction(&self, sigma: f64) -> Reconstruction {
        let n = self.poses.len();
        let points = self
            .points
            .iter()
            .enumerate()
            .map(|(j, x)| Track {
                position: *x,
                observations: (0..n)
                    .map(|i| Observation {
                        image: i,
                        pixel: self.observed_pixel(i, j, sigma),
                    })
                    .filter(|o| self.visible(&o.pixel))
                    .collect(),
            })
            .collect();
        Reconstruction {
            poses: self.poses.clone(),
            intrinsics: self.intrinsics.clone(),
            points,
            scales: vec![1.0; n],
        }
    }

    /// Local pointmaps and matches for every graph edge. Each pair's
    /// pointmaps cover every point visible in the image, in exact camera-frame
    /// coordinates sharing one random scale,
    /// stored at the rounded observed pixels; matches carry `sigma` pixel
    /// noise. When points share a rounded pixel in some image, only the
    /// first keeps it, in every pair involving that image.
    /// The edge named by `corrupt` gets a random second pointmap.
    pub fn pair_predictions(&self, graph: &SceneGraph, sigma: f64, corrupt: Option<(usize, usize)>) -> Vec<PairPrediction> {
        let (w, h) = (self.config.width, self.config.height);
        let n = self.poses.len();
        let owns: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                let mut taken = vec![false; w * h];
                (0..self.points.len())
                    .map(|k| {
                        let p = self.observed_pixel(i, k, sigma);
                        if !self.visible(&p) {
                            return false;
                        }
                        let idx = p.y.round() as usize * w + p.x.round() as usize;
                        !std::mem::replace(&mut taken[idx], true)
                    })
                    .collect()
            })
            .collect();
        graph
            .edges
            .iter()
            .map(|e| {
                let s = self.edge_scales[e.i * n + e.j];
                let mut pm_i = PointMap::empty(w, h);
                let mut pm_j = PointMap::empty(w, h);
                let mut matches = Vec::new();
                for k in 0..self.points.len() {
                    let (a, b) = (self.observed_pixel(e.i, k, sigma), self.observed_pixel(e.j, k, sigma));
                    if owns[e.i][k] {
                        pm_i.set(a.x.round() as usize, a.y.round() as usize, s * self.camera_point(e.i, k), 1.0);
                    }
                    if owns[e.j][k] {
                        pm_j.set(b.x.round() as usize, b.y.round() as usize, s * self.camera_point(e.j, k), 1.0);
                    }
                    if owns[e.i][k] && owns[e.j][k] {
                        matches.push(Correspondence::new(a, b, 1.0));
                    }
                }
                if corrupt == Some((e.i, e.j)) {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed);
                    for q in pm_j.points.iter_mut() {
                        if q[0].is_finite() {
                            *q = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(2.0..8.0)];
                        }
                    }
                }
                PairPrediction {
                    i: e.i,
                    j: e.j,
                    pointmap_i: pm_i,
                    pointmap_j: pm_j,
                    matches,
                }
            })
            .collect()
    }

    /// Tiny global descriptors whose pooled cosine similarity decreases with
    /// ring distance.
    pub fn global_features(&self) -> Vec<FeatureMap> {
        let n = self.poses.len();
        (0..n)
            .map(|k| {
                let theta = TAU * k as f64 / n as f64;
                let d = [1.0, theta.cos(), theta.sin()];
                let data = (0..4).flat_map(|_| d).collect();
                FeatureMap::new(2, 2, 3, data).expect("valid shape")
            })
            .collect()
    }

    /// Renders each point as a single coloured pixel on a dark background.
    pub fn render(&self, image: usize) -> LinearImage {
        let (w, h) = (self.config.width, self.config.height);
        let mut img = LinearImage::zeros(w, h, 3);
        for (k, color) in self.colors.iter().enumerate() {
            let p = self.observed_pixel(image, k, 0.0);
            if self.visible(&p) {
                for (c, v) in color.iter().enumerate() {
                    img.set(c, p.x.round() as usize, p.y.round() as usize, *v);
                }
            }
        }
        img
    }

    /// Largest distance between any two cameras or points.
    pub fn diameter(&self) -> f64 {
        let all: Vec<Vector3<f64>> = self.poses.iter().map(|p| p.translation).chain(self.points.iter().copied()).collect();
        let mut best: f64 = 0.0;
        for (a, p) in all.iter().enumerate() {
            for q in &all[a + 1..] {
                best = best.max((p - q).norm());
            }
        }
        best
    }

    /// Errors of `estimate` after the best similarity onto the true centers.
    pub fn aligned_pose_errors(&self, estimate: &[Pose]) -> PoseErrors {
        let src: Vec<_> = estimate.iter().map(|p| p.translation).collect();
        let dst: Vec<_> = self.poses.iter().map(|p| p.translation).collect();
        let t = estimate_sim3_weighted(&src, &dst, &vec![1.0; src.len()]).expect("non-degenerate ring");
        let mut sq = 0.0;
        let mut max_center: f64 = 0.0;
        let mut max_rotation: f64 = 0.0;
        for (e, g) in estimate.iter().zip(&self.poses) {
            let moved = t.transform_pose(e);
            let d = (moved.translation - g.translation).norm();
            sq += d * d;
            max_center = max_center.max(d);
            max_rotation = max_rotation.max(moved.rotation.angle_to(&g.rotation));
        }
        PoseErrors {
            ate: (sq / estimate.len() as f64).sqrt(),
            max_center,
            max_rotation,
        }
    }
}
