//! Dense descriptor maps, one-shot reciprocal nearest-neighbour matching and
//! the symmetric epipolar distance used to score correspondences.

use crate::error::{Error, Result};
use crate::raw_pipeline::LinearImage;
use nalgebra::{Matrix3, Point2, Vector3};
use rayon::prelude::*;
use std::cmp::Ordering;

/// Per-pixel descriptors, pixel-major (`dim` consecutive values per pixel,
/// pixels in row-major order).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub confidence: Option<Vec<f64>>,
    /// Every non-degenerate descriptor has unit L2 norm.
    pub normalized: bool,
}

impl FeatureMap {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * dim {
            return Err(Error::Dimension(format!(
                "feature payload has {} values, expected {width}x{height}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature map contains non-finite values".into()));
        }
        Ok(FeatureMap {
            width,
            height,
            dim,
            data,
            confidence: None,
            normalized: false,
        })
    }

    pub fn with_confidence(mut self, confidence: Vec<f64>) -> Result<Self> {
        if confidence.len() != self.width * self.height {
            return Err(Error::Dimension("confidence plane size mismatch".into()));
        }
        if confidence.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidArgument("confidence must lie in [0, 1]".into()));
        }
        self.confidence = Some(confidence);
        Ok(self)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn descriptor(&self, pixel: usize) -> &[f64] {
        &self.data[pixel * self.dim..(pixel + 1) * self.dim]
    }

    pub fn descriptor_at(&self, x: usize, y: usize) -> &[f64] {
        self.descriptor(y * self.width + x)
    }

    /// A zero descriptor carries no information and never matches.
    pub fn is_degenerate(&self, pixel: usize) -> bool {
        self.descriptor(pixel).iter().all(|&v| v == 0.0)
    }

    /// L2-normalizes every non-zero descriptor in place.
    pub fn normalize(&mut self) {
        for d in self.data.chunks_mut(self.dim.max(1)) {
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                d.iter_mut().for_each(|v| *v /= n);
            }
        }
        self.normalized = true;
    }

    /// Checks the unit-norm invariant when the normalized flag is set.
    pub fn check_normalized(&self) -> Result<()> {
        if !self.normalized {
            return Ok(());
        }
        for p in 0..self.pixels() {
            if self.is_degenerate(p) {
                continue;
            }
            let n = self.descriptor(p).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidArgument(format!("descriptor {p} has norm {n}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub p1: Point2<f64>,
    pub p2: Point2<f64>,
    pub score: f64,
}

impl Correspondence {
    pub fn new(p1: Point2<f64>, p2: Point2<f64>, score: f64) -> Self {
        Correspondence { p1, p2, score }
    }

    pub fn swapped(&self) -> Self {
        Correspondence::new(self.p2, self.p1, self.score)
    }
}

struct Grid {
    pixels: Vec<usize>,
    coords: Vec<(usize, usize)>,
    units: Vec<f64>,
}

fn unit_grid(f: &FeatureMap, step: usize) -> Grid {
    let mut grid = Grid {
        pixels: Vec::new(),
        coords: Vec::new(),
        units: Vec::new(),
    };
    for y in (0..f.height).step_by(step) {
        for x in (0..f.width).step_by(step) {
            let p = y * f.width + x;
            let d = f.descriptor(p);
            let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                continue;
            }
            grid.pixels.push(p);
            grid.coords.push((x, y));
            grid.units.extend(d.iter().map(|v| v / n));
        }
    }
    grid
}

/// Best match in `to` for every descriptor in `from`; ties go to the lower
/// grid index.
fn nearest(from: &Grid, to: &Grid, dim: usize) -> Vec<Option<(usize, f64)>> {
    (0..from.pixels.len())
        .into_par_iter()
        .map(|i| {
            let q = &from.units[i * dim..(i + 1) * dim];
            let mut best: Option<(usize, f64)> = None;
            for j in 0..to.pixels.len() {
                let c = &to.units[j * dim..(j + 1) * dim];
                let s: f64 = q.iter().zip(c).map(|(a, b)| a * b).sum();
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((j, s));
                }
            }
            best
        })
        .collect()
}

/// Mutual nearest neighbours under cosine similarity over both maps'
/// `subsample`-strided grids, sorted by descending score (ties by pixel
/// index in image 1, then image 2).
pub fn reciprocal_match(f1: &FeatureMap, f2: &FeatureMap, subsample: usize) -> Result<Vec<Correspondence>> {
    if f1.dim != f2.dim {
        return Err(Error::Shape(format!("descriptor dims differ: {} vs {}", f1.dim, f2.dim)));
    }
    if subsample == 0 {
        return Err(Error::InvalidArgument("subsample must be positive".into()));
    }
    let g1 = unit_grid(f1, subsample);
    let g2 = unit_grid(f2, subsample);
    let fwd = nearest(&g1, &g2, f1.dim);
    let bwd = nearest(&g2, &g1, f1.dim);
    let mut pairs: Vec<(usize, usize, f64)> = fwd
        .iter()
        .enumerate()
        .filter_map(|(i, nn)| {
            let (j, s) = (*nn)?;
            (bwd[j].map(|b| b.0) == Some(i)).then_some((i, j, s))
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then(g1.pixels[a.0].cmp(&g1.pixels[b.0]))
            .then(g2.pixels[a.1].cmp(&g2.pixels[b.1]))
    });
    Ok(pairs
        .into_iter()
        .map(|(i, j, s)| {
            let (x1, y1) = g1.coords[i];
            let (x2, y2) = g2.coords[j];
            Correspondence::new(
                Point2::new(x1 as f64, y1 as f64),
                Point2::new(x2 as f64, y2 as f64),
                s,
            )
        })
        .collect())
}

/// Hand-crafted stand-in for learned descriptors: the mean-subtracted,
/// L2-normalized `patch x patch` gray window around each pixel.
///
/// Window positions outside the image contribute zeros and are excluded
/// from the mean. Windows without intensity variation give an all-zero
/// (degenerate) descriptor.
pub fn fallback_descriptors(img: &LinearImage, patch: usize) -> Result<FeatureMap> {
    if patch < 3 || patch.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("patch must be odd and >= 3, got {patch}")));
    }
    let gray = img.gray();
    let (w, h) = (img.width as isize, img.height as isize);
    let r = (patch / 2) as isize;
    let dim = patch * patch;
    let mut data = vec![0.0; img.pixels() * dim];
    data.par_chunks_mut(dim).enumerate().for_each(|(p, d)| {
        let (px, py) = ((p % img.width) as isize, (p / img.width) as isize);
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut scale = 0.0f64;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (px + dx, py + dy);
                if x >= 0 && y >= 0 && x < w && y < h {
                    let v = gray[(y * w + x) as usize];
                    sum += v;
                    count += 1;
                    scale = scale.max(v.abs());
                }
            }
        }
        let mean = sum / count as f64;
        let mut k = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (px + dx, py + dy);
                if x >= 0 && y >= 0 && x < w && y < h {
                    d[k] = gray[(y * w + x) as usize] - mean;
                }
                k += 1;
            }
        }
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-9 * scale * (count as f64).sqrt() || norm == 0.0 {
            d.iter_mut().for_each(|v| *v = 0.0);
        } else {
            d.iter_mut().for_each(|v| *v /= norm);
        }
    });
    let mut f = FeatureMap::new(img.width, img.height, dim, data)?;
    f.normalized = true;
    Ok(f)
}

fn point_line_distance(p: &Point2<f64>, line: &Vector3<f64>) -> f64 {
    let n = (line.x * line.x + line.y * line.y).sqrt();
    if n == 0.0 {
        return f64::INFINITY;
    }
    (line.x * p.x + line.y * p.y + line.z).abs() / n
}

/// Mean of the two perpendicular point-to-epipolar-line distances, in pixels:
/// `(d(p2, F p1) + d(p1, F^T p2)) / 2`. A line with zero normal gives `+inf`.
pub fn symmetric_epipolar_distance(c: &Correspondence, f: &Matrix3<f64>) -> f64 {
    let x1 = Vector3::new(c.p1.x, c.p1.y, 1.0);
    let x2 = Vector3::new(c.p2.x, c.p2.y, 1.0);
    let l2 = f * x1;
    let l1 = f.transpose() * x2;
    0.5 * (point_line_distance(&c.p2, &l2) + point_line_distance(&c.p1, &l1))
}
