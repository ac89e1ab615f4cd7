//! Trajectory, depth and photometric metrics.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::global_recon::{estimate_sim3_weighted, Sim3};
use crate::raw_pipeline::LinearImage;
use std::collections::HashMap;

/// Sums with pairwise splitting, so the result does not depend on how the
/// caller batches work and rounding error grows logarithmically.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 64 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Named camera poses (world-from-camera) in sequence order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub entries: Vec<(String, Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(String, Pose)>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (k, (name, _)) in entries.iter().enumerate() {
            if let Some(prev) = seen.insert(name.as_str(), k) {
                return Err(Error::InvalidArgument(format!(
                    "pose name {name:?} appears at entries {prev} and {k}"
                )));
            }
        }
        Ok(Trajectory { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Pose> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    fn index(&self) -> HashMap<&str, &Pose> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p)).collect()
    }

    /// Pairs of poses sharing a name, in `reference` order.
    fn common<'a>(&'a self, reference: &'a Trajectory) -> Vec<(&'a Pose, &'a Pose)> {
        let own = self.index();
        reference
            .entries
            .iter()
            .filter_map(|(n, r)| own.get(n.as_str()).map(|e| (*e, r)))
            .collect()
    }
}

/// Similarity taking the estimated camera centers onto the reference ones,
/// and the whole estimate moved by it.
pub fn align_sim3(est: &Trajectory, reference: &Trajectory) -> Result<(Sim3, Trajectory)> {
    let pairs = est.common(reference);
    if pairs.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} common poses; alignment needs at least 3",
            pairs.len()
        )));
    }
    let src: Vec<_> = pairs.iter().map(|(e, _)| e.translation).collect();
    let dst: Vec<_> = pairs.iter().map(|(_, r)| r.translation).collect();
    let t = estimate_sim3_weighted(&src, &dst, &vec![1.0; src.len()])?;
    let aligned = Trajectory {
        entries: est.entries.iter().map(|(n, p)| (n.clone(), t.transform_pose(p))).collect(),
    };
    Ok((t, aligned))
}

/// RMS camera-center distance over common names.
pub fn ate(est_aligned: &Trajectory, reference: &Trajectory) -> Result<f64> {
    let pairs = est_aligned.common(reference);
    if pairs.is_empty() {
        return Err(Error::InsufficientData("trajectories share no pose names".into()));
    }
    let sq: Vec<f64> = pairs
        .iter()
        .map(|(e, r)| (e.translation - r.translation).norm_squared())
        .collect();
    Ok((pairwise_sum(&sq) / sq.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RpeReduction {
    #[default]
    Rmse,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RpeOptions {
    /// Frame offset between the two poses of each relative motion.
    pub stride: usize,
    pub reduction: RpeReduction,
}

impl Default for RpeOptions {
    fn default() -> Self {
        RpeOptions {
            stride: 1,
            reduction: RpeReduction::Rmse,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rpe {
    pub translation: f64,
    pub rotation_deg: f64,
}

/// Relative pose error over frames `stride` apart in the reference order.
pub fn rpe(est_aligned: &Trajectory, reference: &Trajectory, opts: &RpeOptions) -> Result<Rpe> {
    if opts.stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let pairs = est_aligned.common(reference);
    if pairs.len() <= opts.stride {
        return Err(Error::InsufficientData(format!(
            "{} common poses; stride {} needs at least {}",
            pairs.len(),
            opts.stride,
            opts.stride + 1
        )));
    }
    let mut trans = Vec::new();
    let mut rot = Vec::new();
    for k in 0..pairs.len() - opts.stride {
        let (e0, r0) = pairs[k];
        let (e1, r1) = pairs[k + opts.stride];
        let rel_ref = r0.inverse().compose(r1);
        let rel_est = e0.inverse().compose(e1);
        let delta = rel_ref.inverse().compose(&rel_est);
        trans.push(delta.translation.norm());
        rot.push(delta.rotation.angle().to_degrees());
    }
    let reduce = |v: &[f64]| match opts.reduction {
        RpeReduction::Rmse => {
            let sq: Vec<f64> = v.iter().map(|x| x * x).collect();
            (pairwise_sum(&sq) / v.len() as f64).sqrt()
        }
        RpeReduction::Mean => pairwise_sum(v) / v.len() as f64,
    };
    Ok(Rpe {
        translation: reduce(&trans),
        rotation_deg: reduce(&rot),
    })
}

/// Predicted and reference depth maps of equal size. A pixel counts when the
/// mask allows it, the reference is positive and both values are finite.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthPair {
    pub pred: Vec<f64>,
    pub reference: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

impl DepthPair {
    pub fn new(pred: Vec<f64>, reference: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        if pred.len() != reference.len() || mask.as_ref().is_some_and(|m| m.len() != pred.len()) {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, reference {}",
                pred.len(),
                reference.len()
            )));
        }
        Ok(DepthPair { pred, reference, mask })
    }

    fn valid(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
            && self.reference[i] > 0.0
            && self.reference[i].is_finite()
            && self.pred[i].is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthMetrics {
    pub absrel: f64,
    /// Fraction of pixels whose depth ratio is strictly below 1.25.
    pub delta125: f64,
    pub valid: usize,
}

/// The ratio test is evaluated as `pred < 1.25 ref && ref < 1.25 pred`, which
/// keeps a prediction of exactly `1.25 * ref` outside the threshold.
pub fn depth_metrics(d: &DepthPair) -> Result<DepthMetrics> {
    let mut rel = Vec::new();
    let mut hits = 0usize;
    for i in 0..d.pred.len() {
        if !d.valid(i) {
            continue;
        }
        let (p, r) = (d.pred[i], d.reference[i]);
        rel.push((p - r).abs() / r);
        if p < 1.25 * r && r < 1.25 * p {
            hits += 1;
        }
    }
    if rel.is_empty() {
        return Err(Error::InsufficientData("no valid depth pixels".into()));
    }
    Ok(DepthMetrics {
        absrel: pairwise_sum(&rel) / rel.len() as f64,
        delta125: hits as f64 / rel.len() as f64,
        valid: rel.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelAlignment {
    pub scale: f64,
    pub shift: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per channel `s * pred + shift` with `shift = med(ref) - s * med(pred)` and
/// `s` the median ratio of absolute deviations from the medians.
pub fn align_channels_median(pred: &LinearImage, reference: &LinearImage) -> Result<(LinearImage, Vec<ChannelAlignment>)> {
    if !pred.same_shape(reference) {
        return Err(Error::Shape(format!(
            "prediction {}x{}x{} vs reference {}x{}x{}",
            pred.width, pred.height, pred.channels, reference.width, reference.height, reference.channels
        )));
    }
    if pred.pixels() == 0 {
        return Err(Error::InsufficientData("empty image".into()));
    }
    let mut out = pred.clone();
    let mut params = Vec::with_capacity(pred.channels);
    for c in 0..pred.channels {
        let (p, r) = (pred.plane(c), reference.plane(c));
        let med_p = median(&mut p.to_vec());
        let med_r = median(&mut r.to_vec());
        let tiny = f64::EPSILON * p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut ratios: Vec<f64> = p
            .iter()
            .zip(r)
            .filter(|(pv, _)| (*pv - med_p).abs() > tiny)
            .map(|(pv, rv)| (rv - med_r).abs() / (pv - med_p).abs())
            .collect();
        let scale = if ratios.is_empty() {
            log::warn!("channel {c} of the prediction is constant; aligning by shift only");
            1.0
        } else {
            median(&mut ratios)
        };
        let shift = med_r - scale * med_p;
        for v in out.plane_mut(c) {
            *v = scale * *v + shift;
        }
        params.push(ChannelAlignment { scale, shift });
    }
    Ok((out, params))
}

/// `10 log10(peak^2 / MSE)`; `+inf` for identical images.
pub fn psnr(pred: &LinearImage, reference: &LinearImage, peak: f64) -> Result<f64> {
    if !pred.same_shape(reference) {
        return Err(Error::Shape("PSNR needs images of equal shape".into()));
    }
    if pred.data.is_empty() {
        return Err(Error::InsufficientData("empty image".into()));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("peak {peak} must be positive")));
    }
    let sq: Vec<f64> = pred.data.iter().zip(&reference.data).map(|(a, b)| (a - b) * (a - b)).collect();
    let mse = pairwise_sum(&sq) / sq.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}
