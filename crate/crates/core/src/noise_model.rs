//! Per-channel Poisson–Gaussian noise: calibration from mean–variance pairs
//! and synthesis of noisy frames at a requested SNR.
//!
//! The model is `var = a * mu + b` in DN, with `a` the shot-noise slope and
//! `b` the read-noise floor.

use crate::error::{Error, Result};
use crate::raw_pipeline::LinearImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelNoise {
    /// Signal-dependent slope (DN per DN).
    pub a: f64,
    /// Signal-independent variance (DN^2).
    pub b: f64,
}

impl ChannelNoise {
    pub fn variance(&self, mean: f64) -> f64 {
        (self.a * mean + self.b).max(0.0)
    }
}

/// One `(a, b)` pair per color channel.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseParams {
    pub channels: Vec<ChannelNoise>,
}

impl NoiseParams {
    pub fn uniform(a: f64, b: f64, channels: usize) -> Self {
        NoiseParams {
            channels: vec![ChannelNoise { a, b }; channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::InvalidArgument("noise model has no channels".into()));
        }
        for (c, p) in self.channels.iter().enumerate() {
            if !(p.a >= 0.0 && p.b >= 0.0 && p.a.is_finite() && p.b.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "channel {c}: a = {}, b = {} must be finite and non-negative",
                    p.a, p.b
                )));
            }
        }
        Ok(())
    }

    /// True when at least one parameter is strictly positive in every channel.
    pub fn is_usable(&self) -> bool {
        self.channels.iter().all(|p| p.a > 0.0 || p.b > 0.0)
    }

    /// Parameters for image channel `c`; a single-channel model is broadcast.
    pub fn for_channel(&self, c: usize) -> ChannelNoise {
        if self.channels.len() == 1 {
            self.channels[0]
        } else {
            self.channels[c]
        }
    }

    fn check_image(&self, img: &LinearImage) -> Result<()> {
        self.validate()?;
        if self.channels.len() != 1 && self.channels.len() != img.channels {
            return Err(Error::Shape(format!(
                "noise model has {} channels, image has {}",
                self.channels.len(),
                img.channels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanVarSample {
    pub channel: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Result of [`calibrate`]. `clamped` lists channels where a negative fitted
/// coefficient was clamped to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub params: NoiseParams,
    pub clamped: Vec<usize>,
}

/// Least-squares fit of `variance = a * mean + b` for every channel present
/// in `samples`.
pub fn calibrate(samples: &[MeanVarSample]) -> Result<Calibration> {
    let n_channels = samples
        .iter()
        .map(|s| s.channel + 1)
        .max()
        .ok_or_else(|| Error::InsufficientData("no mean-variance samples".into()))?;
    let mut params = Vec::with_capacity(n_channels);
    let mut clamped = Vec::new();
    for c in 0..n_channels {
        let pts: Vec<(f64, f64)> = samples
            .iter()
            .filter(|s| s.channel == c)
            .map(|s| (s.mean, s.variance))
            .collect();
        if let Some(bad) = pts.iter().find(|(m, v)| !m.is_finite() || !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(format!("channel {c}: invalid sample {bad:?}")));
        }
        let n = pts.len() as f64;
        let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
        let distinct = pts.iter().any(|p| p.0 != pts[0].0);
        if pts.len() < 2 || !distinct || sxx <= 0.0 {
            return Err(Error::InsufficientData(format!(
                "channel {c} needs at least 2 samples with distinct means, got {}",
                pts.len()
            )));
        }
        let mut a = sxy / sxx;
        let mut b = mean_y - a * mean_x;
        if a < 0.0 || b < 0.0 {
            clamped.push(c);
            log::warn!("channel {c}: fitted a = {a}, b = {b}; clamping negative term to 0");
            if a < 0.0 {
                a = 0.0;
                b = mean_y.max(0.0);
            } else {
                // best slope through the origin
                let sxx0: f64 = pts.iter().map(|p| p.0 * p.0).sum();
                let sxy0: f64 = pts.iter().map(|p| p.0 * p.1).sum();
                b = 0.0;
                a = (sxy0 / sxx0).max(0.0);
            }
        }
        params.push(ChannelNoise { a, b });
    }
    Ok(Calibration {
        params: NoiseParams { channels: params },
        clamped,
    })
}

/// Model-predicted SNR (dB) of `scale * clean` under `params`:
/// `10 log10(sum (s mu)^2 / sum (a s mu + b))`.
pub fn predicted_snr(clean: &LinearImage, params: &NoiseParams, scale: f64) -> Result<f64> {
    params.check_image(clean)?;
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let mut signal = 0.0;
    let mut noise = 0.0;
    for c in 0..clean.channels {
        let p = params.for_channel(c);
        for &mu in clean.plane(c) {
            let m = scale * mu;
            signal += m * m;
            noise += p.variance(m);
        }
    }
    if signal == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// How noise samples are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseSampling {
    /// Heteroscedastic Gaussian `N(mu, a mu + b)`.
    #[default]
    Gaussian,
    /// `a * Poisson(mu / a) + N(0, sqrt(b))`.
    PoissonGaussian,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthesisOptions {
    pub sampling: NoiseSampling,
    /// Clamp output samples to `[0, white_level]` when set.
    pub clip_to: Option<f64>,
    /// Bracket for the brightness scale search.
    pub scale_bounds: (f64, f64),
    /// Bisection stops once the predicted SNR is this close to the target.
    pub tolerance_db: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            sampling: NoiseSampling::Gaussian,
            clip_to: None,
            scale_bounds: (1e-6, 1e6),
            tolerance_db: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub image: LinearImage,
    /// Brightness scale applied to the clean frame.
    pub scale: f64,
}

/// Scale `s` such that `predicted_snr(clean, params, s) == target_db`, found
/// by bisection on `log s`.
pub fn solve_scale(
    clean: &LinearImage,
    params: &NoiseParams,
    target_db: f64,
    opts: &SynthesisOptions,
) -> Result<f64> {
    let (lo, hi) = opts.scale_bounds;
    let snr_lo = predicted_snr(clean, params, lo)?;
    let snr_hi = predicted_snr(clean, params, hi)?;
    if snr_lo == f64::INFINITY && snr_hi == f64::INFINITY {
        // noiseless model: every scale has infinite SNR
        return Ok(1.0);
    }
    if !(target_db >= snr_lo && target_db <= snr_hi) {
        return Err(Error::UnreachableSnr {
            target_db,
            min_db: snr_lo,
            max_db: snr_hi,
        });
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut mid = 0.5 * (a + b);
    for _ in 0..200 {
        mid = 0.5 * (a + b);
        let snr = predicted_snr(clean, params, mid.exp())?;
        if (snr - target_db).abs() < opts.tolerance_db {
            break;
        }
        if snr < target_db {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(mid.exp())
}

/// Uniform-in-dB draw of a target SNR from `[lo, hi]`.
pub fn sample_target_snr(lo: f64, hi: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.min(hi)..lo.max(hi))
}

/// Scales `clean` (DN) to hit `target_db` under the model, then adds noise.
///
/// Each sample draws from its own ChaCha stream keyed by `(seed, index)`, so
/// output does not depend on thread count or scheduling.
pub fn synthesize(
    clean: &LinearImage,
    params: &NoiseParams,
    target_db: f64,
    seed: u64,
    opts: &SynthesisOptions,
) -> Result<Synthesis> {
    let scale = solve_scale(clean, params, target_db, opts)?;
    let base = ChaCha8Rng::seed_from_u64(seed);
    let n = clean.pixels();
    let mut out = clean.scaled(scale);
    out.no_clip = opts.clip_to.is_none();
    out.data.par_iter_mut().enumerate().for_each(|(i, v)| {
        let p = params.for_channel(i / n.max(1));
        let mut rng = base.clone();
        rng.set_stream(i as u64);
        let mu = *v;
        let mut x = match opts.sampling {
            NoiseSampling::Gaussian => {
                let z: f64 = StandardNormal.sample(&mut rng);
                mu + p.variance(mu).sqrt() * z
            }
            NoiseSampling::PoissonGaussian => {
                let shot = if p.a > 0.0 && mu > 0.0 {
                    let count: f64 = Poisson::new(mu / p.a)
                        .map(|d| d.sample(&mut rng))
                        .unwrap_or(mu / p.a);
                    p.a * count
                } else {
                    mu
                };
                let z: f64 = StandardNormal.sample(&mut rng);
                shot + p.b.sqrt() * z
            }
        };
        if let Some(white) = opts.clip_to {
            x = x.clamp(0.0, white);
        }
        *v = x;
    });
    Ok(Synthesis { image: out, scale })
}
