//! Raw sensor ingestion: Bayer subsampling, area downsampling, a minimal ISP
//! and whole-image SNR.
//!
//! Samples are carried as `f64` normalized by the fixed 14-bit scale
//! `1 / (2^14 - 1)`. Black level is *not* subtracted during demosaicing; the
//! reconstruction path consumes unclipped raw-domain values and only the ISP
//! applies black-level subtraction.

use crate::error::{Error, Result};

/// Sensor bit depth assumed by the normalization scale.
pub const BIT_DEPTH: u32 = 14;

/// Largest code value at [`BIT_DEPTH`], `2^14 - 1`.
pub const MAX_CODE: f64 = ((1u32 << BIT_DEPTH) - 1) as f64;

/// Fixed normalization factor `(2^14 - 1)^-1` applied to every DN sample.
pub const NORMALIZATION_SCALE: f64 = 1.0 / MAX_CODE;

/// Color filter array layout of the top-left 2x2 quad.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CfaPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl CfaPattern {
    pub fn code(self) -> u32 {
        match self {
            CfaPattern::Rggb => 0,
            CfaPattern::Bggr => 1,
            CfaPattern::Grbg => 2,
            CfaPattern::Gbrg => 3,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(CfaPattern::Rggb),
            1 => Ok(CfaPattern::Bggr),
            2 => Ok(CfaPattern::Grbg),
            3 => Ok(CfaPattern::Gbrg),
            other => Err(Error::UnsupportedFormat(format!("unknown CFA code {other}"))),
        }
    }

    /// Color channel (0 = R, 1 = G, 2 = B) sensed at quad offset `(dx, dy)`.
    pub fn channel_at(self, dx: usize, dy: usize) -> usize {
        let layout = match self {
            CfaPattern::Rggb => [[0, 1], [1, 2]],
            CfaPattern::Bggr => [[2, 1], [1, 0]],
            CfaPattern::Grbg => [[1, 0], [2, 1]],
            CfaPattern::Gbrg => [[1, 2], [0, 1]],
        };
        layout[dy & 1][dx & 1]
    }
}

impl std::str::FromStr for CfaPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RGGB" => Ok(CfaPattern::Rggb),
            "BGGR" => Ok(CfaPattern::Bggr),
            "GRBG" => Ok(CfaPattern::Grbg),
            "GBRG" => Ok(CfaPattern::Gbrg),
            other => Err(Error::UnsupportedFormat(format!("unknown CFA pattern {other:?}"))),
        }
    }
}

/// A Bayer-mosaic sensor frame in digital numbers (DN).
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub cfa: CfaPattern,
    /// Row-major samples, one per photosite.
    pub data: Vec<u16>,
    /// Black level per color channel (R, G, B).
    pub black_level: [u16; 3],
    pub white_level: u16,
    /// Exposure time in seconds.
    pub exposure_time: f64,
    pub iso: u32,
}

impl RawImage {
    /// Builds a raw frame, checking the mosaic invariants.
    pub fn new(
        width: usize,
        height: usize,
        cfa: CfaPattern,
        data: Vec<u16>,
        black_level: [u16; 3],
        white_level: u16,
    ) -> Result<Self> {
        let raw = RawImage {
            width,
            height,
            cfa,
            data,
            black_level,
            white_level,
            exposure_time: 0.0,
            iso: 0,
        };
        raw.validate()?;
        Ok(raw)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.width.is_multiple_of(2) || !self.height.is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "raw frame {}x{} is not made of full Bayer quads",
                self.width, self.height
            )));
        }
        if self.data.len() != self.width * self.height {
            return Err(Error::Dimension(format!(
                "raw payload has {} samples, expected {}",
                self.data.len(),
                self.width * self.height
            )));
        }
        if self.black_level.iter().any(|&b| b >= self.white_level) {
            return Err(Error::InvalidArgument(format!(
                "black level {:?} must be below white level {}",
                self.black_level, self.white_level
            )));
        }
        if let Some(pos) = self.data.iter().position(|&v| v > self.white_level) {
            return Err(Error::InvalidArgument(format!(
                "sample {pos} = {} exceeds white level {}",
                self.data[pos], self.white_level
            )));
        }
        Ok(())
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }
}

/// Planar floating-point image (channel-major, then row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
    /// Set when samples may be negative because black level was subtracted
    /// without clipping.
    pub no_clip: bool,
}

impl LinearImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Dimension(format!(
                "payload has {} samples, expected {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(LinearImage {
            width,
            height,
            channels,
            data,
            no_clip: false,
        })
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        LinearImage {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
            no_clip: false,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut img = Self::zeros(width, height, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.data[(c * height + y) * width + x] = f(c, x, y);
                }
            }
        }
        img
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[self.index(c, x, y)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        let i = self.index(c, x, y);
        self.data[i] = v;
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &LinearImage) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Multiplies every sample by `k`.
    pub fn scaled(&self, k: f64) -> LinearImage {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= k);
        out
    }

    /// Mean over channels, used as the gray intensity of a pixel.
    pub fn gray(&self) -> Vec<f64> {
        let n = self.pixels();
        let mut g = vec![0.0; n];
        for c in 0..self.channels {
            for (acc, v) in g.iter_mut().zip(self.plane(c)) {
                *acc += v;
            }
        }
        let k = 1.0 / self.channels.max(1) as f64;
        g.iter_mut().for_each(|v| *v *= k);
        g
    }
}

/// Half-resolution RGB by strict subsampling of each Bayer quad.
///
/// R and B come straight from their sites, G is the mean of the two green
/// sites. Values are normalized by [`NORMALIZATION_SCALE`]; no black level is
/// removed.
pub fn demosaic_subsample(raw: &RawImage) -> Result<LinearImage> {
    raw.validate()?;
    let (w, h) = (raw.width / 2, raw.height / 2);
    let mut out = LinearImage::zeros(w, h, 3);
    for qy in 0..h {
        for qx in 0..w {
            let mut sums = [0.0f64; 3];
            let mut counts = [0u32; 3];
            for dy in 0..2 {
                for dx in 0..2 {
                    let ch = raw.cfa.channel_at(dx, dy);
                    sums[ch] += raw.get(2 * qx + dx, 2 * qy + dy) as f64;
                    counts[ch] += 1;
                }
            }
            for ch in 0..3 {
                out.set(ch, qx, qy, sums[ch] / counts[ch] as f64 * NORMALIZATION_SCALE);
            }
        }
    }
    Ok(out)
}

/// Area downsampling: every output sample is the mean of a `factor x factor`
/// input block.
pub fn downsample_area(img: &LinearImage, factor: usize) -> Result<LinearImage> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be positive".into()));
    }
    if !img.width.is_multiple_of(factor) || !img.height.is_multiple_of(factor) {
        return Err(Error::Dimension(format!(
            "{}x{} is not divisible by factor {factor}",
            img.width, img.height
        )));
    }
    let (w, h) = (img.width / factor, img.height / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = LinearImage::zeros(w, h, img.channels);
    out.no_clip = img.no_clip;
    for c in 0..img.channels {
        let src = img.plane(c);
        let dst = out.plane_mut(c);
        for oy in 0..h {
            for ox in 0..w {
                let mut acc = 0.0;
                for y in oy * factor..(oy + 1) * factor {
                    let row = &src[y * img.width + ox * factor..y * img.width + (ox + 1) * factor];
                    acc += row.iter().sum::<f64>();
                }
                dst[oy * w + ox] = acc * norm;
            }
        }
    }
    Ok(out)
}

/// Parameters of the display ISP. Levels are in sensor DN.
#[derive(Clone, Debug, PartialEq)]
pub struct IspConfig {
    pub black_level: [f64; 3],
    pub white_level: f64,
    pub white_balance_gains: [f64; 3],
    pub gamma: f64,
    pub clip: bool,
}

impl Default for IspConfig {
    fn default() -> Self {
        IspConfig {
            black_level: [0.0; 3],
            white_level: MAX_CODE,
            white_balance_gains: [1.0; 3],
            gamma: 1.0 / 2.2,
            clip: true,
        }
    }
}

impl IspConfig {
    /// Levels taken from a raw frame's metadata; unit gains, gamma 1/2.2.
    pub fn for_raw(raw: &RawImage) -> Self {
        IspConfig {
            black_level: raw.black_level.map(f64::from),
            white_level: raw.white_level as f64,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.white_balance_gains.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "white balance gains must be positive, got {:?}",
                self.white_balance_gains
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if self.black_level.iter().any(|&b| b >= self.white_level) {
            return Err(Error::InvalidArgument("black level must be below white level".into()));
        }
        Ok(())
    }
}

/// Black level, optional clip, white-level scaling, white balance, clamp and
/// power-law gamma, in that order.
///
/// With `clip` off neither the lower clip nor the final clamp is applied and
/// gamma is applied sign-symmetrically, so the unclipped raw-domain image
/// survives the chain.
pub fn apply_isp(img: &LinearImage, cfg: &IspConfig) -> Result<LinearImage> {
    cfg.validate()?;
    if img.channels != 3 {
        return Err(Error::Shape(format!("ISP expects 3 channels, got {}", img.channels)));
    }
    let mut out = img.clone();
    out.no_clip = !cfg.clip;
    for c in 0..3 {
        let black = cfg.black_level[c] * NORMALIZATION_SCALE;
        let range = cfg.white_level * NORMALIZATION_SCALE - black;
        let gain = cfg.white_balance_gains[c];
        for v in out.plane_mut(c) {
            let mut x = *v - black;
            if cfg.clip {
                x = x.max(0.0);
            }
            x = x / range * gain;
            if cfg.clip {
                x = x.clamp(0.0, 1.0);
            }
            *v = if cfg.gamma == 1.0 {
                x
            } else {
                x.signum() * x.abs().powf(cfg.gamma)
            };
        }
    }
    Ok(out)
}

/// Whole-image SNR in dB with `clean` as the reference signal:
/// `10 log10(sum clean^2 / sum (noisy - clean)^2)`.
///
/// Zero residual energy yields `+inf`; zero signal energy (with a non-zero
/// residual) yields `-inf`.
pub fn measure_snr(noisy: &LinearImage, clean: &LinearImage) -> Result<f64> {
    if !noisy.same_shape(clean) {
        return Err(Error::Shape(format!(
            "noisy {}x{}x{} vs clean {}x{}x{}",
            noisy.width, noisy.height, noisy.channels, clean.width, clean.height, clean.channels
        )));
    }
    let (signal, noise) = clean
        .data
        .iter()
        .zip(&noisy.data)
        .fold((0.0f64, 0.0f64), |(s, n), (&c, &x)| (s + c * c, n + (x - c) * (x - c)));
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    if signal == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}
