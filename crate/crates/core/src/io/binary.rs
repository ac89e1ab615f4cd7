use crate::adaptation::{FeatureBundle, FeatureTensor};
use crate::error::{Error, Result};
use crate::geometry::PointMap;
use crate::matching::FeatureMap;
use crate::raw_pipeline::{CfaPattern, LinearImage, RawImage};
use std::fs;
use std::path::Path;

pub const RAW_MAGIC: &[u8; 8] = b"DRKRAW1\0";
pub const IMAGE_MAGIC: &[u8; 8] = b"DRKIMG1\0";
pub const FEATURE_MAGIC: &[u8; 8] = b"DRKFTR1\0";
pub const POINTMAP_MAGIC: &[u8; 8] = b"DRKPTS1\0";

/// Size of the raw header, payload follows immediately.
pub const RAW_HEADER_LEN: usize = 64;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8; 8], what: &'static str) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != magic {
            return Err(Error::UnsupportedFormat(format!(
                "{what}: expected magic {:?}",
                String::from_utf8_lossy(&magic[..7])
            )));
        }
        Ok(Reader { bytes, pos: 8, what })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Parse(format!("{}: truncated at byte {}", self.what, self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Parse(format!("{}: size overflow", self.what)))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Parse(format!("{}: {} trailing bytes", self.what, self.remaining())));
        }
        Ok(())
    }
}

fn dim(v: u32) -> usize {
    v as usize
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Dimension(format!("{v} does not fit a u32 header field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn push_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Header: magic, u32 width, height, CFA code, black level R/G/B, white
/// level, f64 exposure time, u32 ISO, zero padding to 64 bytes. Payload:
/// u16 little-endian samples, row-major.
pub fn decode_raw(bytes: &[u8]) -> Result<RawImage> {
    let mut r = Reader::new(bytes, RAW_MAGIC, "DRKRAW")?;
    let width = dim(r.u32()?);
    let height = dim(r.u32()?);
    let cfa = CfaPattern::from_code(r.u32()?)?;
    let mut black_level = [0u16; 3];
    for b in &mut black_level {
        *b = u16::try_from(r.u32()?).map_err(|_| Error::Parse("DRKRAW: black level exceeds 16 bits".into()))?;
    }
    let white_level = u16::try_from(r.u32()?).map_err(|_| Error::Parse("DRKRAW: white level exceeds 16 bits".into()))?;
    let exposure_time = r.f64()?;
    let iso = r.u32()?;
    r.take(RAW_HEADER_LEN - r.pos)?;
    let data = r
        .take(width * height * 2)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    r.finish()?;
    let raw = RawImage {
        width,
        height,
        cfa,
        data,
        black_level,
        white_level,
        exposure_time,
        iso,
    };
    raw.validate()?;
    Ok(raw)
}

pub fn encode_raw(raw: &RawImage) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + raw.data.len() * 2);
    out.extend_from_slice(RAW_MAGIC);
    push_u32(&mut out, raw.width)?;
    push_u32(&mut out, raw.height)?;
    out.extend_from_slice(&raw.cfa.code().to_le_bytes());
    for b in raw.black_level {
        out.extend_from_slice(&(b as u32).to_le_bytes());
    }
    out.extend_from_slice(&(raw.white_level as u32).to_le_bytes());
    out.extend_from_slice(&raw.exposure_time.to_le_bytes());
    out.extend_from_slice(&raw.iso.to_le_bytes());
    out.resize(RAW_HEADER_LEN, 0);
    for v in &raw.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Binary 16-bit PGM (`P5`, maxval above 255, big-endian samples) read as a
/// mosaic with zero black level and the file's maxval as white level.
pub fn decode_pgm16(bytes: &[u8], cfa: CfaPattern) -> Result<RawImage> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("PGM: truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::UnsupportedFormat(format!("PGM: expected P5, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("PGM: bad header field {s:?}")));
    let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if !(256..=65535).contains(&maxval) {
        return Err(Error::UnsupportedFormat(format!("PGM: maxval {maxval} is not 16-bit")));
    }
    pos += 1;
    let payload = bytes
        .get(pos..pos + width * height * 2)
        .ok_or_else(|| Error::Parse("PGM: truncated payload".into()))?;
    let data = payload.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    RawImage::new(width, height, cfa, data, [0; 3], maxval as u16)
}

/// Magic, u32 width, height, channels, then f32 planar samples.
pub fn decode_image(bytes: &[u8]) -> Result<LinearImage> {
    let mut r = Reader::new(bytes, IMAGE_MAGIC, "DRKIMG")?;
    let (w, h, c) = (dim(r.u32()?), dim(r.u32()?), dim(r.u32()?));
    let data = r.f32s(w * h * c)?;
    r.finish()?;
    LinearImage::new(w, h, c, data)
}

pub fn encode_image(img: &LinearImage) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + img.data.len() * 4);
    out.extend_from_slice(IMAGE_MAGIC);
    push_u32(&mut out, img.width)?;
    push_u32(&mut out, img.height)?;
    push_u32(&mut out, img.channels)?;
    push_f32s(&mut out, img.data.iter().copied());
    Ok(out)
}

/// Magic, u32 width, height, dim, f32 pixel-major descriptors, then an
/// optional f32 confidence plane detected from the file length.
pub fn decode_features(bytes: &[u8]) -> Result<FeatureMap> {
    let mut r = Reader::new(bytes, FEATURE_MAGIC, "DRKFTR")?;
    let (w, h, d) = (dim(r.u32()?), dim(r.u32()?), dim(r.u32()?));
    let data = r.f32s(w * h * d)?;
    let confidence = match r.remaining() {
        0 => None,
        n if n == w * h * 4 => Some(r.f32s(w * h)?),
        n => {
            return Err(Error::Parse(format!(
                "DRKFTR: {n} bytes after the descriptors; expected 0 or {}",
                w * h * 4
            )))
        }
    };
    let map = FeatureMap::new(w, h, d, data)?;
    match confidence {
        Some(c) => map.with_confidence(c),
        None => Ok(map),
    }
}

pub fn encode_features(map: &FeatureMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + map.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    push_u32(&mut out, map.width)?;
    push_u32(&mut out, map.height)?;
    push_u32(&mut out, map.dim)?;
    push_f32s(&mut out, map.data.iter().copied());
    if let Some(c) = &map.confidence {
        push_f32s(&mut out, c.iter().copied());
    }
    Ok(out)
}

/// Magic, u32 width, height, then f32 planes x, y, z, confidence. NaN marks
/// an invalid pixel.
pub fn decode_pointmap(bytes: &[u8]) -> Result<PointMap> {
    let mut r = Reader::new(bytes, POINTMAP_MAGIC, "DRKPTS")?;
    let (w, h) = (dim(r.u32()?), dim(r.u32()?));
    let n = w * h;
    let (x, y, z) = (r.f32s(n)?, r.f32s(n)?, r.f32s(n)?);
    let confidence = r.f32s(n)?;
    r.finish()?;
    let points = (0..n).map(|i| [x[i], y[i], z[i]]).collect();
    PointMap::new(w, h, points, confidence)
}

pub fn encode_pointmap(pm: &PointMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(16 + pm.points.len() * 16);
    out.extend_from_slice(POINTMAP_MAGIC);
    push_u32(&mut out, pm.width)?;
    push_u32(&mut out, pm.height)?;
    for axis in 0..3 {
        push_f32s(&mut out, pm.points.iter().map(|p| p[axis]));
    }
    push_f32s(&mut out, pm.confidence.iter().copied());
    Ok(out)
}

fn read_with<T>(path: &Path, decode: impl FnOnce(&[u8]) -> Result<T>) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    decode(&bytes).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
        Error::UnsupportedFormat(m) => Error::UnsupportedFormat(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_raw(path: &Path) -> Result<RawImage> {
    read_with(path, decode_raw)
}

pub fn write_raw(path: &Path, raw: &RawImage) -> Result<()> {
    Ok(fs::write(path, encode_raw(raw)?)?)
}

pub fn read_pgm16(path: &Path, cfa: CfaPattern) -> Result<RawImage> {
    read_with(path, |b| decode_pgm16(b, cfa))
}

pub fn read_image(path: &Path) -> Result<LinearImage> {
    read_with(path, decode_image)
}

pub fn write_image(path: &Path, img: &LinearImage) -> Result<()> {
    Ok(fs::write(path, encode_image(img)?)?)
}

pub fn read_features(path: &Path) -> Result<FeatureMap> {
    read_with(path, decode_features)
}

pub fn write_features(path: &Path, map: &FeatureMap) -> Result<()> {
    Ok(fs::write(path, encode_features(map)?)?)
}

pub fn read_pointmap(path: &Path) -> Result<PointMap> {
    read_with(path, decode_pointmap)
}

pub fn write_pointmap(path: &Path, pm: &PointMap) -> Result<()> {
    Ok(fs::write(path, encode_pointmap(pm)?)?)
}

/// File names of the three tensors of a feature bundle directory.
pub const BUNDLE_FILES: [&str; 3] = ["encoder.drkftr", "decoder.drkftr", "correspondence.drkftr"];

/// A bundle tensor is stored as one feature map with the two views stacked
/// vertically, so its height is twice the per-view height.
pub fn tensor_from_features(map: FeatureMap) -> Result<FeatureTensor> {
    if !map.height.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "stacked view pair has odd height {}",
            map.height
        )));
    }
    FeatureTensor::new(map.height / 2, map.width, map.dim, map.data)
}

pub fn features_from_tensor(t: &FeatureTensor) -> Result<FeatureMap> {
    FeatureMap::new(t.width, 2 * t.height, t.dim, t.data.clone())
}

pub fn read_feature_bundle(dir: &Path) -> Result<FeatureBundle> {
    let [e, d, c] = BUNDLE_FILES.map(|f| read_features(&dir.join(f)).and_then(tensor_from_features));
    FeatureBundle::new(e?, d?, c?)
}

pub fn write_feature_bundle(dir: &Path, bundle: &FeatureBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, t) in BUNDLE_FILES.iter().zip(bundle.tensors()) {
        write_features(&dir.join(name), &features_from_tensor(t)?)?;
    }
    Ok(())
}
