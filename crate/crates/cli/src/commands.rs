use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Map, Value};
use std::path::{Path, PathBuf};

use darksfm::adaptation::{distill_loss as loss, Reduction};
use darksfm::evaluation::{align_channels_median, align_sim3, ate, depth_metrics, psnr, rpe, DepthPair, RpeOptions, RpeReduction};
use darksfm::io;
use darksfm::noise_model::{calibrate, sample_target_snr, synthesize, NoiseSampling, SynthesisOptions};
use darksfm::raw_pipeline::{apply_isp, demosaic_subsample, measure_snr, CfaPattern, IspConfig, LinearImage, RawImage};

use crate::report::number;
use crate::{
    CalibrateNoiseArgs, DistillLossArgs, EvalDepthArgs, EvalImageArgs, EvalPosesArgs, Global, IspArgs, SimulateArgs,
};

pub type Report = Map<String, Value>;

pub fn object(v: Value) -> Report {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("reports are objects"),
    }
}

/// Fails before any work when an input is missing.
pub fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(path)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub fn parse_cfa(s: &str) -> Result<CfaPattern> {
    Ok(match s.to_ascii_lowercase().as_str() {
        "rggb" => CfaPattern::Rggb,
        "bggr" => CfaPattern::Bggr,
        "grbg" => CfaPattern::Grbg,
        "gbrg" => CfaPattern::Gbrg,
        other => bail!("unknown CFA pattern {other:?}"),
    })
}

/// DRKRAW by magic, otherwise a 16-bit PGM.
pub fn read_raw_any(path: &Path, cfa: CfaPattern) -> Result<RawImage> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let raw = if bytes.starts_with(io::RAW_MAGIC) {
        io::decode_raw(&bytes)
    } else {
        io::decode_pgm16(&bytes, cfa)
    };
    raw.with_context(|| format!("decoding {}", path.display()))
}

pub fn calibrate_noise(g: &Global, a: CalibrateNoiseArgs) -> Result<Report> {
    let s = Some("calibrate-noise");
    let samples = existing(g.settings.required(a.samples, "calibrate-noise", "samples")?, "samples file")?;
    let out: Option<PathBuf> = g.settings.get(a.out, s, "out")?;
    let parsed = io::parse_mean_var_samples(&read_text(&samples)?)?;
    let cal = calibrate(&parsed)?;
    for c in &cal.clamped {
        log::warn!("channel {c}: a negative coefficient was clamped to zero");
    }
    if let Some(out) = &out {
        write_text(out, &io::format_noise_params(&cal.params))?;
    }
    let channels: Vec<Value> = cal
        .params
        .channels
        .iter()
        .enumerate()
        .map(|(c, n)| json!({"channel": c, "a": number(n.a), "b": number(n.b)}))
        .collect();
    Ok(object(json!({
        "samples": parsed.len(),
        "channels": channels,
        "clamped": cal.clamped,
    })))
}

pub fn simulate(g: &Global, a: SimulateArgs) -> Result<Report> {
    let sec = "simulate";
    let s = Some(sec);
    let clean_path = existing(g.settings.required(a.clean, sec, "clean")?, "clean image")?;
    let params_path = existing(g.settings.required(a.params, sec, "params")?, "noise parameter file")?;
    let out: PathBuf = g.settings.required(a.out, sec, "out")?;
    let target = match (a.snr_range, g.settings.get(a.snr_db, s, "snr_db")?) {
        (Some(r), _) => sample_target_snr(r[0], r[1], g.seed ^ 0x736e_7200),
        (None, Some(db)) => db,
        (None, None) => bail!("simulate: give --snr-db or --snr-range"),
    };
    let sampling = match g.settings.or(a.sampling, s, "sampling", "gaussian".to_string())?.as_str() {
        "gaussian" => NoiseSampling::Gaussian,
        "poisson-gaussian" | "poisson" => NoiseSampling::PoissonGaussian,
        other => bail!("unknown sampling {other:?}"),
    };
    let opts = SynthesisOptions {
        sampling,
        clip_to: g.settings.get(a.clip, s, "clip")?,
        ..Default::default()
    };
    let clean = io::read_image(&clean_path)?;
    let params = io::parse_noise_params(&read_text(&params_path)?)?;
    let syn = synthesize(&clean, &params, target, g.seed, &opts)?;
    io::write_image(&out, &syn.image)?;
    let measured = measure_snr(&syn.image, &clean.scaled(syn.scale))?;
    Ok(object(json!({
        "target_snr_db": number(target),
        "measured_snr_db": number(measured),
        "scale": number(syn.scale),
        "seed": g.seed,
        "width": syn.image.width,
        "height": syn.image.height,
    })))
}

fn to_png(img: &LinearImage, path: &Path) -> Result<()> {
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = img.get(c.min(img.channels - 1), x as usize, y as usize);
            px.0[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    buf.save(path).with_context(|| format!("writing {}", path.display()))
}

pub fn isp(g: &Global, a: IspArgs) -> Result<Report> {
    let sec = "isp";
    let s = Some(sec);
    let input = existing(g.settings.required(a.input, sec, "input")?, "raw input")?;
    let output: PathBuf = g.settings.required(a.output, sec, "output")?;
    let cfa = parse_cfa(&g.settings.or(a.cfa, s, "cfa", "rggb".to_string())?)?;
    let raw = read_raw_any(&input, cfa)?;
    let mut cfg = IspConfig::for_raw(&raw);
    cfg.clip = !(a.no_clip || g.settings.or(None, s, "no_clip", false)?);
    cfg.gamma = g.settings.or(a.gamma, s, "gamma", cfg.gamma)?;
    if let Some(wb) = a.wb {
        cfg.white_balance_gains = [wb[0], wb[1], wb[2]];
    }
    let developed = apply_isp(&demosaic_subsample(&raw)?, &cfg)?;
    match extension(&output).as_str() {
        "png" => to_png(&developed, &output)?,
        "drkimg" => io::write_image(&output, &developed)?,
        other => bail!("isp: output must end in .png or .drkimg, got {other:?}"),
    }
    Ok(object(json!({
        "width": developed.width,
        "height": developed.height,
        "clip": cfg.clip,
        "gamma": number(cfg.gamma),
        "mean": number(developed.mean()),
    })))
}

pub fn eval_poses(g: &Global, a: EvalPosesArgs) -> Result<Report> {
    let sec = "eval-poses";
    let s = Some(sec);
    let est = existing(g.settings.required(a.est, sec, "est")?, "estimated poses")?;
    let reference = existing(g.settings.required(a.reference, sec, "ref")?, "reference poses")?;
    let opts = RpeOptions {
        stride: g.settings.or(a.stride, s, "stride", 1)?,
        reduction: match g.settings.or(a.rpe_reduction, s, "rpe_reduction", "rmse".to_string())?.as_str() {
            "rmse" => RpeReduction::Rmse,
            "mean" => RpeReduction::Mean,
            other => bail!("unknown RPE reduction {other:?}"),
        },
    };
    let est = io::parse_poses(&read_text(&est)?)?;
    let reference = io::parse_poses(&read_text(&reference)?)?;
    let (sim, aligned) = align_sim3(&est, &reference)?;
    let ate = ate(&aligned, &reference)?;
    let r = rpe(&aligned, &reference, &opts)?;
    let common = est.entries.iter().filter(|(n, _)| reference.get(n).is_some()).count();
    Ok(object(json!({
        "ate": number(ate),
        "rpe_t": number(r.translation),
        "rpe_r": number(r.rotation_deg),
        "common": common,
        "alignment_scale": number(sim.scale),
    })))
}

fn single_channel(img: &LinearImage, what: &str) -> Result<Vec<f64>> {
    if img.channels != 1 {
        bail!("{what} must have one channel, found {}", img.channels);
    }
    Ok(img.data.clone())
}

pub fn eval_depth(g: &Global, a: EvalDepthArgs) -> Result<Report> {
    let sec = "eval-depth";
    let pred = existing(g.settings.required(a.pred, sec, "pred")?, "predicted depth")?;
    let reference = existing(g.settings.required(a.reference, sec, "ref")?, "reference depth")?;
    let mask = match g.settings.get(a.mask, Some(sec), "mask")? {
        Some(m) => Some(existing(m, "mask")?),
        None => None,
    };
    let pred = single_channel(&io::read_image(&pred)?, "predicted depth")?;
    let reference = single_channel(&io::read_image(&reference)?, "reference depth")?;
    let mask = match mask {
        Some(m) => Some(single_channel(&io::read_image(&m)?, "mask")?.iter().map(|&v| v != 0.0).collect()),
        None => None,
    };
    let m = depth_metrics(&DepthPair::new(pred, reference, mask)?)?;
    Ok(object(json!({
        "absrel": number(m.absrel),
        "delta125": number(m.delta125),
        "valid": m.valid,
    })))
}

pub fn eval_image(g: &Global, a: EvalImageArgs) -> Result<Report> {
    let sec = "eval-image";
    let pred = existing(g.settings.required(a.pred, sec, "pred")?, "predicted image")?;
    let reference = existing(g.settings.required(a.reference, sec, "ref")?, "reference image")?;
    let peak = g.settings.or(a.peak, Some(sec), "peak", 1.0)?;
    let pred = io::read_image(&pred)?;
    let reference = io::read_image(&reference)?;
    let (aligned, fits) = if a.no_align {
        (pred, Vec::new())
    } else {
        align_channels_median(&pred, &reference)?
    };
    let fits: Vec<Value> = fits
        .iter()
        .map(|f| json!({"scale": number(f.scale), "shift": number(f.shift)}))
        .collect();
    Ok(object(json!({
        "psnr": number(psnr(&aligned, &reference, peak)?),
        "alignment": fits,
    })))
}

pub fn distill_loss(g: &Global, a: DistillLossArgs) -> Result<Report> {
    let sec = "distill-loss";
    let s = Some(sec);
    let teacher = existing(g.settings.required(a.teacher, sec, "teacher")?, "teacher bundle")?;
    let noisy = existing(g.settings.required(a.student_noisy, sec, "student_noisy")?, "noisy student bundle")?;
    let clean = existing(g.settings.required(a.student_clean, sec, "student_clean")?, "clean student bundle")?;
    let lambda = g.settings.or(a.lambda, s, "lambda", 0.3)?;
    let reduction = match g.settings.or(a.reduction, s, "reduction", "sum".to_string())?.as_str() {
        "sum" => Reduction::Sum,
        "mean-per-tensor" | "mean" => Reduction::MeanPerTensor,
        other => return Err(anyhow!("unknown reduction {other:?}")),
    };
    let load = |p: &Path| io::read_feature_bundle(p).with_context(|| format!("loading bundle {}", p.display()));
    let l = loss(&load(&teacher)?, &load(&noisy)?, &load(&clean)?, lambda, reduction)?;
    Ok(object(json!({
        "total": number(l.total),
        "l_noisy": number(l.noisy),
        "l_clean": number(l.clean),
        "lambda": number(lambda),
    })))
}
