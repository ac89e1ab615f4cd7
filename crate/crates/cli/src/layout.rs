//! On-disk scene layout shared by `sfm` and `fixture`:
//!
//! ```text
//! images/<name>.drkimg | .drkraw | .pgm
//! features/<name>.drkftr
//! intrinsics.txt
//! pairs/<a>--<b>/<a>.drkpts, <b>.drkpts, matches.txt (optional)
//! gt_poses.txt            (fixture only)
//! ```

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use darksfm::evaluation::Trajectory;
use darksfm::fixture::{RingScene, RingSceneConfig};
use darksfm::global_recon::PairPrediction;
use darksfm::io;
use darksfm::matching::{fallback_descriptors, FeatureMap};
use darksfm::pipeline::{run_sfm, SfmOptions};
use darksfm::raw_pipeline::{demosaic_subsample, CfaPattern, LinearImage};
use darksfm::scene_graph::{Edge, SceneGraph};

use crate::commands::{existing, object, read_raw_any, read_text, write_text, Report};
use crate::report::number;
use crate::{FixtureArgs, Global, SfmArgs};

const IMAGE_EXTENSIONS: [&str; 3] = ["drkimg", "drkraw", "pgm"];

fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
            out.push((name, path));
        }
    }
    out.sort();
    if out.windows(2).any(|w| w[0].0 == w[1].0) {
        bail!("{}: two images share a name", dir.display());
    }
    if out.len() < 2 {
        bail!("{}: need at least two images, found {}", dir.display(), out.len());
    }
    Ok(out)
}

fn load_image(path: &Path) -> Result<LinearImage> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("drkimg")) {
        Ok(io::read_image(path)?)
    } else {
        Ok(demosaic_subsample(&read_raw_any(path, CfaPattern::Rggb)?)?)
    }
}

fn load_pairs(dir: &Path, index: &BTreeMap<String, usize>) -> Result<Vec<PairPrediction>> {
    let mut pairs = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries.into_iter().filter(|p| p.is_dir()) {
        let dirname = path.file_name().and_then(|s| s.to_str()).unwrap_or("").to_string();
        let Some((a, b)) = dirname.split_once("--") else {
            log::warn!("ignoring {}: not named <a>--<b>", path.display());
            continue;
        };
        let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) else {
            bail!("{}: unknown image name", path.display());
        };
        let matches_path = path.join("matches.txt");
        let matches = if matches_path.exists() {
            io::parse_correspondences(&read_text(&matches_path)?)?
        } else {
            Vec::new()
        };
        pairs.push(PairPrediction {
            i,
            j,
            pointmap_i: io::read_pointmap(&path.join(format!("{a}.drkpts")))?,
            pointmap_j: io::read_pointmap(&path.join(format!("{b}.drkpts")))?,
            matches,
        });
    }
    Ok(pairs)
}

fn color(img: &LinearImage, x: f64, y: f64, peak: f64) -> [u8; 3] {
    let (xi, yi) = (x.round().clamp(0.0, (img.width - 1) as f64) as usize, y.round().clamp(0.0, (img.height - 1) as f64) as usize);
    let mut out = [0u8; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let v = img.get(c.min(img.channels - 1), xi, yi) / peak;
        *o = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    out
}

pub fn sfm(g: &Global, a: SfmArgs) -> Result<Report> {
    let sec = "sfm";
    let s = Some(sec);
    let images_dir = existing(g.settings.required(a.images, sec, "images")?, "image directory")?;
    let features: String = g.settings.required(a.features, sec, "features")?;
    let intrinsics_path = existing(g.settings.required(a.intrinsics, sec, "intrinsics")?, "intrinsics file")?;
    let default_pairs = images_dir.parent().unwrap_or(Path::new(".")).join("pairs");
    let pairs_dir = existing(g.settings.or(a.pairs, s, "pairs", default_pairs)?, "pair directory")?;
    if features != "fallback" {
        existing(PathBuf::from(&features), "feature directory")?;
    }
    let out: PathBuf = g.settings.required(a.out, sec, "out")?;
    let points_out: Option<PathBuf> = g.settings.get(a.points, s, "points")?;
    let graph_out: Option<PathBuf> = g.settings.get(a.graph_out, s, "graph_out")?;
    let mut opts = SfmOptions {
        graph_k: g.settings.or(a.graph_k, s, "graph_k", 10)?,
        lambda_intr: g.settings.or(a.lambda_intr, s, "lambda_intr", 10.0)?,
        match_subsample: g.settings.or(a.match_subsample, s, "match_subsample", 8)?,
        ..Default::default()
    };
    opts.bundle.max_iterations = g.settings.or(a.max_iterations, s, "max_iterations", opts.bundle.max_iterations)?;
    let patch = g.settings.or(a.patch, s, "patch", 7)?;

    let images = list_images(&images_dir)?;
    let index: BTreeMap<String, usize> = images.iter().enumerate().map(|(k, (n, _))| (n.clone(), k)).collect();
    let table = io::parse_intrinsics(&read_text(&intrinsics_path)?)?;
    let intrinsics = images.iter().map(|(n, _)| table.lookup(n)).collect::<darksfm::Result<Vec<_>>>()?;
    let pixels: Vec<LinearImage> = images.iter().map(|(_, p)| load_image(p)).collect::<Result<_>>()?;
    let maps: Vec<FeatureMap> = if features == "fallback" {
        pixels.iter().map(|img| fallback_descriptors(img, patch)).collect::<darksfm::Result<_>>()?
    } else {
        images
            .iter()
            .map(|(n, _)| io::read_features(&Path::new(&features).join(format!("{n}.drkftr"))))
            .collect::<darksfm::Result<_>>()?
    };
    let pairs = load_pairs(&pairs_dir, &index)?;
    log::info!("{} images, {} pair predictions", images.len(), pairs.len());

    let result = run_sfm(&maps, &intrinsics, &pairs, &opts)?;
    let rec = &result.reconstruction;
    let names: Vec<String> = images.iter().map(|(n, _)| n.clone()).collect();
    let traj = Trajectory::new(names.iter().cloned().zip(rec.poses.iter().copied()).collect())?;
    write_text(&out, &io::format_poses(&traj))?;
    if let Some(p) = &points_out {
        let peaks: Vec<f64> = pixels.iter().map(|img| img.data.iter().fold(0.0f64, |m, v| m.max(*v))).collect();
        let cloud: Vec<_> = rec
            .points
            .iter()
            .map(|t| {
                let o = t.observations[0];
                let peak = if peaks[o.image] > 0.0 { peaks[o.image] } else { 1.0 };
                (t.position, color(&pixels[o.image], o.pixel.x, o.pixel.y, peak))
            })
            .collect();
        write_text(p, &io::format_ply(&cloud))?;
    }
    if let Some(p) = &graph_out {
        write_text(p, &io::format_graph(&result.graph))?;
    }
    let intr: Vec<Value> = rec
        .intrinsics
        .iter()
        .map(|k| json!([number(k.fx), number(k.fy), number(k.cx), number(k.cy)]))
        .collect();
    Ok(object(json!({
        "images": names.len(),
        "edges": result.graph.edges.len(),
        "dropped_edges": result.alignment.dropped_edges,
        "points": rec.points.len(),
        "initial_rmse": number(result.report.initial_rmse),
        "final_rmse": number(result.report.final_rmse),
        "iterations": result.report.iterations,
        "accepted_steps": result.report.accepted_steps,
        "intrinsics": intr,
    })))
}

fn write_pointmap(path: &Path, pm: &darksfm::geometry::PointMap) -> Result<()> {
    io::write_pointmap(path, pm).with_context(|| format!("writing {}", path.display()))
}

pub fn fixture(g: &Global, a: FixtureArgs) -> Result<Report> {
    let sec = "fixture";
    let s = Some(sec);
    let out: PathBuf = g.settings.required(a.out, sec, "out")?;
    let defaults = RingSceneConfig::default();
    let config = RingSceneConfig {
        cameras: g.settings.or(a.cameras, s, "cameras", defaults.cameras)?,
        points: g.settings.or(a.points, s, "points", defaults.points)?,
        seed: g.seed,
        ..defaults
    };
    if config.cameras < 3 {
        bail!("fixture: need at least 3 cameras");
    }
    let sigma = g.settings.or(a.sigma, s, "sigma", 0.0)?;
    let scene = RingScene::generate(&config);
    let n = config.cameras;
    let names: Vec<String> = (0..n).map(|k| format!("cam{k:02}")).collect();
    for sub in ["images", "features", "pairs"] {
        std::fs::create_dir_all(out.join(sub)).with_context(|| format!("creating {}", out.join(sub).display()))?;
    }
    for (k, name) in names.iter().enumerate() {
        io::write_image(&out.join("images").join(format!("{name}.drkimg")), &scene.render(k))?;
    }
    for (name, f) in names.iter().zip(scene.global_features()) {
        io::write_features(&out.join("features").join(format!("{name}.drkftr")), &f)?;
    }
    write_text(&out.join("intrinsics.txt"), &io::format_intrinsics(&names, &scene.intrinsics))?;
    let gt = Trajectory::new(names.iter().cloned().zip(scene.poses.iter().copied()).collect())?;
    write_text(&out.join("gt_poses.txt"), &io::format_poses(&gt))?;
    let every_pair = SceneGraph {
        nodes: n,
        edges: (0..n).flat_map(|i| (i + 1..n).map(move |j| Edge { i, j, score: 1.0 })).collect(),
    };
    let pairs = scene.pair_predictions(&every_pair, sigma, None);
    for p in &pairs {
        let (a, b) = (&names[p.i], &names[p.j]);
        let dir = out.join("pairs").join(format!("{a}--{b}"));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_pointmap(&dir.join(format!("{a}.drkpts")), &p.pointmap_i)?;
        write_pointmap(&dir.join(format!("{b}.drkpts")), &p.pointmap_j)?;
        write_text(&dir.join("matches.txt"), &io::format_correspondences(&p.matches))?;
    }
    Ok(object(json!({
        "cameras": n,
        "points": config.points,
        "pairs": pairs.len(),
        "sigma": number(sigma),
        "seed": g.seed,
        "diameter": number(scene.diameter()),
    })))
}
