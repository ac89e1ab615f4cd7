mod commands;
mod layout;
mod report;
mod settings;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use report::Format;
use settings::Settings;

/// Low-light structure-from-motion toolkit.
#[derive(Parser, Debug)]
#[command(name = "darksfm", disable_version_flag = true)]
struct Cli {
    /// TOML file with default settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report format.
    #[arg(long, global = true, alias = "report", value_parser = ["json", "text"])]
    format: Option<String>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
    /// Print the version and the supported file formats.
    #[arg(long, short = 'V')]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit per-channel noise parameters to mean-variance samples.
    CalibrateNoise(CalibrateNoiseArgs),
    /// Scale a clean DN-domain image to a target SNR and add sensor noise.
    Simulate(SimulateArgs),
    /// Develop a raw frame for display.
    Isp(IspArgs),
    /// Reconstruct camera poses and points from per-pair predictions.
    Sfm(SfmArgs),
    /// Trajectory error after similarity alignment.
    EvalPoses(EvalPosesArgs),
    /// AbsRel and threshold accuracy of a depth map.
    EvalDepth(EvalDepthArgs),
    /// PSNR after per-channel median alignment.
    EvalImage(EvalImageArgs),
    /// Teacher-student feature distillation loss.
    DistillLoss(DistillLossArgs),
    /// Write the synthetic ring scene used by the examples and tests.
    Fixture(FixtureArgs),
}

#[derive(Args, Debug)]
pub struct CalibrateNoiseArgs {
    /// CSV with columns channel,mean,variance.
    #[arg(long)]
    samples: Option<PathBuf>,
    /// Write the fitted parameters here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Clean image in sensor DN (DRKIMG).
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Noise parameter file.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Target SNR in dB.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "snr_range")]
    snr_db: Option<f64>,
    /// Draw the target uniformly in dB from [LO, HI].
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_hyphen_values = true)]
    snr_range: Option<Vec<f64>>,
    /// gaussian or poisson-gaussian.
    #[arg(long)]
    sampling: Option<String>,
    /// Clamp samples to [0, WHITE].
    #[arg(long, value_name = "WHITE")]
    clip: Option<f64>,
    /// Output image (DRKIMG).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IspArgs {
    /// DRKRAW frame or 16-bit PGM.
    #[arg(long)]
    input: Option<PathBuf>,
    /// .png (8-bit sRGB-like) or .drkimg (float).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Keep negative and above-white values.
    #[arg(long)]
    no_clip: bool,
    #[arg(long)]
    gamma: Option<f64>,
    /// White-balance gains as R,G,B.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    wb: Option<Vec<f64>>,
    /// Mosaic layout of PGM input: rggb, bggr, grbg or gbrg.
    #[arg(long)]
    cfa: Option<String>,
}

#[derive(Args, Debug)]
pub struct SfmArgs {
    /// Directory of DRKIMG, DRKRAW or PGM images.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Directory of DRKFTR maps named after the images, or `fallback`.
    #[arg(long)]
    features: Option<String>,
    /// Intrinsics table.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Per-pair pointmaps and matches; defaults to `pairs` next to the images.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Output poses.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output point cloud (PLY).
    #[arg(long)]
    points: Option<PathBuf>,
    #[arg(long)]
    lambda_intr: Option<f64>,
    #[arg(long)]
    graph_k: Option<usize>,
    /// Dump the co-visibility graph.
    #[arg(long)]
    graph_out: Option<PathBuf>,
    /// Grid stride for matching pairs that come without matches.
    #[arg(long)]
    match_subsample: Option<usize>,
    /// Window size of the fallback descriptors.
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalPosesArgs {
    #[arg(long)]
    est: Option<PathBuf>,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Frame offset for relative errors.
    #[arg(long)]
    stride: Option<usize>,
    /// rmse or mean.
    #[arg(long)]
    rpe_reduction: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvalDepthArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Single-channel DRKIMG; non-zero marks valid pixels.
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalImageArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    #[arg(long)]
    peak: Option<f64>,
    /// Skip the per-channel median alignment.
    #[arg(long)]
    no_align: bool,
}

#[derive(Args, Debug)]
pub struct DistillLossArgs {
    #[arg(long)]
    teacher: Option<PathBuf>,
    #[arg(long)]
    student_noisy: Option<PathBuf>,
    #[arg(long)]
    student_clean: Option<PathBuf>,
    /// Weight of the clean-student term.
    #[arg(long)]
    lambda: Option<f64>,
    /// sum or mean-per-tensor.
    #[arg(long)]
    reduction: Option<String>,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    points: Option<usize>,
    /// Pixel noise on the matches.
    #[arg(long)]
    sigma: Option<f64>,
}

/// Resolved global options.
pub struct Global {
    pub settings: Settings,
    pub format: Format,
    pub seed: u64,
}

fn format_versions() -> String {
    let mut s = format!("darksfm {}\nformats:\n", env!("CARGO_PKG_VERSION"));
    let width = darksfm::io::FORMAT_VERSIONS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (kind, version) in darksfm::io::FORMAT_VERSIONS {
        s.push_str(&format!("  {kind:<width$}  {version}\n"));
    }
    s
}

fn error_json(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<darksfm::Error>())
        .map_or("cli", |e| e.kind());
    let body = serde_json::json!({ "error": { "kind": kind, "message": format!("{err:#}") } });
    body.to_string()
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let settings = Settings::load(cli.config.as_deref())?;
    let level: String = settings.or(cli.log_level, None, "log_level", "warn".to_string())?;
    let _ = env_logger::Builder::new().parse_filters(&level).format_timestamp(None).try_init();
    let threads: usize = settings.or(cli.threads, None, "threads", 0)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let format: Format = settings
        .or(cli.format, None, "format", "json".to_string())?
        .parse()
        .map_err(anyhow::Error::msg)?;
    let seed = settings.or(cli.seed, None, "seed", 0)?;
    let g = Global { settings, format, seed };
    let command = cli.command.expect("checked by main");
    let report = match command {
        Command::CalibrateNoise(a) => commands::calibrate_noise(&g, a)?,
        Command::Simulate(a) => commands::simulate(&g, a)?,
        Command::Isp(a) => commands::isp(&g, a)?,
        Command::Sfm(a) => layout::sfm(&g, a)?,
        Command::EvalPoses(a) => commands::eval_poses(&g, a)?,
        Command::EvalDepth(a) => commands::eval_depth(&g, a)?,
        Command::EvalImage(a) => commands::eval_image(&g, a)?,
        Command::DistillLoss(a) => commands::distill_loss(&g, a)?,
        Command::Fixture(a) => layout::fixture(&g, a)?,
    };
    Ok(report::render(&report, g.format))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if cli.version {
        print!("{}", format_versions());
        return ExitCode::SUCCESS;
    }
    if cli.command.is_none() {
        eprintln!("error: a subcommand is required\n\nFor more information, try '--help'.");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(1)
        }
    }
}
