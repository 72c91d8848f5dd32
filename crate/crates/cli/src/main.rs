//! `craft`: training, inference, frequency experiments, quantization and
//! evaluation from the command line.

mod commands;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "craft", version, about = "Super-resolution transformer toolkit: train, infer, analyze frequencies, quantize")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a model with L1 loss on HR crops.
    Train(TrainArgs),
    /// Super-resolve one image.
    Sr(SrArgs),
    /// PSNR drop ratio as high frequencies are removed (or box-filtered).
    FreqDrop(FreqDropArgs),
    /// Post-training quantization of a checkpoint.
    Quantize(QuantizeArgs),
    /// PSNR/SSIM of a model on a dataset.
    Eval(EvalArgs),
    /// Radially averaged log-amplitude spectrum of an image.
    Spectrum(SpectrumArgs),
}

/// Where images come from: a directory of PPM/PNG files or the generator.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Number of synthetic images.
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    /// Side of synthetic HR images.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Synthetic generator mix: comma list of checkerboard, grating, blobs,
    /// voronoi, noise; or "all" / "texture" / "high-frequency".
    #[arg(long, default_value = "all")]
    pub mix: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory of HR images, or "synthetic".
    #[arg(long, default_value = "synthetic")]
    pub data: String,
    #[command(flatten)]
    pub synth: DataArgs,
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Peak step size (cosine-decayed to zero unless --constant-lr).
    #[arg(long, default_value_t = 2e-3)]
    pub lr: f32,
    #[arg(long)]
    pub constant_lr: bool,
    #[arg(long, default_value_t = 48)]
    pub channels: usize,
    /// Attention heads; defaults to the largest of 6, 4, 2 dividing the channels.
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub rcrfg: usize,
    #[arg(long, default_value_t = 2)]
    pub crfb: usize,
    /// LR crop side.
    #[arg(long, default_value_t = 16)]
    pub patch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct SrArgs {
    #[arg(long)]
    pub model: std::path::PathBuf,
    #[arg(long)]
    pub input: std::path::PathBuf,
    #[arg(long)]
    pub output: std::path::PathBuf,
    /// Run with the checkpoint's quantization table.
    #[arg(long)]
    pub quantized: bool,
    /// Expected scale; must match the checkpoint.
    #[arg(long)]
    pub scale: Option<usize>,
}

#[derive(Args, Debug)]
pub struct FreqDropArgs {
    /// Checkpoint, or "bicubic" for the interpolation baseline.
    #[arg(long)]
    pub model: String,
    /// Directory of HR images, or "synthetic".
    #[arg(long, default_value = "synthetic")]
    pub data: String,
    #[command(flatten)]
    pub synth: DataArgs,
    #[arg(long, default_value = "D")]
    pub mode: String,
    /// start:stop:step, inclusive of stop.
    #[arg(long, conflicts_with = "thetas")]
    pub gammas: Option<String>,
    /// Comma list of odd box-filter windows.
    #[arg(long)]
    pub thetas: Option<String>,
    /// Scale for the "bicubic" model.
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct QuantizeArgs {
    #[arg(long)]
    pub model: std::path::PathBuf,
    /// Directory of HR images (degraded to LR), or "synthetic".
    #[arg(long, default_value = "synthetic")]
    pub calib: String,
    #[command(flatten)]
    pub synth: DataArgs,
    /// Calibration patches.
    #[arg(long, default_value_t = 100)]
    pub calib_count: usize,
    /// LR calibration patch side.
    #[arg(long, default_value_t = 120)]
    pub patch: usize,
    #[arg(long, default_value_t = 4)]
    pub bits: u32,
    /// fgo, feature, minmax or percentile.
    #[arg(long, default_value = "fgo")]
    pub method: String,
    /// Use the FEATURE criterion everywhere (same as --method feature).
    #[arg(long)]
    pub no_fgo: bool,
    #[arg(long, default_value_t = 0.999)]
    pub percentile: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Refinement step; defaults to 2e-4 at 8 bits, 2e-3 below.
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long, default_value_t = 0.9)]
    pub beta: f32,
    /// Separate weight bounds per output channel.
    #[arg(long)]
    pub per_channel: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint, or "bicubic" for the interpolation baseline.
    #[arg(long)]
    pub model: String,
    /// Directory of HR images, or "synthetic".
    #[arg(long, default_value = "synthetic")]
    pub data: String,
    #[command(flatten)]
    pub synth: DataArgs,
    /// Must match the checkpoint; required for "bicubic".
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long, default_value = "psnr,ssim")]
    pub metrics: String,
    #[arg(long)]
    pub quantized: bool,
    /// Benchmark protocol: luma only, `scale` border pixels cropped.
    #[arg(long)]
    pub luma: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub input: std::path::PathBuf,
    #[arg(long)]
    pub compare: Option<std::path::PathBuf>,
    #[arg(long)]
    pub out: std::path::PathBuf,
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CRAFT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("CRAFT_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            anyhow::bail!("CRAFT_THREADS must be a positive integer, got 0");
        }
        craft_core::par::init_threads(n);
    }
    Ok(())
}

fn run() -> anyhow::Result<()> {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            anyhow::bail!("usage: {first}");
        }
    };
    let cli = Cli::from_arg_matches(&matches)?;
    init_threads()?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let flags: Vec<(String, String)> = sub
        .ids()
        .filter_map(|id| {
            let raw = sub.try_get_raw(id.as_str()).ok()??;
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            Some((id.as_str().to_string(), vals.join(",")))
        })
        .collect();
    let ctx = commands::Ctx {
        command: name.to_string(),
        flags,
    };
    match cli.command {
        Cmd::Train(a) => commands::train(&ctx, a),
        Cmd::Sr(a) => commands::sr(&ctx, a),
        Cmd::FreqDrop(a) => commands::freq_drop(&ctx, a),
        Cmd::Quantize(a) => commands::quantize(&ctx, a),
        Cmd::Eval(a) => commands::eval(&ctx, a),
        Cmd::Spectrum(a) => commands::spectrum(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
