//! `sketchmix`: generate data, design frequencies, sketch, merge, estimate,
//! evaluate and size sketches from the command line.

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "SKETCHMIX_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "sketchmix",
    version,
    about = "Compressive learning of Gaussian mixture models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic GMM and a sample from it.
    Gen(GenArgs),
    /// Design a frequency set from data.
    Freq(FreqArgs),
    /// Sketch a data file, streaming it in chunks.
    Sketch(SketchArgs),
    /// Merge sketches computed with the same frequencies.
    Merge(MergeArgs),
    /// Recover a GMM from a sketch.
    Estimate(EstimateArgs),
    /// Compare two GMMs.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Sketch-size and covering-number calculators.
    #[command(subcommand)]
    Bounds(BoundsCommand),
    /// Run a grid of synthetic experiments into a CSV table.
    Sweep(SweepArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

fn positive_u64() -> clap::builder::RangedU64ValueParser<u64> {
    clap::value_parser!(u64).range(1..)
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long, value_parser = positive_u64())]
    pub dim: u64,
    #[arg(long, value_parser = positive_u64())]
    pub components: u64,
    #[arg(long, value_parser = positive_u64())]
    pub samples: u64,
    #[arg(long)]
    pub seed: u64,
    /// Output data file (CLDATA01).
    #[arg(long)]
    pub out: PathBuf,
    /// Output file for the true GMM.
    #[arg(long)]
    pub model_out: PathBuf,
    #[arg(long, default_value = "uniform", value_parser = ["uniform", "dirichlet"])]
    pub weights: String,
}

#[derive(Debug, Args, Serialize)]
pub struct FreqArgs {
    /// Data file (CLDATA01 or CSV).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = positive_u64())]
    pub m: u64,
    #[arg(long, default_value = "ar", value_parser = ["gauss", "fgr", "ar"])]
    pub kind: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Items used by the scale estimate.
    #[arg(long, default_value_t = 5000, value_parser = positive_u64())]
    pub n0: u64,
    /// Frequencies per estimation round.
    #[arg(long, default_value_t = 500, value_parser = positive_u64())]
    pub m0: u64,
    #[arg(long, default_value_t = 30, value_parser = positive_u64())]
    pub blocks: u64,
    #[arg(long, default_value_t = 5, value_parser = positive_u64())]
    pub iters: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SketchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub freqs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Rows per partial sum; bounds memory use.
    #[arg(long, default_value_t = sketchmix::sketch::DEFAULT_CHUNK_SIZE as u64, value_parser = positive_u64())]
    pub chunk_size: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct MergeArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EstimateArgs {
    #[arg(long)]
    pub sketch: PathBuf,
    #[arg(long)]
    pub freqs: PathBuf,
    #[arg(long, value_parser = positive_u64())]
    pub k: u64,
    #[arg(long, default_value = "clompr", value_parser = ["clomp", "clompr", "split"])]
    pub algo: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Optimizer iteration cap per call.
    #[arg(long, default_value_t = sketchmix::recovery::DEFAULT_MAX_INNER_ITERS as u64, value_parser = positive_u64())]
    pub max_iters: u64,
    /// Random initializations per atom search.
    #[arg(long, default_value_t = 1, value_parser = positive_u64())]
    pub restarts: u64,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Symmetric KL divergence by Monte Carlo.
    Kl(KlArgs),
    /// Characteristic-function MMD by Monte Carlo.
    Mmd(MmdArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct KlArgs {
    #[arg(long = "true")]
    pub truth: PathBuf,
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(2..))]
    pub samples: u64,
    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct MmdArgs {
    #[arg(long = "true")]
    pub truth: PathBuf,
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(2..))]
    pub m: u64,
    #[arg(long)]
    pub seed: u64,
    /// Frequency scale; defaults to the mean variance of the true GMM.
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, default_value = "ar", value_parser = ["gauss", "fgr", "ar"])]
    pub kind: String,
}

#[derive(Debug, Subcommand)]
pub enum BoundsCommand {
    /// Sketch size for K-component GMMs under any frequency law.
    Gmm(BoundsArgs),
    /// Sketch size for one Gaussian under an isotropic Gaussian frequency law.
    Gauss(BoundsArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BoundsArgs {
    #[arg(long, value_parser = positive_u64())]
    pub dim: u64,
    #[arg(long, default_value_t = 1, value_parser = positive_u64())]
    pub k: u64,
    #[arg(long)]
    pub eta: f64,
    #[arg(long)]
    pub rho: f64,
    #[arg(long)]
    pub sigma2_min: f64,
    #[arg(long)]
    pub sigma2_max: f64,
    #[arg(long)]
    pub mean_bound: f64,
    /// Chebyshev radius of the parameter set; defaults to that of the
    /// mean ball times the variance box.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Frequency scale of the Gaussian law N(0, (a/d) I).
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub dims: Vec<u64>,
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub ks: Vec<u64>,
    /// Sketch sizes as multiples of (2d+1)K.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub m_factors: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000, value_parser = positive_u64())]
    pub samples: u64,
    #[arg(long, default_value = "clompr", value_parser = ["clomp", "clompr", "split"])]
    pub algo: String,
    #[arg(long, default_value = "ar", value_parser = ["gauss", "fgr", "ar"])]
    pub kind: String,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(2..))]
    pub kl_samples: u64,
    #[arg(long, default_value_t = 1_000, value_parser = clap::value_parser!(u64).range(2..))]
    pub mmd_m: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CliError::usage(format!(
            "{THREADS_ENV} must be a non-negative integer, got '{raw}'"
        ))
    })?;
    // A pool may already exist when commands are replayed in-process.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Parses and executes one command line (without the binary name).
pub fn run_argv(argv: &[String]) -> CliResult<()> {
    let full = std::iter::once("sketchmix".to_string()).chain(argv.iter().cloned());
    let cli = match Cli::try_parse_from(full) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            e.print()?;
            return if code == 0 {
                Ok(())
            } else {
                Err(CliError::usage(""))
            };
        }
    };
    configure_threads()?;
    commands::dispatch(cli.command, argv)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match run_argv(&argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            e.exit_code()
        }
    }
}
