//! `mcorr`: simulate motion-corrupted scans, segment regions of interest,
//! run gradient-descent correction, score image pairs, sweep objective
//! ablations, and verify analytic gradients — all driven by a JSON run
//! configuration with flag overrides, emitting deterministic artifacts.
//!
//! Exit codes: 0 success, 1 runtime or tolerance failure, 2 usage or
//! configuration error.

mod commands;
mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mcorr", version, about = "Motion-artifact simulation, correction, and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Worker threads (0 = library default). Read from MCORR_THREADS when
    /// the flag is absent.
    #[arg(long, env = "MCORR_THREADS", default_value_t = 0)]
    threads: usize,
}

/// Overrides that win over the corresponding config-file values.
#[derive(Args)]
struct LossOverrides {
    /// Fraction of admitted patches kept in the selection.
    #[arg(long)]
    rho: Option<f64>,
    /// Side length of the square patches.
    #[arg(long)]
    patch_size: Option<usize>,
    /// Threshold that binarizes images for the overlap score.
    #[arg(long)]
    dice_threshold: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SegmentArgs {
    /// Run configuration (JSON) providing the segmenter and prompts.
    #[arg(long)]
    config: PathBuf,
    /// Image to segment.
    #[arg(long)]
    image: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CorrectArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Motion-corrupted input image.
    #[arg(long)]
    corrupted: PathBuf,
    /// Ground-truth reference image.
    #[arg(long)]
    gt: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    loss: LossOverrides,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Optional run configuration providing loss defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground-truth reference image.
    #[arg(long)]
    gt: PathBuf,
    /// Image under test.
    #[arg(long)]
    test: PathBuf,
    /// Optional region mask (PGM); an empty mask falls back to unmasked
    /// selection.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Output directory for the report files.
    #[arg(long)]
    out: PathBuf,
    /// Case label in the report; defaults to the test file stem.
    #[arg(long)]
    case_id: Option<String>,
    #[command(flatten)]
    loss: LossOverrides,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct AblateArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    loss: LossOverrides,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Optional run configuration; only its seed is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a reference scan and its motion-corrupted counterpart.
    Simulate(SimulateArgs),
    /// Segment a region of interest from prompt points.
    Segment(SegmentArgs),
    /// Correct a corrupted image by gradient descent on the selective
    /// SSIM objective.
    Correct(CorrectArgs),
    /// Score a test image against a reference and write a metrics report.
    Evaluate(EvaluateArgs),
    /// Compare correction objectives across the three ablation arms.
    Ablate(AblateArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

fn threads_of(cmd: &Command) -> usize {
    match cmd {
        Command::Simulate(a) => a.common.threads,
        Command::Segment(a) => a.common.threads,
        Command::Correct(a) => a.common.threads,
        Command::Evaluate(a) => a.common.threads,
        Command::Ablate(a) => a.common.threads,
        Command::Gradcheck(a) => a.common.threads,
    }
}

fn run(cmd: Command) -> mcorr_core::Result<i32> {
    match cmd {
        Command::Simulate(args) => commands::simulate(args),
        Command::Segment(args) => commands::segment(args),
        Command::Correct(args) => commands::correct(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Gradcheck(args) => commands::gradcheck(args),
    }
}

fn main() {
    let cli = Cli::parse();
    // A command-local pool keeps runs reproducible at any --threads value:
    // the numerical kernels only parallelize over independent outputs.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads_of(&cli.command))
        .build();
    let code = match pool {
        Ok(pool) => match pool.install(|| run(cli.command)) {
            Ok(code) => code,
            Err(err) => {
                eprintln!("error: {err}");
                if err.is_config_or_usage() {
                    2
                } else {
                    1
                }
            }
        },
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    };
    std::process::exit(code);
}
