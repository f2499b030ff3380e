//! Command line front end: model I/O, lowering, verification, density
//! reports, sigmoidal-sum fitting, pruning, and low-rank merging.
//!
//! Exit codes: 0 on success, 1 when a verification tolerance is breached,
//! 2 for unparseable files or bad invocations, 3 for shape or math
//! precondition violations.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "uatlab",
    version,
    about = "Lower transformer sublayers to explicit matrices, verify them against reference \
             forward passes, and run sigmoidal-sum, pruning, and low-rank experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Which width the attention score denominator uses.
#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleRootArg {
    /// Divide scores by the square root of the full model width.
    #[value(alias = "M")]
    M,
    /// Divide scores by the square root of the per-head width.
    #[value(alias = "D")]
    D,
}

#[derive(Subcommand)]
enum Command {
    /// Lower one layer at an input and dump the explicit operator.
    Lower {
        #[arg(long)]
        model: PathBuf,
        /// Zero-based layer index; earlier layers are applied to the input first.
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ScaleRootArg::M)]
        scale_root: ScaleRootArg,
        /// Magnitude threshold for the printed density summary.
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
    },
    /// Check lowered operators against the reference forward pass.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Verify a stored operator dump instead of a fresh lowering.
        #[arg(long)]
        lowered: Option<PathBuf>,
        /// Layer the stored dump belongs to (required with --lowered).
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, value_enum, default_value_t = ScaleRootArg::M)]
        scale_root: ScaleRootArg,
    },
    /// Measure operator density and per-row/column occupancy.
    Density {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        /// Write per-row/column counts as TSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ScaleRootArg::M)]
        scale_root: ScaleRootArg,
    },
    /// Fit a sigmoidal sum to a named target and save it.
    UatFit {
        #[arg(long)]
        target: String,
        #[arg(long)]
        n_terms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        ridge: f64,
        /// Grid points per dimension (defaults to the target's own grid).
        #[arg(long)]
        grid: Option<usize>,
        /// Hidden-weight sampling scale (defaults to 4·N^(1/n)).
        #[arg(long)]
        scale: Option<f64>,
        /// Write per-point fit-vs-target plot data as TSV.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Measure a saved sigmoidal sum against a named target.
    UatError {
        #[arg(long)]
        sum: PathBuf,
        #[arg(long)]
        target: String,
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Drop low-contribution terms from a saved sigmoidal sum.
    PruneTerms {
        #[arg(long)]
        sum: PathBuf,
        #[arg(long)]
        target: String,
        /// Absolute score threshold (alternative to --percentile).
        #[arg(long)]
        threshold: Option<f64>,
        /// Score percentile in [0, 100] defining the threshold.
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        grid: Option<usize>,
        /// Write per-term score/kept plot data as TSV.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Zero small entries of a lowered operator and bound the deviation.
    PruneEntries {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        input: PathBuf,
        /// Absolute entry threshold (alternative to --percentile).
        #[arg(long)]
        threshold: Option<f64>,
        /// Entry-magnitude percentile in [0, 100] defining the threshold.
        #[arg(long)]
        percentile: Option<f64>,
        /// Number of calibration inputs (the layer input plus seeded draws).
        #[arg(long, default_value_t = 20)]
        calib: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ScaleRootArg::M)]
        scale_root: ScaleRootArg,
    },
    /// Merge a low-rank update into a linear layer and save the new model.
    LoraMerge {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        update: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the update's merge multiplier.
        #[arg(long)]
        scale: Option<f64>,
    },
    /// Fit a low-rank update to input/output pairs of a linear layer.
    LoraFit {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        layer: usize,
        /// Pairs file with sample columns x and y.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 50)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
