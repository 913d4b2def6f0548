//! `masolab`: drives the MASO analyses from an experiment config.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 a verification failed.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "masolab", version, about = "Max-affine spline operator laboratory")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Experiment config (JSON). Defaults to the built-in 2-45-3-4 toy setup.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment, training and dataset seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (else config `output_dir`, else $MASOLAB_OUT, else `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model file to analyse (else `<out>/model.json` if present, else a fresh
    /// network from the config).
    #[arg(long, global = true)]
    model: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Global,
    Local,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured dataset to `<out>/data.csv`.
    GenData,
    /// Train the configured network and save `<out>/model.json`.
    Train,
    /// Accuracy on the configured dataset.
    Eval,
    /// Affine decomposition `A[x] x + b[x]` at one dataset item.
    Decompose {
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Truncate after this many levels (default: full network).
        #[arg(long)]
        level: Option<usize>,
    },
    /// Checks decomposition, gradient-template identity and the MASO stack.
    Verify {
        #[arg(long, default_value_t = 100)]
        inputs: usize,
        #[arg(long, default_value_t = 1e-9, allow_negative_numbers = true)]
        tol: f64,
    },
    /// Template inner products and cosines, with SVG histograms.
    Templates,
    /// Region count estimate and occupancy CSV.
    Partition {
        #[arg(long, value_enum, default_value_t = ScopeArg::Global)]
        scope: ScopeArg,
        /// Level (default: deepest).
        #[arg(long)]
        level: Option<usize>,
    },
    /// Region occupancy of the dataset.
    Occupancy {
        #[arg(long, value_enum, default_value_t = ScopeArg::Global)]
        scope: ScopeArg,
        #[arg(long)]
        level: Option<usize>,
    },
    /// Per-level VQ distances between two dataset items.
    VqDist {
        #[arg(long)]
        a: usize,
        #[arg(long)]
        b: usize,
    },
    /// Nearest dataset items in code distance.
    Retrieve {
        #[arg(long, default_value_t = 0)]
        query: usize,
        #[arg(long)]
        k: Option<usize>,
        /// Draw inputs as `ROWSxCOLS` images in the SVG.
        #[arg(long)]
        image: Option<String>,
    },
    /// Lloyd clustering of the inputs and the Voronoi equivalence check.
    Kmeans {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Lipschitz table and sampled ratio check.
    Lipschitz {
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
    },
    /// Collinear-template optimum for a random unit input.
    Collinear {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = 8)]
        dim: usize,
    },
    /// Approximation error against hidden width.
    Universal,
    /// Soft-MASO evaluation of the first level against the hard one.
    SoftMaso,
    /// Accuracy with and without the bias term.
    BiasAblation,
    /// SVG figures.
    Render {
        #[arg(long)]
        partition: bool,
        #[arg(long)]
        histogram: bool,
        #[arg(long)]
        neighbors: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli.global, cli.command) {
        Ok(commands::Status::Ok) => ExitCode::SUCCESS,
        Ok(commands::Status::VerificationFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
