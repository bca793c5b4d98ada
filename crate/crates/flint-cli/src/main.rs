//! flint — generate ensembles, train the interpolation model, reconstruct
//! missing timesteps, evaluate, and emit figures.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 configuration, 5 data alignment.

mod commands;

use clap::{Parser, Subcommand};
use flint::FlintError;

#[derive(Parser)]
#[command(name = "flint", version, about = "Flow estimation and temporal interpolation for scalar-field ensembles")]
struct Cli {
    /// Worker parallelism cap (falls back to FLINT_JOBS, then all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a ground-truth ensemble archive from a preset.
    Gen(commands::GenArgs),
    /// Train the model on an archive.
    Train(commands::TrainArgs),
    /// Interpolate a subsampled archive with a trained checkpoint.
    Infer(commands::InferArgs),
    /// Linear-interpolation baseline over a subsampled archive.
    Baseline(commands::BaselineArgs),
    /// Compare predictions against ground truth and write a report.
    Eval(commands::EvalArgs),
    /// Emit figures (density, HSV flow, glyphs, difference maps, pathlines).
    Viz(commands::VizArgs),
}

fn exit_code(err: &FlintError) -> i32 {
    match err {
        FlintError::Io(_) | FlintError::MissingFile(_) | FlintError::Conflict(_) => 3,
        FlintError::Misaligned(_) => 5,
        _ => 4,
    }
}

fn main() {
    let cli = Cli::parse();
    let jobs = cli.jobs.or_else(|| {
        std::env::var("FLINT_JOBS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
    let result = match cli.command {
        Command::Gen(args) => commands::run_gen(args),
        Command::Train(args) => commands::run_train(args),
        Command::Infer(args) => commands::run_infer(args),
        Command::Baseline(args) => commands::run_baseline(args),
        Command::Eval(args) => commands::run_eval(args),
        Command::Viz(args) => commands::run_viz(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
