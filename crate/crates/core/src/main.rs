use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use dassim::runner::{any_incomplete, execute_plan, OutputFormat, Plan};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Batch runner for custody dissemination experiments.
#[derive(Parser, Debug)]
#[command(name = "dassim", version, about)]
struct Cli {
    /// Sweep config file (flat key = value; lists declare sweeps).
    #[arg(long)]
    config: PathBuf,

    /// Directory for per-run outputs and the sweep summary.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,

    /// Concurrent workers; defaults to available parallelism.
    #[arg(long)]
    jobs: Option<usize>,

    /// Overrides the config file's base seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Time-series output format.
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,

    /// Also emit plot-data files (missing vs time with theoretical level).
    #[arg(long)]
    plot: bool,

    /// Print the expanded run list and exit without simulating.
    #[arg(long)]
    dry_run: bool,

    /// Also dump each run's topic meshes for debugging.
    #[arg(long)]
    dump_topology: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    let plan = Plan {
        config_path: cli.config,
        out_dir: cli.out_dir,
        jobs,
        seed_override: cli.seed,
        format: match cli.format {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        },
        plot: cli.plot,
        dry_run: cli.dry_run,
        dump_topology: cli.dump_topology,
    };
    match execute_plan(&plan) {
        Ok(summaries) => {
            if any_incomplete(&summaries) {
                eprintln!("note: some runs did not complete; see summary.csv");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
