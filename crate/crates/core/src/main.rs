use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use drlkit::config::{load_config, RunConfig};
use drlkit::trainer::{
    average_files, score_path, train_to, write_averaged, DEFAULT_GRID_POINTS, DEFAULT_WINDOW,
};
use drlkit::Result;

#[derive(Debug, Parser)]
#[command(
    name = "drlkit",
    version,
    about = "Configuration-driven deep reinforcement learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one or more seeds of a run file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Number of runs; defaults to `run.n_runs`.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        runs: Option<u64>,
        /// First seed; run k uses seed + k. Defaults to `run.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `run.output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Train the runs concurrently.
        #[arg(long)]
        parallel_runs: bool,
    },
    /// Average score files onto a common transition grid.
    Average {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid_points: usize,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
    },
}

fn cmd_train(
    config: &Path,
    runs: Option<u64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    parallel: bool,
) -> Result<()> {
    let cfg = load_config(config)?;
    let runs = match runs {
        Some(r) => r,
        None => cfg.run.u64("n_runs")?,
    };
    let first = seed.unwrap_or_else(|| cfg.seed());
    let out = match out {
        Some(o) => o,
        None => PathBuf::from(cfg.run.str("output_dir")?),
    };
    let configs: Vec<RunConfig> = (0..runs).map(|k| cfg.with_seed(first + k)).collect();
    let run = |c: &RunConfig| train_to(c, &out).map(|a| a.score_path);
    let files = if parallel {
        configs.par_iter().map(run).collect::<Result<Vec<_>>>()?
    } else {
        configs.iter().map(run).collect::<Result<Vec<_>>>()?
    };
    debug_assert_eq!(files[0], score_path(&out, &cfg.name, first));
    if runs > 1 {
        let curve = average_files(&files, DEFAULT_GRID_POINTS, DEFAULT_WINDOW)?;
        write_averaged(&curve, &out.join(format!("{}_avg.dat", cfg.name)))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            runs,
            seed,
            out,
            parallel_runs,
        } => cmd_train(&config, runs, seed, out, parallel_runs),
        Command::Average {
            files,
            out,
            grid_points,
            window,
        } => average_files(&files, grid_points, window).and_then(|c| write_averaged(&c, &out)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
