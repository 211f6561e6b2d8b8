use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use graphout::cli::{self, ExperimentConfig, GridConfig, Overrides};

/// Train and compare graph neural networks with different readout functions.
#[derive(Parser)]
#[command(name = "graphout", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Base seed; repetition i uses seed + i.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of repetitions per configuration.
    #[arg(long, global = true)]
    repeats: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads for concurrent repetitions.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration.
    Run { config: PathBuf },
    /// Sweep datasets × convolutions × readouts.
    Grid { config: PathBuf },
    /// Rebuild the results table and the parameter/metric scatter from a CSV.
    Report { csv: PathBuf },
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let overrides = Overrides {
        seed: args.seed,
        repeats: args.repeats,
        out_dir: args.out_dir.clone(),
        threads: args.threads,
    };
    match execute(args.command, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cmd: Command, overrides: &Overrides) -> graphout::Result<()> {
    match cmd {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            overrides.apply(&mut cfg.run)?;
            let rows = cli::cmd_run(&cfg)?;
            let table = cli::build_table(&rows);
            print!("{}", table.render());
            println!("results: {}", cfg.run.out_dir.join(cli::RESULTS_FILE).display());
        }
        Command::Grid { config } => {
            let mut grid = GridConfig::load(&config)?;
            overrides.apply(&mut grid.run)?;
            let out = cli::cmd_grid(&grid)?;
            print!("{}", out.table.render());
            for (cell, msg) in &out.failures {
                eprintln!("cell {cell} failed: {msg}");
            }
            println!("results: {}", grid.run.out_dir.join(cli::RESULTS_FILE).display());
        }
        Command::Report { csv } => {
            let out = cli::cmd_report(&csv, overrides.out_dir.as_deref())?;
            print!("{}", out.table.render());
        }
    }
    Ok(())
}
