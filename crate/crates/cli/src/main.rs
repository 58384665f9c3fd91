use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedrough_cli::commands;
use fedrough_cli::{parse_config, threads_from_env};

/// Deterministic federated-learning simulator.
#[derive(Parser)]
#[command(name = "fedrough", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Override the number of replicates.
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write metrics.csv, per-seed files and mean.csv.
    Run(Common),
    /// Run the [sweep] grid and write one file per point plus sweep_summary.csv.
    Sweep(Common),
    /// Record per-client roughness indices each round in ri_trace.csv.
    RiProbe(Common),
    /// Write the client class histograms to partition_stats.csv.
    Partition(Common),
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let threads = threads_from_env()?;
    let (Command::Run(c) | Command::Sweep(c) | Command::RiProbe(c) | Command::Partition(c)) = &cli.command;
    let mut cfg = parse_config(&c.config)?;
    if let Some(s) = c.seeds {
        cfg.seeds = s;
        cfg.validate()?;
    }
    match &cli.command {
        Command::Run(_) => commands::cmd_run(&cfg, &c.out, threads),
        Command::Sweep(_) => commands::cmd_sweep(&cfg, &c.out, threads),
        Command::RiProbe(_) => commands::cmd_ri_probe(&cfg, &c.out, threads),
        Command::Partition(_) => commands::cmd_partition(&cfg, &c.out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
