use clap::{Parser, Subcommand};
use fosb_cli::config::Command;
use fosb_cli::{default_out, run, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fosb",
    version,
    about = "Shape-uncertainty acoustic scattering experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `out/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Sub {
    /// Discretization error against the series solution on a circle or sphere.
    Converge(Common),
    /// Zeroth- and first-order far-field approximation errors.
    Foa(Common),
    /// Second moment of the shape derivative by the combination technique.
    Ct(Common),
    /// First-order statistics against Monte Carlo.
    Mc(Common),
    /// Iteration counts, spectra and Calderón identities per level.
    Diagnose(Common),
}

fn main() -> ExitCode {
    let (command, common) = match Cli::parse().command {
        Sub::Converge(c) => (Command::Converge, c),
        Sub::Foa(c) => (Command::Foa, c),
        Sub::Ct(c) => (Command::Ct, c),
        Sub::Mc(c) => (Command::Mc, c),
        Sub::Diagnose(c) => (Command::Diagnose, c),
    };
    let opts = RunOptions {
        out: common.out.unwrap_or_else(|| default_out(command)),
        config: common.config,
        threads: common.threads,
        seed: common.seed,
    };
    match run(command, &opts) {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report["summary"]).unwrap_or_default()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::to_string(&e).unwrap_or_else(|_| e.to_string())
            );
            ExitCode::from(e.category.exit_code() as u8)
        }
    }
}
