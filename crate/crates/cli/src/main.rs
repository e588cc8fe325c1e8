//! `tissf`: offline tuning, compatibility verification and closed-loop
//! simulation for TISSf safety filters.
//!
//! Exit codes: 0 success, 1 configuration error, 2 tuning LP infeasible or
//! unbounded, 3 no usable samples, 4 safety QP infeasible during simulation,
//! 5 non-finite state, 6 verification found violations.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use commands::{Context, EXIT_CONFIG};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "tissf", version, about = "Input-constraint-compatible TISSf tuning and safety filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the seed given in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Synthesize tuning parameters and write tuning_result.json.
    Tune,
    /// Run closed-loop scenarios and write <name>_trajectory.csv and <name>_summary.json.
    Simulate,
    /// Check compatibility of given parameters on a sample set and write verify.json.
    Verify,
    /// Print support values and points of a set as JSON lines.
    Support,
    /// Summarize the artifacts in the output directory into report.json.
    Report,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .init();
    let ctx = Context {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
    };
    let result = match cli.command {
        Command::Tune => commands::tune(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Verify => commands::verify(&ctx),
        Command::Support => commands::support(&ctx),
        Command::Report => commands::report(&ctx),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            std::process::exit(f.code);
        }
    }
}
