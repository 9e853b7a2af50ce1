//! `scherk`: build domains, check the Jenkins–Serrin conditions, solve the
//! exhaustion, assemble twisted Scherk surfaces and tabulate runs.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 verification failure,
//! 3 solver non-convergence.

mod commands;
mod params;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SCHERK_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "scherk", version, about = "Minimal graphs and twisted Scherk surfaces in H2 x R")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a domain file (angles in radians).
    Domain(DomainArgs),
    /// Run the Jenkins-Serrin check on a domain file.
    Check {
        domain: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Solve the exhaustion over a domain and export the final graph.
    Solve {
        domain: PathBuf,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Build the twisted Scherk surface: `assemble k=2 theta=0.5236 beta=0.0873`.
    Assemble {
        /// `k=…`, `theta=…` and, for k ≥ 2, `beta=…`.
        #[arg(required = true)]
        params: Vec<String>,
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Convergence table and summary of a run artifact.
    Report {
        run: PathBuf,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct DomainKind {
    /// Ideal 2k-gon: `angles=a1,a2,...`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    scherk: Option<Vec<String>>,
    /// Solved domain of Σ_k: `k=… theta=… [beta=…]`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    twisted: Option<Vec<String>>,
    /// Fan Ω_θ, or Ω_{θ,β} when `beta` is given: `k=… theta=… [beta=…]`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    fan: Option<Vec<String>>,
}

#[derive(Args, Debug)]
struct DomainArgs {
    #[command(flatten)]
    kind: DomainKind,
    /// Output file (default `domain.json` in the output directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory (default: $SCHERK_OUT_DIR, else the current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    /// Exhaustion config file (JSON); overrides the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of exhaustion steps in the default schedule.
    #[arg(long, default_value_t = 4)]
    steps: usize,
    /// Mesh scale of the first step.
    #[arg(long, default_value_t = 0.4)]
    h1: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Domain(a) => commands::domain(&a),
        Command::Check { domain, out } => commands::check(&domain, &out),
        Command::Solve { domain, schedule, out } => commands::solve(&domain, &schedule, &out),
        Command::Assemble { params, schedule, out } => commands::assemble(&params, &schedule, &out),
        Command::Report { run, out } => commands::report(&run, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
