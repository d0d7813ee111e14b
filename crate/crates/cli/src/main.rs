//! `voltplan`: plan, verify and report reactive power investments.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use voltplan_core::Error;

use crate::config::ConfigArgs;

#[derive(Parser, Debug)]
#[command(name = "voltplan", version, about = "Reactive power planning for grids with high PV penetration")]
struct Cli {
    /// Worker threads for per-scenario planning and per-step verification.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Screen the year, plan the worst scenarios and combine the plans.
    Plan {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Re-simulate the year with a plan and compare against the base case.
    Verify {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Final plan JSON written by `plan`.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Render figures from a verification report.
    Report {
        /// report.json written by `verify`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Svg)]
        format: ReportFormat,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve one scheduled power flow and print the solution.
    Powerflow {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Time step to solve; the case's own demand is used when absent.
        #[arg(long)]
        at: Option<String>,
        /// Also write the solution as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write the synthetic profile year as CSV.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Svg,
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::InvalidInput("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Plan { cfg, out } => commands::plan(&cfg.resolve()?, &out),
        Command::Verify { cfg, plan, out } => commands::verify(&cfg.resolve()?, &plan, &out),
        Command::Report { report, format, out } => report::render(&report, format, &out),
        Command::Powerflow { cfg, at, json } => commands::powerflow(&cfg.resolve()?, at.as_deref(), json.as_deref()),
        Command::Synth { cfg, out } => commands::synth(&cfg.resolve()?, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::json!({
                "error": { "kind": e.kind(), "exit_code": e.exit_code(), "message": e.to_string() }
            });
            eprintln!("{body}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
