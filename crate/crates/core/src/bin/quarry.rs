//! Command-line entry point.
//!
//! Exit codes: 0 success, 2 config error, 3 runtime error, 4 budget halt.

use clap::{Parser, Subcommand};
use quarry_core::error::Error;
use quarry_core::metrics::ReportFormat;
use quarry_core::orchestrator::config::{RunConfig, RunMode};
use quarry_core::orchestrator::{report, run, trace_node};
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_BUDGET: u8 = 4;

#[derive(Parser)]
#[command(
    name = "quarry",
    version,
    about = "Black-box failure discovery for LLM agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run (resumes automatically over a partial run directory).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run directory; defaults to out_dir from the config file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's mode.
        #[arg(long)]
        mode: Option<RunMode>,
    },
    /// Recompute and render the metrics report from a run directory.
    Report {
        run_dir: PathBuf,
        /// Baseline corpus (one query per line) for percent deltas.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// table, csv, or struct.
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
    /// Print the lineage of a prompt or query node.
    Trace { run_dir: PathBuf, node_id: String },
    /// Check a config file without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Validation(_) | Error::Template { .. } => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            exit_for(&err)
        }
    };
    ExitCode::from(code)
}

fn dispatch(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run { config, out, mode } => {
            let mut run_config = RunConfig::load(&config)?;
            if let Some(mode) = mode {
                run_config.mode = mode;
            }
            let out_dir = out
                .or_else(|| run_config.out_dir.clone())
                .ok_or_else(|| Error::Config("no run directory: pass --out or set out_dir".into()))?;
            let outcome = run(&run_config, &out_dir)?;
            println!("run directory: {}", outcome.run_dir.display());
            print!("{}", outcome.report.render(ReportFormat::Table));
            if outcome.halted_on_budget {
                eprintln!("run halted on token budget");
                return Ok(EXIT_BUDGET);
            }
            Ok(EXIT_OK)
        }
        Command::Report {
            run_dir,
            baseline,
            format,
        } => {
            let (_, rendered) = report(&run_dir, baseline.as_deref(), format)?;
            print!("{rendered}");
            Ok(EXIT_OK)
        }
        Command::Trace { run_dir, node_id } => {
            let rendered = trace_node(&run_dir, &node_id)?;
            print!("{rendered}");
            Ok(EXIT_OK)
        }
        Command::Validate { config } => {
            let run_config = RunConfig::load(&config)?;
            run_config.validate()?;
            quarry_core::model::validate_objective(run_config.objective.clone())?;
            println!("config ok");
            Ok(EXIT_OK)
        }
    }
}
