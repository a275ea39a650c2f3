//! `stcp`: command-line front end for changepoint detection on ordinal
//! space-time panels.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod manifest;

use commands::{FitFlags, SurfaceFlags};
use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "stcp", version, about = "Bayesian changepoint detection for ordinal space-time panels")]
struct Cli {
    /// Worker threads for chains and sibling segments (default: all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build and validate the panel and write it as panel.json
    Ingest(FitFlags),
    /// Fit the changepoint model (or the no-change model)
    Fit {
        #[command(flatten)]
        flags: FitFlags,
        /// Fit the model without a changepoint
        #[arg(long)]
        no_changepoint: bool,
    },
    /// Recursive binary segmentation into changepoints
    Segment(FitFlags),
    /// Write a synthetic panel's input tables and truth
    Simulate {
        /// True parameters (TOML); defaults when omitted
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// R-hat table from a directory of chain traces
    Diagnose {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, default_value_t = 1.1)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Log Bayes factor from a changepoint and a no-change summary
    Bf { change: PathBuf, nochange: PathBuf },
    /// Space-time correlation over a distance x lag grid
    CorrSurface(SurfaceFlags),
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::usage("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| CliError::usage(format!("cannot size the worker pool: {e}")))?;
    }
    match &cli.command {
        Command::Ingest(flags) => commands::ingest(flags),
        Command::Fit { flags, no_changepoint } => commands::fit(flags, *no_changepoint),
        Command::Segment(flags) => commands::segment(flags),
        Command::Simulate { params, seed, out } => commands::simulate_cmd(params.as_deref(), *seed, out),
        Command::Diagnose { traces, threshold, out } => commands::diagnose(traces, *threshold, out.as_deref()),
        Command::Bf { change, nochange } => commands::bf(change, nochange),
        Command::CorrSurface(flags) => commands::corr_surface(flags),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let err = CliError::usage(first);
            eprintln!("{}", err.line());
            return ExitCode::from(err.kind.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.kind.exit_code() as u8)
        }
    }
}
