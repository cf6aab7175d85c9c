use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use pqcm_lab::report::{self, Format, RunFlags, TOL_ENV};

#[derive(Parser)]
#[command(
    name = "pqcm-lab",
    version,
    about = "Probabilistic cloning and no-signalling experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file, or every `*.json` in a directory.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Report file, or output directory for a batch.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: FormatArg,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Scenarios run concurrently in batch mode.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match cli.command {
        Command::Run {
            scenario,
            out,
            format,
            tol,
            seed,
            jobs,
        } => {
            let flags = RunFlags {
                out,
                format: match format {
                    FormatArg::Json => Format::Json,
                    FormatArg::Csv => Format::Csv,
                },
                tol,
                seed,
                jobs,
                env_tol: std::env::var(TOL_ENV).ok(),
            };
            ExitCode::from(report::run(&scenario, &flags) as u8)
        }
    }
}
