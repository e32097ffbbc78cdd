use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rieszlab::harness::{self, ExperimentConfig};
use rieszlab::Error;

#[derive(Parser)]
#[command(name = "rieszlab", version, about = "Riesz transform experiments on discretized elliptic operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Directory for the CSV and JSON outputs (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (overrides `threads`).
        #[arg(long)]
        threads: Option<usize>,
        /// Random seed (overrides `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the registered experiments.
    List,
    /// Check a config file without running it.
    Validate { config: PathBuf },
}

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn is_usage_error(err: &anyhow::Error) -> bool {
    matches!(
        err.downcast_ref::<Error>(),
        Some(Error::Config(_) | Error::FieldSpec { .. } | Error::UnknownExperiment(_) | Error::Schedule(_))
    )
}

fn load(path: &PathBuf) -> anyhow::Result<ExperimentConfig> {
    ExperimentConfig::from_path(path).with_context(|| format!("loading {}", path.display()))
}

fn execute(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::List => {
            for (id, summary) in harness::descriptions() {
                println!("{id:<26}{summary}");
            }
            Ok(0)
        }
        Command::Validate { config } => {
            let cfg = load(&config)?;
            println!("{}: ok ({})", config.display(), cfg.experiment);
            Ok(0)
        }
        Command::Run { config, out, threads, seed } => {
            let mut cfg = load(&config)?;
            if let Some(dir) = out {
                cfg.output_dir = Some(dir);
            }
            if threads.is_some() {
                cfg.threads = threads;
            }
            if let Some(s) = seed {
                cfg.set_seed(s)?;
            }
            let report = harness::run(&cfg).with_context(|| format!("running {}", cfg.experiment))?;
            print!("{}", report.summary());
            println!(
                "{}: {} in {:.1} s",
                report.experiment,
                if report.passed { "PASS" } else { "FAIL" },
                report.wall_clock_seconds
            );
            if let Some(dir) = &cfg.output_dir {
                println!("wrote {}", dir.display());
            }
            Ok(if report.passed { 0 } else { EXIT_FAIL })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_usage_error(&err) { EXIT_USAGE } else { EXIT_INTERNAL })
        }
    }
}
