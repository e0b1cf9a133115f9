use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coflow_cli::{
    ensure_complete, hypotheses_for, parse_values, run_experiment, sweep, CliError, CliResult,
    Experiment, SweepParam,
};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "coflow",
    version,
    about = "Run regularized inertial-dynamics experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate every run in a config and write its artifacts.
    Run { config: PathBuf },
    /// Repeat a config over several values of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values; fractions like 1/3 are allowed.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
    },
    /// Print the hypothesis report of each run without integrating.
    Check { config: PathBuf },
}

#[derive(Serialize)]
struct Labeled<T> {
    label: String,
    #[serde(flatten)]
    inner: T,
}

fn print_json<T: Serialize>(value: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Run { config } => {
            let arts = run_experiment(&config)?;
            for a in &arts {
                eprintln!("{}: wrote {}", a.label, a.directory.display());
            }
            ensure_complete(&arts)
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let exp = Experiment::load(&config)?;
            let outcome = sweep(&exp, param, &parse_values(&values)?)?;
            eprintln!("wrote {}", outcome.rates_csv.display());
            let mut failed = outcome.failures();
            for (_, r) in &outcome.runs {
                if let Ok(arts) = r {
                    failed += usize::from(ensure_complete(arts).is_err());
                }
            }
            if failed > 0 {
                return Err(CliError::PartialFailure {
                    failed,
                    total: outcome.runs.len(),
                });
            }
            Ok(())
        }
        Command::Check { config } => {
            let exp = Experiment::load(&config)?;
            let reports = exp
                .runs()?
                .iter()
                .map(|r| {
                    Ok(Labeled {
                        label: r.label.clone(),
                        inner: hypotheses_for(r)?,
                    })
                })
                .collect::<CliResult<Vec<_>>>()?;
            print_json(&reports);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{}",
                serde_json::to_string(&e.report()).expect("serializable")
            );
            ExitCode::from(match e {
                CliError::Config { .. } => 2,
                CliError::PartialFailure { .. } => 3,
                _ => 1,
            })
        }
    }
}
