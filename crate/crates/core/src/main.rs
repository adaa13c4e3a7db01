use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hetlmf::cli::config::{ExperimentConfig, LagSpec};
use hetlmf::cli::experiments::{run_experiment, Preset, PresetOptions, DEFAULT_SEED};
use hetlmf::cli::run::{run_calibrate, run_simulate, run_theory, SimulateOverrides};
use hetlmf::error::Result;

#[derive(Parser)]
#[command(name = "hetlmf", version, about = "Order-splitting market simulator and exact ACF theory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a configured population and write ACF, theory and metaorder files.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<usize>,
        /// Also write each replica's sign series as raw int8.
        #[arg(long)]
        save_signs: bool,
    },
    /// Run a reproduction preset: fig3, fig4, fig5, fig7, bounds or oracle.
    Experiment {
        #[arg(value_parser = parse_preset)]
        preset: Preset,
        #[arg(long)]
        out: PathBuf,
        /// Simulation length override (vector count for `bounds`).
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Print the exact market ACF of a configured population as CSV.
    Theory {
        #[arg(long)]
        config: PathBuf,
        /// `a..b`, `geom:N` or a comma list.
        #[arg(long)]
        lags: String,
    },
    /// Fit an ACF file and report the lower bound on the number of splitters.
    Calibrate {
        #[arg(long)]
        acf: PathBuf,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
    },
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: hetlmf::error::Error| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            seed,
            replicas,
            save_signs,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let overrides = SimulateOverrides {
                seed,
                replicas,
                save_signs,
            };
            let manifest = run_simulate(&cfg, &out, &overrides)?;
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            emit(&(serde_json::to_string_pretty(&manifest)? + "\n"))?;
        }
        Command::Experiment {
            preset,
            out,
            steps,
            seed,
        } => {
            let (manifest, report) = run_experiment(preset, &out, &PresetOptions { steps, seed })?;
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!("{preset}: {}", if report.passed() { "all checks hold" } else { "some checks failed" });
            emit(&(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
        Command::Theory { config, lags } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let lags = LagSpec::parse(&lags)?;
            emit(&run_theory(&cfg, &lags.0)?.to_csv())?;
        }
        Command::Calibrate { acf, mu, gamma } => {
            let report = run_calibrate(&acf, mu, gamma)?;
            emit(&(serde_json::to_string_pretty(&report)? + "\n"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
