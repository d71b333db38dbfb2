//! Command-line entry point: trains artifacts, runs sweeps and the demo.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use splitguard::detector::Variant;
use splitguard::eval::demo_config;
use splitguard::noise::NoiseLevel;

use commands::Failure;
use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "splitguard", version, about = "Split-inference attack and detection testbench")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root for artifacts and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Train missing checkpoints from the config seeds.
    #[arg(long, global = true)]
    auto: bool,
    /// Restrict to one channel preset: none|light|moderate|severe|extreme.
    #[arg(long, global = true)]
    noise: Option<NoiseLevel>,
    /// Restrict to one detector variant: NA|NU|radius.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Restrict to one cut: early|mid|deep.
    #[arg(long, global = true)]
    cut: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the classifier and write its checkpoint and log.
    TrainClassifier,
    /// Train the attack VAE for each (cut, preset) from unlabeled features.
    TrainAttack,
    /// Train the adVAE and one boundary per variant for each (cut, preset).
    TrainDetector,
    /// Run the configured sweep and write CSV/JSON reports.
    Sweep,
    /// Train everything small, screen a mixed stream and print a summary.
    Demo,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => config::read(p)?,
        None if matches!(cli.command, Command::Demo) => RunConfig {
            name: "demo".into(),
            scenario: demo_config(cli.seed.unwrap_or(7)),
            ..RunConfig::default()
        },
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        noise: cli.noise,
        variant: cli.variant,
        cut: cli.cut,
    };
    let run = file.resolve(&overrides)?;
    match cli.command {
        Command::TrainClassifier => {
            println!("{}", commands::train_classifier(&run)?.display());
        }
        Command::TrainAttack => {
            for p in commands::train_attack(&run, cli.auto)? {
                println!("{}", p.display());
            }
        }
        Command::TrainDetector => {
            for p in commands::train_detector(&run, cli.auto)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep => {
            let outcome = commands::sweep(&run, cli.auto)?;
            let ok = outcome.rows.iter().filter(|r| r.succeeded()).count();
            println!("{} rows ({} ok) written to {}", outcome.rows.len(), ok, outcome.dir.display());
        }
        Command::Demo => {
            let dir = commands::demo(&run)?;
            println!("report written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
