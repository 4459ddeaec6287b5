use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use privlearn::config::ExperimentConfig;
use privlearn::sweep::{self, SweepError};

#[derive(Parser)]
#[command(
    name = "privlearn",
    about = "Differentially private distributed sparse online learning simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every grid cell x seed of a config and write CSV artifacts.
    Run {
        /// Path to a TOML experiment config.
        config: PathBuf,
        /// Output directory (overrides `output_dir` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the horizon from the config.
        #[arg(long)]
        rounds: Option<usize>,
        /// Override epsilon: a positive number or `inf`.
        #[arg(long)]
        epsilon: Option<String>,
    },
    /// Run one of the built-in study presets.
    Preset {
        /// fig2_privacy | fig3_topology | fig4_sparsity | fig5_nodes
        name: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Write the expanded config TOML instead of running it.
        #[arg(long)]
        config_only: bool,
    },
    /// Parse and validate a config, reporting the first problem.
    Validate {
        config: PathBuf,
    },
}

fn execute(config: &ExperimentConfig, out: PathBuf) -> Result<(), SweepError> {
    let report = sweep::run_sweep(config, &out)?;
    println!(
        "completed {} cells; summary at {}",
        report.outcomes.len(),
        report.summary_path.display()
    );
    Ok(())
}

fn run() -> Result<(), u8> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            rounds,
            epsilon,
        } => {
            let mut config = ExperimentConfig::from_path(&config).map_err(|e| {
                eprintln!("error: {e}");
                2u8
            })?;
            if let Some(rounds) = rounds {
                config.rounds = rounds;
            }
            if let Some(eps) = epsilon {
                config.epsilon = match eps.parse::<f64>() {
                    Ok(v) => privlearn::config::EpsilonSpec::Number(v),
                    Err(_) => privlearn::config::EpsilonSpec::Text(eps),
                };
            }
            config.validate().map_err(|e| {
                eprintln!("error: {e}");
                2u8
            })?;
            let out = out
                .or_else(|| config.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            execute(&config, out).map_err(|e| {
                eprintln!("error: {e}");
                e.exit_code()
            })
        }
        Command::Preset {
            name,
            out,
            config_only,
        } => {
            let config = sweep::preset(&name).map_err(|e| {
                eprintln!("error: {e}");
                2u8
            })?;
            if config_only {
                let path = out.join(format!("{name}.toml"));
                std::fs::create_dir_all(&out)
                    .and_then(|()| std::fs::write(&path, config.to_toml()))
                    .map_err(|e| {
                        eprintln!("error: {e}");
                        1u8
                    })?;
                println!("wrote {}", path.display());
                Ok(())
            } else {
                execute(&config, out).map_err(|e| {
                    eprintln!("error: {e}");
                    e.exit_code()
                })
            }
        }
        Command::Validate { config } => {
            ExperimentConfig::from_path(&config).map_err(|e| {
                eprintln!("error: {e}");
                2u8
            })?;
            println!("ok");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => ExitCode::from(code),
    }
}
