use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gomkl::experiment::{cmd_run, cmd_sweep_quantization, cmd_sweep_topology, ExperimentConfig, ExperimentError};

/// Decentralized online multi-kernel learning simulator.
#[derive(Debug, Parser)]
#[command(name = "gomkl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory (overrides `out` in the config file).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated seeds (overrides `seeds` in the config file).
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the configured protocol and its baselines.
    Run { config: PathBuf },
    /// Compare the complete graph, the ring and the path.
    SweepTopology { config: PathBuf },
    /// Compare quantization levels against the identity quantizer.
    SweepQuantization { config: PathBuf },
}

fn execute(cli: Cli) -> Result<String, ExperimentError> {
    let path = match &cli.command {
        Command::Run { config } | Command::SweepTopology { config } | Command::SweepQuantization { config } => config,
    };
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seeds) = cli.seeds {
        config = config.with_seeds(seeds)?;
    }
    if let Some(out) = cli.out {
        config = config.with_out(out);
    }
    let report = match cli.command {
        Command::Run { .. } => cmd_run(&config)?,
        Command::SweepTopology { .. } => cmd_sweep_topology(&config)?,
        Command::SweepQuantization { .. } => cmd_sweep_quantization(&config)?,
    };
    Ok(report.summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                ExperimentError::Config(lines) => {
                    for l in lines {
                        eprintln!("config error: {l}");
                    }
                }
                ExperimentError::Runtime(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
