//! Command-line frontend: qPAT simulation, stripe detection on images,
//! and the numerical validation suites.

pub mod commands;
pub mod config;
pub mod error;
pub mod imageio;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "stripe-detect", version, about = "Edge detection with thin-stripe topological sensitivities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a phantom and write mu, D, energy and noisy-energy maps.
    Simulate(RunConfig),
    /// Detect edges in an image and write segments, trace and overlay.
    Detect {
        /// PGM, PNG or CSV input.
        input: Option<PathBuf>,
        #[command(flatten)]
        cfg: RunConfig,
    },
    /// Check the topological asymptotics and solver convergence.
    Validate(RunConfig),
    /// Randomized checks of the polarization tensor.
    TensorCheck(RunConfig),
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(cfg) => commands::simulate(&cfg.resolve()?),
        Command::Detect { input, cfg } => {
            let cfg = RunConfig { input, ..cfg }.resolve()?;
            commands::detect_cmd(&cfg)
        }
        Command::Validate(cfg) => commands::validate(&cfg.resolve()?),
        Command::TensorCheck(cfg) => commands::tensor_check(&cfg.resolve()?),
    }
}
