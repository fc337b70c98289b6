//! Command line entry points and the HTTP session service.

pub mod commands;
pub mod service;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Failure of a command, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Data(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(1),
            CliError::Data(_) => ExitCode::from(2),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "error: {e:#}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "howseg", version, about = "Interactive open-world point cloud segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write seeded synthetic scenes.
    Synth(commands::SynthArgs),
    /// Run one simulated annotator on a scene and report its scores.
    Run(commands::RunArgs),
    /// Sweep click budgets and prototype counts over a scene directory.
    Ablate(commands::AblateArgs),
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn port_override(flag: u16) -> Result<u16, CliError> {
    match std::env::var("HOWSEG_PORT") {
        Ok(v) => v
            .parse()
            .map_err(|_| CliError::Usage(format!("HOWSEG_PORT={v:?} is not a port"))),
        Err(_) => Ok(flag),
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Run(a) => commands::run(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Serve { port } => {
            let port = port_override(port)?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.into()))?;
            rt.block_on(service::serve(port)).map_err(CliError::Data)
        }
    }
}
