use std::path::PathBuf;

use thiserror::Error;

/// Failures of a subcommand, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] stripe_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 1 configuration, 2 I/O, 3 solver, 4 empty admissible region,
    /// 5 failed numerical check.
    pub fn exit_code(&self) -> u8 {
        use stripe_core::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Io(_) | E::Format(_) => 2,
                E::NoConvergence { .. } | E::NotPositiveDefinite { .. } => 3,
                E::EmptyAdmissibleRegion => 4,
                _ => 1,
            },
            CliError::Io { .. } | CliError::Image { .. } => 2,
            CliError::Config(_) => 1,
            CliError::CheckFailed(_) => 5,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
