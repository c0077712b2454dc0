//! Configuration, experiment drivers and persistence for the `resav` CLI.

use std::io;
use std::path::PathBuf;

use resav_core::integrators::{RunError, StepError};
use resav_core::models::ModelError;
use resav_core::navier_stokes::FlowError;
use resav_core::savkernel::SavError;
use thiserror::Error;

pub mod commands;
pub mod config;
pub mod experiment;
pub mod record;
pub mod snapshot;

pub use commands::{cmd_compare, cmd_converge, cmd_run, ConvergeOutcome, RunSummary};
pub use config::{parse_config, parse_with_overrides, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("configs do not match: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Sav(#[from] SavError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Snapshot(#[from] snapshot::SnapshotError),
}

impl HarnessError {
    /// 2 for bad input, 3 for an invariant violation, 4 for any other
    /// numerical failure, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Usage(_) | Self::Mismatch(_) | Self::Model(_) | Self::Flow(_) | Self::Sav(_) => 2,
            Self::Run(RunError { source: StepError::Invariant { .. }, .. }) => 3,
            Self::Run(_) => 4,
            Self::Io { .. } | Self::Snapshot(_) => 1,
        }
    }
}
