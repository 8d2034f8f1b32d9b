//! Library side of the `xchange` command: running scenarios, writing
//! result tables, verifying ledger dumps, sweeps and replays.

pub mod manifest;
pub mod output;
pub mod policy;
pub mod replay;
pub mod run;
pub mod sweep;
pub mod verify;

use thiserror::Error;

/// Problems with the inputs rather than with a run. Maps to exit code 2.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Scenario(#[from] xchange_sim::ScenarioError),
    #[error("bad policy {spec:?}: {reason}")]
    Policy { spec: String, reason: String },
    #[error("bad {axis} axis: {reason}")]
    Axis { axis: &'static str, reason: String },
    #[error("manifest {path}: {reason}")]
    Manifest { path: String, reason: String },
}
