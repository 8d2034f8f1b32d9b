//! `manifest.json`: what was run, with which seeds, and the trace hashes
//! it produced. Enough to replay a run or sweep bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use xchange_sim::Scenario;

use crate::ConfigError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Run,
    Sweep,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Sweep point; `None` for plain runs.
    pub load: Option<u32>,
    pub policy: String,
    pub seed: u64,
    /// `None` when the run could not start.
    pub trace_hash: Option<String>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// Base scenario. Sweep points override load and policy.
    pub scenario: Scenario,
    pub reps: u32,
    #[serde(default)]
    pub loads: Vec<u32>,
    #[serde(default)]
    pub policies: Vec<String>,
    pub runs: Vec<RunRecord>,
}

impl Manifest {
    pub fn new(command: Command, scenario: Scenario, reps: u32) -> Self {
        Manifest {
            tool: "xchange".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            scenario,
            reps,
            loads: Vec::new(),
            policies: Vec::new(),
            runs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n")
    }

    pub fn load(path: &Path) -> Result<Manifest, ConfigError> {
        let err = |reason: String| ConfigError::Manifest { path: path.display().to_string(), reason };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        m.scenario.validate().map_err(|e| err(e.to_string()))?;
        Ok(m)
    }
}
