//! Re-executes a manifest and compares trace hashes and result tables.

use std::path::{Path, PathBuf};

use anyhow::Result;

use crate::manifest::{Command, Manifest};
use crate::run::{self, RunOptions};
use crate::sweep::{self, SweepOptions};

pub struct ReplayReport {
    /// Table regenerated from the replay (`summary.csv` or `sweep.csv`).
    pub table: String,
    pub mismatches: Vec<String>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.mismatches.is_empty()
    }
}

pub fn execute(manifest_path: &Path, out: Option<PathBuf>) -> Result<ReplayReport> {
    let m = Manifest::load(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let (table, hashes, table_name) = match m.command {
        Command::Run => {
            let opts = RunOptions { scenario: m.scenario.clone(), reps: m.reps, out: out.clone(), trace: false };
            let report = run::execute(&opts)?;
            let hashes: Vec<Option<String>> = report.rows.iter().map(|r| Some(r.trace_hash.clone())).collect();
            (report.table()?, hashes, "summary.csv")
        }
        Command::Sweep => {
            let opts = SweepOptions {
                base: m.scenario.clone(),
                loads: m.loads.clone(),
                policies: m.policies.clone(),
                reps: m.reps,
                out: out.clone(),
                jobs: 1,
            };
            let (points, manifest) = sweep::execute(&opts)?;
            let hashes = manifest.runs.iter().map(|r| r.trace_hash.clone()).collect();
            (sweep::sweep_table(&points)?, hashes, "sweep.csv")
        }
    };

    let mut mismatches = Vec::new();
    if hashes.len() != m.runs.len() {
        mismatches.push(format!("{} runs recorded, {} replayed", m.runs.len(), hashes.len()));
    }
    for (rec, h) in m.runs.iter().zip(&hashes) {
        if rec.trace_hash != *h {
            mismatches.push(format!(
                "seed {} ({}{}): trace {} became {}",
                rec.seed,
                rec.policy,
                rec.load.map(|l| format!(", load {l}")).unwrap_or_default(),
                rec.trace_hash.as_deref().unwrap_or("-"),
                h.as_deref().unwrap_or("-"),
            ));
        }
    }
    if let Ok(original) = std::fs::read_to_string(dir.join(table_name)) {
        if original != table {
            mismatches.push(format!("{table_name} differs from the recorded one"));
        }
    }
    Ok(ReplayReport { table, mismatches })
}
