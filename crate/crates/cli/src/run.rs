use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{Context, Result};
use xchange_sim::{run, run_with_trace, RunOutput, Scenario};

use crate::manifest::{Command, Manifest, RunRecord};
use crate::output::{summary_table, RunWriter, SummaryRow};

pub struct RunOptions {
    pub scenario: Scenario,
    pub reps: u32,
    pub out: Option<PathBuf>,
    /// Also write `trace-<rep>.jsonl`.
    pub trace: bool,
}

pub struct RunReport {
    pub rows: Vec<SummaryRow>,
    /// Failed checks as `rep <i>: <check>: <detail>`.
    pub failures: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn table(&self) -> Result<String> {
        summary_table(&self.rows)
    }
}

/// Seed of repetition `rep`.
pub fn rep_seed(base: u64, rep: u32) -> u64 {
    base.wrapping_add(rep as u64)
}

fn one(scenario: &Scenario, rep: u32, out: Option<&PathBuf>, trace: bool) -> Result<RunOutput> {
    match out.filter(|_| trace) {
        Some(dir) => {
            let path = dir.join(format!("trace-{rep}.jsonl"));
            let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            Ok(run_with_trace(scenario, Some(Box::new(BufWriter::new(file))))?)
        }
        None => Ok(run(scenario)?),
    }
}

pub fn execute(opts: &RunOptions) -> Result<RunReport> {
    opts.scenario.validate()?;
    let mut writer = opts.out.as_deref().map(RunWriter::create).transpose()?;
    let mut manifest = Manifest::new(Command::Run, opts.scenario.clone(), opts.reps);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for rep in 0..opts.reps {
        let mut s = opts.scenario.clone();
        s.seed = rep_seed(opts.scenario.seed, rep);
        let out = one(&s, rep, opts.out.as_ref(), opts.trace)?;
        log::info!(
            "{} rep {rep} seed {}: {} trades in {:.2}s",
            s.name,
            s.seed,
            out.metrics.summary.trades_completed,
            out.wall.as_secs_f64()
        );
        for c in out.checks.iter().filter(|c| !c.passed) {
            failures.push(format!("rep {rep}: {}: {}", c.name, c.detail));
        }
        manifest.runs.push(RunRecord {
            load: None,
            policy: s.policy.label(),
            seed: s.seed,
            trace_hash: Some(out.trace_hash.clone()),
            passed: out.passed(),
        });
        match &mut writer {
            Some(w) => w.add(rep, &out)?,
            None => rows.push(SummaryRow {
                rep,
                seed: s.seed,
                trace_hash: out.trace_hash.clone(),
                passed: out.passed(),
                summary: out.metrics.summary.clone(),
            }),
        }
    }
    if let (Some(w), Some(dir)) = (writer, &opts.out) {
        rows = w.finish()?;
        manifest.write(&dir.join("manifest.json"))?;
    }
    Ok(RunReport { rows, failures })
}
