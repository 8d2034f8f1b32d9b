use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use xchange_cli::run::{self, RunOptions};
use xchange_cli::sweep::{self, SweepOptions};
use xchange_cli::{policy, replay, verify};
use xchange_sim::{Scenario, ScenarioError};

/// Simulate and inspect XChange trading networks.
///
/// Logging goes to stderr and is controlled by RUST_LOG (default: warn).
#[derive(Parser)]
#[command(name = "xchange", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write result tables.
    Run {
        /// Scenario file (TOML).
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Repetitions; repetition i uses seed + i.
        #[arg(long, default_value_t = 1)]
        reps: u32,
        /// Output directory for CSVs, ledger dumps and the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Policy override, e.g. `none` or `restrict=1,incset=2`.
        #[arg(long)]
        policy: Option<String>,
        /// Orders per second, for synthetic workloads.
        #[arg(long)]
        load: Option<u32>,
        /// Write the JSONL event trace of every repetition.
        #[arg(long)]
        trace: bool,
    },
    /// Verify a ledger dump, optionally against copies held by other peers.
    Verify {
        dump: PathBuf,
        #[arg(long = "witness")]
        witnesses: Vec<PathBuf>,
    },
    /// Run a scenario over a grid of loads and policies.
    Sweep {
        scenario: PathBuf,
        /// Comma-separated loads in orders per second.
        #[arg(long)]
        loads: Option<String>,
        /// Policy labels; repeat the flag for several. Defaults to the four
        /// combinations of restrict=1 and incset=2.
        #[arg(long = "policy")]
        policies: Vec<String>,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        #[arg(long)]
        seed: Option<u64>,
        /// Override the workload duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Points run in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Re-run a manifest and check that traces and tables are identical.
    Replay {
        manifest: PathBuf,
        /// Where to write the regenerated outputs.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, ScenarioError> {
    let mut s = Scenario::load(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` when a run violated an invariant or a check failed.
fn dispatch(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Run { scenario, seed, reps, out, policy: pol, load: l, trace } => {
            let mut s = load(&scenario, seed)?;
            if let Some(p) = pol {
                s.policy = policy::apply(&s.policy, &p)?;
            }
            if let Some(l) = l {
                s.set_load(l)?;
            }
            let report = run::execute(&RunOptions { scenario: s, reps: reps.max(1), out, trace })?;
            print!("{}", report.table()?);
            for f in &report.failures {
                eprintln!("violation: {f}");
            }
            Ok(report.passed())
        }
        Cmd::Verify { dump, witnesses } => {
            let read = |p: &PathBuf| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
            let ledger = read(&dump)?;
            let held = witnesses.iter().map(read).collect::<Result<Vec<_>>>()?;
            let report = verify::verify_texts(&ledger, &held);
            for v in &report.violations {
                println!("{v}");
            }
            println!(
                "{} partitions in {} chains: {}",
                report.partitions,
                report.chains,
                if report.is_valid() { "valid".to_string() } else { format!("{} violations", report.violations.len()) }
            );
            Ok(report.is_valid())
        }
        Cmd::Sweep { scenario, loads, policies, reps, seed, duration, out, jobs } => {
            let mut base = load(&scenario, seed)?;
            if let Some(d) = duration {
                base.duration_secs = d;
            }
            let loads = loads.as_deref().map(sweep::parse_loads).transpose()?.unwrap_or_default();
            let policies =
                if policies.is_empty() { policy::STANDARD.iter().map(|s| s.to_string()).collect() } else { policies };
            let opts = SweepOptions { base, loads, policies, reps: reps.max(1), out, jobs };
            let (points, _) = sweep::execute(&opts)?;
            print!("{}", sweep::sweep_table(&points)?);
            Ok(points.iter().all(|p| p.failed() == 0))
        }
        Cmd::Replay { manifest, out } => {
            let report = replay::execute(&manifest, out)?;
            print!("{}", report.table);
            for m in &report.mismatches {
                eprintln!("mismatch: {m}");
            }
            Ok(report.identical())
        }
    }
}
