//! Parameter sweeps over load and policy.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::Result;
use xchange_sim::{run, Scenario, Summary};

use crate::manifest::{Command, Manifest, RunRecord};
use crate::output::{fmt_num, mean_std};
use crate::run::rep_seed;
use crate::{policy, ConfigError};

/// Columns of `sweep.csv`, each reported as mean and standard deviation.
pub const COLUMNS: [&str; 9] = [
    "throughput",
    "latency_mean_ms",
    "latency_p95_ms",
    "trades_completed",
    "orders_fulfilled",
    "blocks_per_sec",
    "messages_sent",
    "request_timeouts",
    "stolen_trades",
];

pub struct SweepOptions {
    pub base: Scenario,
    /// Empty keeps the base scenario's load.
    pub loads: Vec<u32>,
    /// Empty keeps the base scenario's policy.
    pub policies: Vec<String>,
    pub reps: u32,
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

#[derive(Clone, Debug)]
pub struct PointRun {
    pub seed: u64,
    pub trace_hash: String,
    pub passed: bool,
    pub summary: Summary,
    pub wall: Duration,
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub load: Option<u32>,
    pub policy: String,
    pub runs: Vec<PointRun>,
    pub errors: Vec<String>,
}

impl SweepPoint {
    pub fn column(&self, name: &str) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.summary.fields().into_iter().find(|f| f.0 == name).expect("known column").1)
            .collect()
    }

    pub fn mean(&self, name: &str) -> f64 {
        mean_std(&self.column(name)).0
    }

    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|r| !r.passed).count() + self.errors.len()
    }
}

pub fn parse_loads(spec: &str) -> Result<Vec<u32>, ConfigError> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<u32>() {
            Ok(n) if n >= 4 => Ok(n),
            _ => Err(ConfigError::Axis { axis: "load", reason: format!("{s:?} is not a load of at least 4") }),
        })
        .collect()
}

/// Scenario of one sweep point.
pub fn point_scenario(base: &Scenario, load: Option<u32>, policy_label: Option<&str>) -> Result<Scenario, ConfigError> {
    let mut s = base.clone();
    if let Some(l) = load {
        s.set_load(l)?;
    }
    if let Some(p) = policy_label {
        s.policy = policy::apply(&base.policy, p)?;
    }
    s.validate()?;
    Ok(s)
}

pub fn execute(opts: &SweepOptions) -> Result<(Vec<SweepPoint>, Manifest)> {
    let loads: Vec<Option<u32>> =
        if opts.loads.is_empty() { vec![None] } else { opts.loads.iter().copied().map(Some).collect() };
    let policies: Vec<Option<&str>> =
        if opts.policies.is_empty() { vec![None] } else { opts.policies.iter().map(|p| Some(p.as_str())).collect() };
    // Policy labels are checked up front; a typo should not cost a sweep.
    for p in policies.iter().flatten() {
        policy::apply(&opts.base.policy, p)?;
    }

    let mut points = Vec::new();
    let mut tasks = Vec::new();
    for &p in &policies {
        for &l in &loads {
            let idx = points.len();
            let label = p.map(str::to_string).unwrap_or_else(|| opts.base.policy.label());
            let mut point = SweepPoint { load: l, policy: label, runs: Vec::new(), errors: Vec::new() };
            match point_scenario(&opts.base, l, p) {
                Ok(s) => {
                    point.policy = s.policy.label();
                    for rep in 0..opts.reps {
                        let mut s = s.clone();
                        s.seed = rep_seed(opts.base.seed, rep);
                        tasks.push((idx, s));
                    }
                }
                Err(e) => point.errors.push(e.to_string()),
            }
            points.push(point);
        }
    }

    let results: Mutex<Vec<Option<Result<PointRun, String>>>> = Mutex::new(vec![None; tasks.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..opts.jobs.max(1).min(tasks.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((idx, s)) = tasks.get(i) else { break };
                let r = run(s).map_err(|e| e.to_string()).map(|out| PointRun {
                    seed: s.seed,
                    trace_hash: out.trace_hash.clone(),
                    passed: out.passed(),
                    summary: out.metrics.summary.clone(),
                    wall: out.wall,
                });
                if let Ok(r) = &r {
                    log::info!("point {idx} ({}) seed {}: {:.2}s", s.name, s.seed, r.wall.as_secs_f64());
                }
                results.lock().expect("no panics while held")[i] = Some(r);
            });
        }
    });

    let mut manifest = Manifest::new(Command::Sweep, opts.base.clone(), opts.reps);
    manifest.loads = opts.loads.clone();
    manifest.policies = opts.policies.clone();
    for ((idx, _), r) in tasks.iter().zip(results.into_inner().expect("threads joined")) {
        let point = &mut points[*idx];
        match r.expect("every task ran") {
            Ok(run) => {
                manifest.runs.push(RunRecord {
                    load: point.load,
                    policy: point.policy.clone(),
                    seed: run.seed,
                    trace_hash: Some(run.trace_hash.clone()),
                    passed: run.passed,
                });
                point.runs.push(run);
            }
            Err(e) => point.errors.push(e),
        }
    }

    if let Some(dir) = &opts.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("sweep.csv"), sweep_table(&points)?)?;
        let mut timing = csv::Writer::from_path(dir.join("timing.csv"))?;
        timing.write_record(["load", "policy", "seed", "wall_secs"])?;
        for p in &points {
            for r in &p.runs {
                let load = p.load.map(|l| l.to_string()).unwrap_or_default();
                timing.write_record([
                    load,
                    p.policy.clone(),
                    r.seed.to_string(),
                    format!("{:.3}", r.wall.as_secs_f64()),
                ])?;
            }
        }
        timing.flush()?;
        manifest.write(&dir.join("manifest.json"))?;
    }
    Ok((points, manifest))
}

/// `sweep.csv`: one row per point, mean and standard deviation over
/// repetitions for each of [`COLUMNS`].
pub fn sweep_table(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["load".to_string(), "policy".into(), "reps".into(), "failed".into(), "error".into()];
    for c in COLUMNS {
        header.push(format!("{c}_mean"));
        header.push(format!("{c}_std"));
    }
    w.write_record(&header)?;
    for p in points {
        let mut rec = vec![
            p.load.map(|l| l.to_string()).unwrap_or_default(),
            p.policy.clone(),
            p.runs.len().to_string(),
            p.failed().to_string(),
            p.errors.join("; "),
        ];
        for c in COLUMNS {
            let (m, s) = mean_std(&p.column(c));
            rec.push(fmt_num(m));
            rec.push(s.map(fmt_num).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
