//! Throughput grows linearly with load and latency stays flat, for every
//! policy combination.

use std::time::{Duration, Instant};

use xchange_cli::{policy, sweep};
use xchange_sim::{PolicySpec, Scenario};

use crate::Outcome;

const LOADS: [u32; 4] = [10, 50, 100, 200];
const SIM_SECS: f64 = 30.0;
/// Allowed relative deviation from the fit through the origin.
const LINEAR_TOL: f64 = 0.25;
/// Mean latency at the highest load over that at the lowest.
const LATENCY_RATIO: f64 = 2.0;
const BUDGET: Duration = Duration::from_secs(600);

/// Least-squares slope of `t = k * l`.
pub fn origin_slope(points: &[(f64, f64)]) -> f64 {
    let lt: f64 = points.iter().map(|(l, t)| l * t).sum();
    let ll: f64 = points.iter().map(|(l, _)| l * l).sum();
    lt / ll
}

pub fn check() -> Outcome {
    let start = Instant::now();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let opts = sweep::SweepOptions {
        base: Scenario::synthetic(LOADS[0], SIM_SECS, PolicySpec::default(), 7),
        loads: LOADS.to_vec(),
        policies: policy::STANDARD.iter().map(|s| s.to_string()).collect(),
        reps: 1,
        out: None,
        jobs,
    };
    let points = match sweep::execute(&opts) {
        Ok((p, _)) => p,
        Err(e) => return Outcome::new(false, format!("sweep: {e:#}")),
    };

    let mut problems = Vec::new();
    let mut lines = Vec::new();
    for label in policy::STANDARD {
        let mine: Vec<_> = points.iter().filter(|p| p.policy == label).collect();
        if mine.len() != LOADS.len() || mine.iter().any(|p| p.failed() > 0 || !p.errors.is_empty()) {
            problems.push(format!("{label}: incomplete or failed points"));
            continue;
        }
        let tp: Vec<(f64, f64)> = mine.iter().map(|p| (p.load.unwrap() as f64, p.mean("throughput"))).collect();
        let k = origin_slope(&tp);
        let worst = tp.iter().map(|(l, t)| (t - k * l).abs() / (k * l)).fold(0.0, f64::max);
        let lat = |load: u32| mine.iter().find(|p| p.load == Some(load)).unwrap().mean("latency_mean_ms");
        let ratio = lat(LOADS[3]) / lat(LOADS[0]);
        if worst > LINEAR_TOL {
            problems.push(format!("{label}: deviation {worst:.3} from linear"));
        }
        if !ratio.is_finite() || ratio > LATENCY_RATIO {
            problems.push(format!("{label}: latency ratio {ratio:.2}"));
        }
        lines.push(format!("{label}: k={k:.3} dev={worst:.3} lat×{ratio:.2}"));
    }
    let elapsed = start.elapsed();
    if elapsed > BUDGET {
        problems.push(format!("took {:.0}s", elapsed.as_secs_f64()));
    }
    let detail = format!("{}; {:.0}s of {}s", lines.join(", "), elapsed.as_secs_f64(), BUDGET.as_secs());
    match problems.is_empty() {
        true => Outcome::new(true, detail),
        false => Outcome::new(false, format!("{}; {detail}", problems.join("; "))),
    }
}
