//! Deterministic discrete-event simulation of XChange networks.
//!
//! A run is fully described by a [`Scenario`]. Events are processed in
//! `(time, sequence)` order on a single thread, and all randomness comes
//! from the scenario seed, so a scenario always produces the same trace.

pub mod engine;
pub mod latency;
pub mod metrics;
pub mod scenario;
pub mod trace;

pub use engine::{run, run_with_trace, Check, RunOutput};
pub use metrics::{compute_metrics, MetricsLog, Summary};
pub use scenario::{PolicySpec, Scenario, ScenarioError};
pub use trace::{TraceEvent, TraceKind};
