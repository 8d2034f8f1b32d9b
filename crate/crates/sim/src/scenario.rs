//! Scenario files: everything a run depends on, in TOML.
//!
//! ```toml
//! name = "synthetic"
//! seed = 7
//! duration_secs = 30
//!
//! [peers]
//! traders = 20
//! matchmakers = 4
//! fanout = 4
//!
//! [policy]
//! restrict = 1
//! payments_per_side = 2
//!
//! [workload]
//! kind = "synthetic"
//! order_interval_ms = 500
//!
//! [[adversaries]]
//! trader = 3
//! behavior = "payment-withholder"
//! ```
//!
//! Omitted sections take the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use xchange_core::orderbook::AssetPair;
use xchange_core::protocol::{Behavior, ProtocolConfig};
use xchange_core::SimDuration;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Length of the workload phase.
    pub duration_secs: f64,
    /// Extra simulated time after the workload for trades to finish.
    #[serde(default = "default_drain")]
    pub drain_secs: f64,
    /// Whether peers audit counterparties against the global ledger view.
    #[serde(default = "yes")]
    pub audit: bool,
    #[serde(default)]
    pub network: NetworkSpec,
    pub peers: PeerSpec,
    #[serde(default)]
    pub policy: PolicySpec,
    #[serde(default = "default_chains")]
    pub chains: Vec<ChainSpec>,
    pub workload: Workload,
    #[serde(default)]
    pub adversaries: Vec<AdversarySpec>,
}

fn default_name() -> String {
    "unnamed".into()
}

fn default_drain() -> f64 {
    60.0
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_lat_min")]
    pub latency_min_ms: f64,
    #[serde(default = "default_lat_max")]
    pub latency_max_ms: f64,
    #[serde(default)]
    pub loss: f64,
}

fn default_lat_min() -> f64 {
    5.0
}

fn default_lat_max() -> f64 {
    15.0
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec { latency_min_ms: default_lat_min(), latency_max_ms: default_lat_max(), loss: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerSpec {
    pub traders: usize,
    #[serde(default = "one")]
    pub matchmakers: usize,
    /// Matchmakers each trader connects to, sampled once per run. Defaults
    /// to four, or all matchmakers when there are fewer.
    #[serde(default)]
    pub fanout: Option<usize>,
}

impl PeerSpec {
    pub fn fanout(&self) -> usize {
        self.fanout.unwrap_or(self.matchmakers.min(4))
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    /// RESTRICT(t); absent disables the policy.
    #[serde(default)]
    pub restrict: Option<u32>,
    /// INC_SET(n).
    #[serde(default = "one_u32")]
    pub payments_per_side: u32,
    #[serde(default)]
    pub at_own_risk: bool,
    #[serde(default = "default_window")]
    pub match_window_ms: f64,
    #[serde(default = "default_deadline")]
    pub publication_deadline_secs: f64,
    #[serde(default = "default_negotiation")]
    pub negotiation_timeout_secs: f64,
    #[serde(default = "default_wait")]
    pub payment_wait_secs: f64,
    #[serde(default = "default_max_matches")]
    pub max_matches: usize,
}

fn one_u32() -> u32 {
    1
}

fn default_window() -> f64 {
    1000.0
}

fn default_deadline() -> f64 {
    10.0
}

fn default_negotiation() -> f64 {
    2.0
}

fn default_wait() -> f64 {
    30.0
}

fn default_max_matches() -> usize {
    4
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec {
            restrict: None,
            payments_per_side: 1,
            at_own_risk: false,
            match_window_ms: default_window(),
            publication_deadline_secs: default_deadline(),
            negotiation_timeout_secs: default_negotiation(),
            payment_wait_secs: default_wait(),
            max_matches: default_max_matches(),
        }
    }
}

impl PolicySpec {
    pub fn protocol_config(&self) -> ProtocolConfig {
        ProtocolConfig {
            restrict: self.restrict,
            payments_per_side: self.payments_per_side,
            at_own_risk: self.at_own_risk,
            match_window: duration_ms(self.match_window_ms),
            publication_deadline: duration_secs(self.publication_deadline_secs),
            negotiation_timeout: duration_secs(self.negotiation_timeout_secs),
            payment_wait_timeout: duration_secs(self.payment_wait_secs),
            max_matches: self.max_matches,
            ..ProtocolConfig::default()
        }
    }

    /// Short label such as `restrict=1,incset=2`, or `none`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(t) = self.restrict {
            parts.push(format!("restrict={t}"));
        }
        if self.payments_per_side > 1 {
            parts.push(format!("incset={}", self.payments_per_side));
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join(",")
        }
    }
}

pub fn duration_ms(ms: f64) -> SimDuration {
    SimDuration::from_micros((ms * 1_000.0).round() as u64)
}

pub fn duration_secs(s: f64) -> SimDuration {
    SimDuration::from_micros((s * 1_000_000.0).round() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub id: String,
    #[serde(default)]
    pub confirmation_delay_ms: f64,
    /// Faucet balance of every trader.
    #[serde(default = "default_funds")]
    pub funds: u64,
}

fn default_funds() -> u64 {
    1_000_000_000_000
}

fn default_chains() -> Vec<ChainSpec> {
    ["BTC", "ETH"]
        .into_iter()
        .map(|id| ChainSpec { id: id.into(), confirmation_delay_ms: 0.0, funds: default_funds() })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Offer,
    Request,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedOrder {
    pub at_ms: f64,
    pub trader: usize,
    pub side: Side,
    pub base_qty: u64,
    pub quote_qty: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Workload {
    /// Every trader creates an order every `order_interval_ms`, starting at
    /// staggered offsets. Consecutive orders across the whole network
    /// alternate between offer and request.
    Synthetic {
        #[serde(default = "default_interval")]
        order_interval_ms: f64,
        #[serde(default = "default_qty")]
        base_qty: u64,
        #[serde(default = "default_qty")]
        quote_qty: u64,
        #[serde(default = "default_base")]
        base: String,
        #[serde(default = "default_quote")]
        quote: String,
        #[serde(default = "default_order_timeout")]
        order_timeout_secs: f64,
    },
    Scripted {
        #[serde(default = "default_base")]
        base: String,
        #[serde(default = "default_quote")]
        quote: String,
        #[serde(default = "default_order_timeout")]
        order_timeout_secs: f64,
        orders: Vec<ScriptedOrder>,
    },
}

fn default_interval() -> f64 {
    500.0
}

fn default_qty() -> u64 {
    100
}

fn default_base() -> String {
    "BTC".into()
}

fn default_quote() -> String {
    "ETH".into()
}

fn default_order_timeout() -> f64 {
    3600.0
}

impl Workload {
    pub fn assets(&self) -> (&str, &str) {
        match self {
            Workload::Synthetic { base, quote, .. } | Workload::Scripted { base, quote, .. } => (base, quote),
        }
    }

    pub fn order_timeout(&self) -> SimDuration {
        match self {
            Workload::Synthetic { order_timeout_secs, .. } | Workload::Scripted { order_timeout_secs, .. } => {
                duration_secs(*order_timeout_secs)
            }
        }
    }

    pub fn pair(&self, base_qty: u64, quote_qty: u64) -> AssetPair {
        let (b, q) = self.assets();
        AssetPair::new(b, base_qty, q, quote_qty)
    }
}

/// A behavioural override for one trader or matchmaker, by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySpec {
    #[serde(default)]
    pub trader: Option<usize>,
    #[serde(default)]
    pub matchmaker: Option<usize>,
    pub behavior: Behavior,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|error| ScenarioError::Io { path: path.display().to_string(), error })?;
        Scenario::from_toml(&text).map_err(|e| match e {
            ScenarioError::Parse(m) => ScenarioError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    // Negated comparisons so that NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.peers.traders < 2 {
            return bad(format!("peers.traders must be at least 2, got {}", self.peers.traders));
        }
        if self.peers.matchmakers == 0 {
            return bad("peers.matchmakers must be at least 1".into());
        }
        let fanout = self.peers.fanout();
        if fanout == 0 || fanout > self.peers.matchmakers {
            return bad(format!(
                "peers.fanout must be between 1 and peers.matchmakers ({}), got {fanout}",
                self.peers.matchmakers
            ));
        }
        if !(self.duration_secs > 0.0) || !(self.drain_secs >= 0.0) {
            return bad("duration_secs must be positive and drain_secs non-negative".into());
        }
        let n = &self.network;
        if !(n.latency_min_ms >= 0.0 && n.latency_min_ms <= n.latency_max_ms) {
            return bad("network latency must satisfy 0 <= latency_min_ms <= latency_max_ms".into());
        }
        if !(0.0..=1.0).contains(&n.loss) {
            return bad(format!("network.loss must be within [0, 1], got {}", n.loss));
        }
        let p = &self.policy;
        if p.payments_per_side == 0 {
            return bad("policy.payments_per_side must be at least 1".into());
        }
        if p.restrict == Some(0) {
            return bad("policy.restrict must be at least 1 when set".into());
        }
        if !(p.match_window_ms >= 0.0) || !(p.negotiation_timeout_secs > 0.0) || !(p.payment_wait_secs > 0.0) {
            return bad("policy timings must be positive".into());
        }
        let (base, quote) = self.workload.assets();
        if base >= quote {
            return bad(format!("workload base asset {base:?} must sort before quote asset {quote:?}"));
        }
        for a in [base, quote] {
            if !self.chains.iter().any(|c| c.id == a) {
                return bad(format!("no chain configured for asset {a:?}"));
            }
        }
        for c in &self.chains {
            if !(c.confirmation_delay_ms >= 0.0) {
                return bad(format!("chain {}: confirmation_delay_ms must be non-negative", c.id));
            }
        }
        let min = p.payments_per_side as u64;
        match &self.workload {
            Workload::Synthetic { order_interval_ms, base_qty, quote_qty, .. } => {
                if !(*order_interval_ms > 0.0) {
                    return bad("workload.order_interval_ms must be positive".into());
                }
                if *base_qty < min || *quote_qty < min {
                    return bad(format!("workload quantities must be at least payments_per_side ({min})"));
                }
            }
            Workload::Scripted { orders, .. } => {
                for (i, o) in orders.iter().enumerate() {
                    if o.trader >= self.peers.traders {
                        return bad(format!("workload.orders[{i}]: trader {} does not exist", o.trader));
                    }
                    if o.base_qty < min || o.quote_qty < min || !(o.at_ms >= 0.0) {
                        return bad(format!(
                            "workload.orders[{i}]: quantities below payments_per_side or negative time"
                        ));
                    }
                }
            }
        }
        for (i, a) in self.adversaries.iter().enumerate() {
            match (a.trader, a.matchmaker, a.behavior) {
                (_, _, Behavior::Honest) => {}
                (Some(t), None, Behavior::BiasedMatchmaker) => {
                    return bad(format!("adversaries[{i}]: trader {t} cannot be a biased-matchmaker"));
                }
                (Some(t), None, _) if t < self.peers.traders => {}
                (None, Some(m), Behavior::BiasedMatchmaker) if m < self.peers.matchmakers => {}
                (None, Some(m), b) if m < self.peers.matchmakers => {
                    return bad(format!("adversaries[{i}]: matchmaker {m} cannot be a {b}"));
                }
                _ => return bad(format!("adversaries[{i}]: set exactly one existing trader or matchmaker")),
            }
        }
        Ok(())
    }

    pub fn trader_behavior(&self, i: usize) -> Behavior {
        self.adversaries.iter().filter(|a| a.trader == Some(i)).map(|a| a.behavior).next_back().unwrap_or_default()
    }

    pub fn matchmaker_behavior(&self, i: usize) -> Behavior {
        self.adversaries.iter().filter(|a| a.matchmaker == Some(i)).map(|a| a.behavior).next_back().unwrap_or_default()
    }

    /// Synthetic scenario at `load` orders per second with `load / 2`
    /// traders, each creating two orders per second.
    pub fn synthetic(load: u32, duration_secs: f64, policy: PolicySpec, seed: u64) -> Scenario {
        Scenario {
            name: format!("synthetic-l{load}"),
            seed,
            duration_secs,
            drain_secs: default_drain(),
            audit: true,
            network: NetworkSpec::default(),
            peers: PeerSpec { traders: (load as usize / 2).max(2), matchmakers: 2, fanout: Some(2) },
            policy,
            chains: default_chains(),
            workload: Workload::Synthetic {
                order_interval_ms: default_interval(),
                base_qty: default_qty(),
                quote_qty: default_qty(),
                base: default_base(),
                quote: default_quote(),
                order_timeout_secs: default_order_timeout(),
            },
            adversaries: Vec::new(),
        }
    }

    /// Sets the load of a synthetic scenario: `load / 2` traders at two
    /// orders per second each.
    pub fn set_load(&mut self, load: u32) -> Result<(), ScenarioError> {
        match &mut self.workload {
            Workload::Synthetic { order_interval_ms, .. } => {
                *order_interval_ms = default_interval();
                self.peers.traders = (load as usize / 2).max(2);
                self.validate()
            }
            Workload::Scripted { .. } => Err(ScenarioError::Invalid("--load needs a synthetic workload".into())),
        }
    }
}
