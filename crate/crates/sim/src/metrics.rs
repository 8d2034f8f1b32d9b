//! Metrics recomputed from a trace.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::trace::{PeerInfo, Role, TraceEvent, TraceKind};
use xchange_core::orderbook::OrderId;
use xchange_core::protocol::{Behavior, Observation};
use xchange_core::{Hash, PeerId};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderRow {
    pub order: OrderId,
    pub is_offer: bool,
    pub base_qty: u64,
    pub created_us: u64,
    pub fulfilled_us: Option<u64>,
    pub closed: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TradeRow {
    pub trade: Hash,
    pub initiator: PeerId,
    pub counterparty: PeerId,
    pub established_us: u64,
    pub first_payment_us: Option<u64>,
    pub completed_us: Option<u64>,
    pub aborted_us: Option<u64>,
    pub abort_reason: Option<String>,
    pub payments: u32,
    pub qty: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeerRow {
    pub peer: PeerId,
    pub role: Role,
    pub behavior: Behavior,
    pub messages_sent: u64,
    pub blocks_created: u64,
    /// Trades in which this peer received payments it did not reciprocate.
    pub stolen_trades: u64,
    pub stolen_amount: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub duration_secs: f64,
    pub orders_created: u64,
    pub orders_fulfilled: u64,
    pub trades_established: u64,
    pub trades_completed: u64,
    pub trades_aborted: u64,
    /// Trades completed within the workload phase per second of it.
    pub throughput: f64,
    /// Most trades completed within any one-second window.
    pub peak_throughput: u64,
    pub latency_mean_ms: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_p99_ms: f64,
    pub blocks_created: u64,
    pub blocks_per_sec: f64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_dropped: u64,
    pub request_timeouts: u64,
    pub stolen_trades: u64,
    pub stolen_amount: u64,
}

impl Summary {
    /// Every field as a number, in declaration order.
    pub fn fields(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("duration_secs", self.duration_secs),
            ("orders_created", self.orders_created as f64),
            ("orders_fulfilled", self.orders_fulfilled as f64),
            ("trades_established", self.trades_established as f64),
            ("trades_completed", self.trades_completed as f64),
            ("trades_aborted", self.trades_aborted as f64),
            ("throughput", self.throughput),
            ("peak_throughput", self.peak_throughput as f64),
            ("latency_mean_ms", self.latency_mean_ms),
            ("latency_p50_ms", self.latency_p50_ms),
            ("latency_p95_ms", self.latency_p95_ms),
            ("latency_p99_ms", self.latency_p99_ms),
            ("blocks_created", self.blocks_created as f64),
            ("blocks_per_sec", self.blocks_per_sec),
            ("messages_sent", self.messages_sent as f64),
            ("messages_delivered", self.messages_delivered as f64),
            ("messages_dropped", self.messages_dropped as f64),
            ("request_timeouts", self.request_timeouts as f64),
            ("stolen_trades", self.stolen_trades as f64),
            ("stolen_amount", self.stolen_amount as f64),
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsLog {
    pub orders: Vec<OrderRow>,
    pub trades: Vec<TradeRow>,
    pub peers: Vec<PeerRow>,
    pub summary: Summary,
}

fn ms(us: u64) -> f64 {
    us as f64 / 1_000.0
}

/// Nearest-rank percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Largest number of timestamps inside any window of `width` microseconds.
fn peak(sorted: &[u64], width: u64) -> u64 {
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..sorted.len() {
        while sorted[hi] - sorted[lo] >= width {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best as u64
}

pub fn compute_metrics(events: &[TraceEvent]) -> MetricsLog {
    let mut infos: Vec<PeerInfo> = Vec::new();
    let mut duration_us = 0;
    let mut orders: BTreeMap<OrderId, OrderRow> = BTreeMap::new();
    let mut trades: BTreeMap<Hash, TradeRow> = BTreeMap::new();
    let mut sent: HashMap<PeerId, u64> = HashMap::new();
    let mut blocks: HashMap<PeerId, u64> = HashMap::new();
    let mut block_times = Vec::new();
    // trade -> (payer, receiver, index, amount)
    let mut payments: BTreeMap<Hash, Vec<(PeerId, PeerId, u32, u64)>> = BTreeMap::new();
    let mut s = Summary::default();

    for ev in events {
        match &ev.kind {
            TraceKind::Run { duration_us: d, peers, .. } => {
                duration_us = *d;
                infos = peers.clone();
            }
            TraceKind::Send { from, .. } => {
                s.messages_sent += 1;
                *sent.entry(*from).or_default() += 1;
            }
            TraceKind::Deliver { .. } => s.messages_delivered += 1,
            TraceKind::Drop { .. } => s.messages_dropped += 1,
            TraceKind::Block { creator, .. } => {
                *blocks.entry(*creator).or_default() += 1;
                block_times.push(ev.t);
            }
            TraceKind::End { .. } => {}
            TraceKind::Obs(o) => match o {
                Observation::OrderCreated { order, is_offer, base_qty, .. } => {
                    orders.insert(
                        *order,
                        OrderRow {
                            order: *order,
                            is_offer: *is_offer,
                            base_qty: *base_qty,
                            created_us: ev.t,
                            fulfilled_us: None,
                            closed: None,
                        },
                    );
                }
                Observation::OrderFulfilled { order } => {
                    if let Some(r) = orders.get_mut(order) {
                        r.fulfilled_us.get_or_insert(ev.t);
                    }
                }
                Observation::OrderClosed { order, reason } => {
                    if let Some(r) = orders.get_mut(order) {
                        r.closed = Some(reason.as_str().to_string());
                    }
                }
                Observation::TradeEstablished { trade, initiator, counterparty } => {
                    trades.entry(*trade).or_insert(TradeRow {
                        trade: *trade,
                        initiator: *initiator,
                        counterparty: *counterparty,
                        established_us: ev.t,
                        first_payment_us: None,
                        completed_us: None,
                        aborted_us: None,
                        abort_reason: None,
                        payments: 0,
                        qty: None,
                    });
                }
                Observation::PaymentSent { trade, payer, receiver, index, amount, .. } => {
                    payments.entry(*trade).or_default().push((*payer, *receiver, *index, *amount));
                    if let Some(r) = trades.get_mut(trade) {
                        r.first_payment_us.get_or_insert(ev.t);
                        r.payments += 1;
                    }
                }
                Observation::TradeCompleted { trade, qty, .. } => {
                    if let Some(r) = trades.get_mut(trade) {
                        r.completed_us.get_or_insert(ev.t);
                        r.qty = Some(*qty);
                    }
                }
                Observation::TradeAborted { trade, reason, .. } => {
                    if let Some(r) = trades.get_mut(trade) {
                        if r.aborted_us.is_none() && r.completed_us.is_none() {
                            r.aborted_us = Some(ev.t);
                            r.abort_reason = Some(reason.clone());
                        }
                    }
                }
                Observation::RequestTimedOut { .. } => s.request_timeouts += 1,
                Observation::TradeProposed { .. } | Observation::PaymentVerified { .. } => {}
            },
        }
    }

    let adversary: HashMap<PeerId, bool> =
        infos.iter().map(|p| (p.id, p.role == Role::Trader && p.behavior != Behavior::Honest)).collect();
    let mut stolen: HashMap<PeerId, (u64, u64)> = HashMap::new();
    for pays in payments.values() {
        let mut per_thief: BTreeMap<PeerId, u64> = BTreeMap::new();
        for (payer, receiver, index, amount) in pays {
            if !adversary.get(receiver).copied().unwrap_or(false) {
                continue;
            }
            let reciprocated = pays.iter().any(|(p, _, k, _)| p == receiver && k == index);
            if !reciprocated && payer != receiver {
                *per_thief.entry(*receiver).or_default() += amount;
            }
        }
        for (thief, amount) in per_thief {
            let e = stolen.entry(thief).or_default();
            e.0 += 1;
            e.1 += amount;
        }
    }

    s.duration_secs = duration_us as f64 / 1e6;
    s.orders_created = orders.len() as u64;
    let mut latencies: Vec<f64> =
        orders.values().filter_map(|o| o.fulfilled_us.map(|f| ms(f - o.created_us))).collect();
    s.orders_fulfilled = latencies.len() as u64;
    latencies.sort_by(|a, b| a.total_cmp(b));
    if !latencies.is_empty() {
        s.latency_mean_ms = latencies.iter().sum::<f64>() / latencies.len() as f64;
    }
    s.latency_p50_ms = percentile(&latencies, 50.0);
    s.latency_p95_ms = percentile(&latencies, 95.0);
    s.latency_p99_ms = percentile(&latencies, 99.0);

    s.trades_established = trades.len() as u64;
    let mut done: Vec<u64> = trades.values().filter_map(|t| t.completed_us).collect();
    done.sort_unstable();
    s.trades_completed = done.len() as u64;
    s.trades_aborted = trades.values().filter(|t| t.aborted_us.is_some()).count() as u64;
    s.peak_throughput = peak(&done, 1_000_000);
    s.blocks_created = block_times.len() as u64;
    if duration_us > 0 {
        let secs = duration_us as f64 / 1e6;
        s.throughput = done.iter().filter(|t| **t <= duration_us).count() as f64 / secs;
        s.blocks_per_sec = block_times.iter().filter(|t| **t <= duration_us).count() as f64 / secs;
    }

    let peers: Vec<PeerRow> = infos
        .iter()
        .map(|p| {
            let (st, sa) = stolen.get(&p.id).copied().unwrap_or_default();
            PeerRow {
                peer: p.id,
                role: p.role,
                behavior: p.behavior,
                messages_sent: sent.get(&p.id).copied().unwrap_or(0),
                blocks_created: blocks.get(&p.id).copied().unwrap_or(0),
                stolen_trades: st,
                stolen_amount: sa,
            }
        })
        .collect();
    s.stolen_trades = peers.iter().map(|p| p.stolen_trades).sum();
    s.stolen_amount = peers.iter().map(|p| p.stolen_amount).sum();

    MetricsLog { orders: orders.into_values().collect(), trades: trades.into_values().collect(), peers, summary: s }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace_gives_zeros() {
        assert_eq!(compute_metrics(&[]), MetricsLog::default());
    }

    #[test]
    fn field_list_covers_summary() {
        let json = serde_json::to_value(Summary::default()).unwrap();
        let names: Vec<&str> = Summary::default().fields().iter().map(|f| f.0).collect();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, keys);
    }

    #[test]
    fn percentiles_nearest_rank() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), 5.0);
        assert_eq!(percentile(&v, 95.0), 10.0);
        assert_eq!(percentile(&[7.0], 99.0), 7.0);
    }

    #[test]
    fn peak_counts_half_open_window() {
        assert_eq!(peak(&[0, 999_999, 1_000_000, 1_500_000], 1_000_000), 3);
        assert_eq!(peak(&[], 1_000_000), 0);
    }
}
