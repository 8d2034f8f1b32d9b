use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xchange_core::assets::{AssetError, ChainId, ChainRegistry, ExternalTxId, MockChain, WalletAddress};
use xchange_core::ledger::{verify_ledger, BlockPartition, Inserted, LedgerStore};
use xchange_core::protocol::{Behavior, Context, Envelope, Matchmaker, Observation, Peer, Timer, TimerId, Trader};
use xchange_core::{Identity, PeerId, SimDuration, SimTime};

use crate::latency::LatencyModel;
use crate::metrics::{compute_metrics, MetricsLog};
use crate::scenario::{duration_ms, duration_secs, Scenario, ScenarioError, Side, Workload};
use crate::trace::{PeerInfo, Role, TraceEvent, TraceKind, TraceSink};

const MATCHMAKER_KEY_BASE: u64 = 1 << 32;

enum Action {
    Deliver(Box<Envelope>),
    Timer { peer: usize, timer: Timer },
    Order { trader: usize, side: Option<Side>, base_qty: u64, quote_qty: u64, repeat: Option<SimDuration> },
}

/// One invariant evaluated at the end of a run.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub struct RunOutput {
    pub scenario: Scenario,
    pub events: Vec<TraceEvent>,
    pub trace_hash: String,
    pub metrics: MetricsLog,
    pub checks: Vec<Check>,
    /// Every partition published during the run.
    pub ledger: LedgerStore,
    pub peers: Vec<Peer>,
    pub chains: ChainRegistry,
    pub end: SimTime,
    pub wall: Duration,
}

impl RunOutput {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn trader(&self, i: usize) -> &Trader {
        let m = self.scenario.peers.matchmakers;
        self.peers[m + i].as_trader().expect("trader index")
    }

    pub fn trader_id(&self, i: usize) -> PeerId {
        self.peers[self.scenario.peers.matchmakers + i].id()
    }

    /// Copies peers hold of other peers' chains, with the holder.
    pub fn held_copies(&self) -> Vec<(PeerId, &BlockPartition)> {
        let mut out = Vec::new();
        for p in &self.peers {
            let store = match p {
                Peer::Trader(t) => t.ledger(),
                Peer::Matchmaker(m) => m.witnesses(),
            };
            for id in store.peers().filter(|id| **id != p.id()) {
                out.extend(store.chain(id).into_iter().map(|b| (p.id(), b)));
            }
        }
        out
    }

    /// Partitions held by every peer other than `except`: their own chains,
    /// copies received from counterparties and matchmakers' order witnesses.
    pub fn witness_copies(&self, except: Option<PeerId>) -> Vec<BlockPartition> {
        let mut out = Vec::new();
        for p in &self.peers {
            if Some(p.id()) == except {
                continue;
            }
            let store = match p {
                Peer::Trader(t) => t.ledger(),
                Peer::Matchmaker(m) => m.witnesses(),
            };
            for id in store.peers() {
                out.extend(store.chain(id).into_iter().cloned());
            }
        }
        out
    }
}

/// Event queue, clocks, chains and the global ledger view. Peers live
/// beside it so that a peer can be borrowed while it acts on the world.
struct World {
    now: SimTime,
    seq: u64,
    queue: BinaryHeap<Reverse<(SimTime, u64)>>,
    events: HashMap<u64, Action>,
    chains: ChainRegistry,
    oracle: LedgerStore,
    audit: bool,
    latency: LatencyModel,
    trace: TraceSink,
    index: HashMap<PeerId, usize>,
    orders_issued: u64,
}

impl World {
    fn schedule(&mut self, at: SimTime, action: Action) -> u64 {
        assert!(at >= self.now, "event scheduled in the past: {at:?} < {:?}", self.now);
        self.seq += 1;
        self.queue.push(Reverse((at, self.seq)));
        self.events.insert(self.seq, action);
        self.seq
    }

    fn record(&mut self, kind: TraceKind) {
        self.trace.push(self.now.as_micros(), kind);
    }
}

struct Ctx<'a> {
    world: &'a mut World,
    me: usize,
}

impl Context for Ctx<'_> {
    fn now(&self) -> SimTime {
        self.world.now
    }

    fn send(&mut self, envelope: Envelope) {
        let w = &mut *self.world;
        let (from, to, msg, id) =
            (envelope.sender, envelope.recipient, envelope.body.kind().to_string(), envelope.request_id);
        w.record(TraceKind::Send { from, to, msg: msg.clone(), id });
        match w.latency.sample() {
            Some(d) => {
                let at = w.now + d;
                w.schedule(at, Action::Deliver(Box::new(envelope)));
            }
            None => w.record(TraceKind::Drop { from, to, msg, id }),
        }
    }

    fn set_timer(&mut self, after: SimDuration, timer: Timer) -> TimerId {
        let at = self.world.now + after;
        let peer = self.me;
        self.world.schedule(at, Action::Timer { peer, timer })
    }

    fn cancel_timer(&mut self, id: TimerId) {
        if let Some(Action::Timer { peer, .. }) = self.world.events.get(&id) {
            debug_assert_eq!(*peer, self.me, "timer cancelled by another peer");
            self.world.events.remove(&id);
        }
    }

    fn chains(&self) -> &ChainRegistry {
        &self.world.chains
    }

    fn transfer(&mut self, from: &WalletAddress, to: &WalletAddress, amount: u64) -> Result<ExternalTxId, AssetError> {
        let now = self.world.now;
        self.world.chains.transfer(from, to, amount, now)
    }

    fn ledger_oracle(&self) -> Option<&LedgerStore> {
        self.world.audit.then_some(&self.world.oracle)
    }

    fn publish(&mut self, partition: &BlockPartition) {
        match self.world.oracle.insert_trusted(partition.clone()) {
            Ok(Inserted::New) => {
                let kind = TraceKind::Block {
                    creator: partition.creator,
                    seq: partition.seq,
                    tx: partition.payload.kind().into(),
                };
                self.world.record(kind);
            }
            Ok(Inserted::Known) => {}
            Err(e) => log::warn!("published partition rejected by ledger view: {e}"),
        }
    }

    fn observe(&mut self, observation: Observation) {
        self.world.record(TraceKind::Obs(observation));
    }
}

/// Runs a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    run_with_trace(scenario, None)
}

/// As [`run`], additionally streaming the trace as JSON lines to `out`.
pub fn run_with_trace(scenario: &Scenario, out: Option<Box<dyn Write>>) -> Result<RunOutput, ScenarioError> {
    scenario.validate()?;
    let started = Instant::now();
    let s = scenario;
    let config = s.policy.protocol_config();
    let mut seeds = ChaCha8Rng::seed_from_u64(s.seed);
    let latency_rng = ChaCha8Rng::from_rng(&mut seeds).expect("rng");
    let mut select_rng = ChaCha8Rng::from_rng(&mut seeds).expect("rng");

    let mut chains = ChainRegistry::new();
    for c in &s.chains {
        chains.add(MockChain::new(ChainId::new(c.id.clone()), duration_ms(c.confirmation_delay_ms)));
    }

    let mut peers = Vec::new();
    let mut infos = Vec::new();
    let mut mm_ids = Vec::new();
    for i in 0..s.peers.matchmakers {
        let ident = Identity::derive(s.seed, MATCHMAKER_KEY_BASE + i as u64);
        let behavior = s.matchmaker_behavior(i);
        mm_ids.push(ident.peer_id());
        infos.push(PeerInfo { id: ident.peer_id(), role: Role::Matchmaker, behavior });
        peers.push(Peer::Matchmaker(Box::new(Matchmaker::new(ident, config.clone(), behavior))));
    }
    let fanout = s.peers.fanout();
    for i in 0..s.peers.traders {
        let ident = Identity::derive(s.seed, i as u64);
        let id = ident.peer_id();
        let mut picks = sample(&mut select_rng, mm_ids.len(), fanout).into_vec();
        picks.sort_unstable();
        let mms = picks.into_iter().map(|k| mm_ids[k]).collect();
        for c in &s.chains {
            let chain_id = ChainId::new(c.id.clone());
            let chain = chains.get_mut(&chain_id).expect("chain added");
            chain.faucet(&WalletAddress::for_peer(&chain_id, &id), c.funds).expect("faucet before setup");
        }
        let behavior = s.trader_behavior(i);
        infos.push(PeerInfo { id, role: Role::Trader, behavior });
        peers.push(Peer::Trader(Box::new(Trader::new(ident, config.clone(), behavior, mms))));
    }
    chains.close_setup();

    let duration = duration_secs(s.duration_secs);
    let end = SimTime::ZERO + duration + duration_secs(s.drain_secs);
    let mut world = World {
        now: SimTime::ZERO,
        seq: 0,
        queue: BinaryHeap::new(),
        events: HashMap::new(),
        chains,
        oracle: LedgerStore::new(),
        audit: s.audit,
        latency: LatencyModel::new(
            duration_ms(s.network.latency_min_ms),
            duration_ms(s.network.latency_max_ms),
            s.network.loss,
            latency_rng,
        ),
        trace: TraceSink::new(out),
        index: peers.iter().enumerate().map(|(i, p)| (p.id(), i)).collect(),
        orders_issued: 0,
    };
    world.record(TraceKind::Run {
        scenario: s.name.clone(),
        seed: s.seed,
        duration_us: duration.as_micros(),
        peers: infos,
    });

    let m = s.peers.matchmakers;
    let workload_end = SimTime::ZERO + duration;
    match &s.workload {
        Workload::Synthetic { order_interval_ms, base_qty, quote_qty, .. } => {
            let interval = duration_ms(*order_interval_ms);
            let n = s.peers.traders as u64;
            for i in 0..s.peers.traders {
                let offset = SimDuration::from_micros(interval.as_micros() * i as u64 / n);
                let at = SimTime::ZERO + offset;
                if at < workload_end {
                    let action = Action::Order {
                        trader: m + i,
                        side: None,
                        base_qty: *base_qty,
                        quote_qty: *quote_qty,
                        repeat: Some(interval),
                    };
                    world.schedule(at, action);
                }
            }
        }
        Workload::Scripted { orders, .. } => {
            for o in orders {
                let action = Action::Order {
                    trader: m + o.trader,
                    side: Some(o.side),
                    base_qty: o.base_qty,
                    quote_qty: o.quote_qty,
                    repeat: None,
                };
                world.schedule(SimTime::ZERO + duration_ms(o.at_ms), action);
            }
        }
    }

    let order_timeout = s.workload.order_timeout();
    while let Some(&Reverse((at, id))) = world.queue.peek() {
        if at > end {
            break;
        }
        world.queue.pop();
        let Some(action) = world.events.remove(&id) else { continue };
        debug_assert!(at >= world.now, "clock moved backwards");
        world.now = at;
        match action {
            Action::Deliver(env) => {
                world.record(TraceKind::Deliver {
                    from: env.sender,
                    to: env.recipient,
                    msg: env.body.kind().to_string(),
                    id: env.request_id,
                });
                let Some(&i) = world.index.get(&env.recipient) else { continue };
                peers[i].on_message(&mut Ctx { world: &mut world, me: i }, *env);
            }
            Action::Timer { peer, timer } => {
                peers[peer].on_timer(&mut Ctx { world: &mut world, me: peer }, id, timer);
            }
            Action::Order { trader, side, base_qty, quote_qty, repeat } => {
                let is_offer = match side {
                    Some(side) => side == Side::Offer,
                    None => world.orders_issued.is_multiple_of(2),
                };
                world.orders_issued += 1;
                let pair = s.workload.pair(base_qty, quote_qty);
                let t = peers[trader].as_trader_mut().expect("orders go to traders");
                if let Err(e) =
                    t.create_order(&mut Ctx { world: &mut world, me: trader }, pair, is_offer, order_timeout)
                {
                    log::warn!("order rejected at creation: {e}");
                }
                if let Some(interval) = repeat {
                    let next = at + interval;
                    if next < workload_end {
                        world.schedule(next, Action::Order { trader, side, base_qty, quote_qty, repeat });
                    }
                }
            }
        }
    }
    let live_events = world.events.len();
    let live_deliveries = world.events.values().filter(|a| matches!(a, Action::Deliver(_))).count();
    world.record(TraceKind::End { live_events });
    let finish = world.now;

    let (events, trace_hash) = std::mem::replace(&mut world.trace, TraceSink::new(None)).finish();
    let metrics = compute_metrics(&events);
    let mut checks = Vec::new();
    checks.push(causality(&events));
    checks.push(ledger_integrity(&world.oracle, &peers));
    checks.push(conservation(&mut world.chains, finish, s));
    let honest = s.adversaries.iter().all(|a| a.behavior == Behavior::Honest);
    if honest && s.network.loss == 0.0 {
        checks.push(drain(&peers, live_events, live_deliveries));
    }
    let _ = end;
    Ok(RunOutput {
        scenario: s.clone(),
        events,
        trace_hash,
        metrics,
        checks,
        ledger: world.oracle,
        peers,
        chains: world.chains,
        end: finish,
        wall: started.elapsed(),
    })
}

fn causality(events: &[TraceEvent]) -> Check {
    let mut last = 0;
    let mut in_flight: HashSet<(PeerId, u64)> = HashSet::new();
    for e in events {
        if e.t < last {
            return Check { name: "causality", passed: false, detail: format!("clock went back at t={}", e.t) };
        }
        last = e.t;
        match &e.kind {
            TraceKind::Send { from, id, .. } => {
                in_flight.insert((*from, *id));
            }
            TraceKind::Deliver { from, id, .. } if !in_flight.remove(&(*from, *id)) => {
                let detail = format!("delivery of {from}/{id} at t={} without a send", e.t);
                return Check { name: "causality", passed: false, detail };
            }
            _ => {}
        }
    }
    Check { name: "causality", passed: true, detail: String::new() }
}

fn ledger_integrity(ledger: &LedgerStore, peers: &[Peer]) -> Check {
    let mut parts = Vec::new();
    for id in ledger.peers() {
        parts.extend(ledger.chain(id).into_iter().cloned());
    }
    let witnesses: Vec<BlockPartition> = peers
        .iter()
        .filter_map(Peer::as_matchmaker)
        .flat_map(|m| {
            let w = m.witnesses();
            w.peers().flat_map(|id| w.chain(id)).cloned().collect::<Vec<_>>()
        })
        .collect();
    let report = verify_ledger(&parts, &witnesses);
    let frauds = ledger.fraud_proofs().len();
    let passed = report.is_valid() && frauds == 0;
    let detail = if passed {
        format!("{} partitions in {} chains", report.partitions, report.chains)
    } else {
        let first: Vec<String> = report.violations.iter().take(3).map(|v| v.to_string()).collect();
        format!("{} violations, {frauds} fraud proofs: {}", report.violations.len(), first.join("; "))
    };
    Check { name: "ledger-valid", passed, detail }
}

fn conservation(chains: &mut ChainRegistry, now: SimTime, s: &Scenario) -> Check {
    for c in &s.chains {
        let chain = chains.get_mut(&ChainId::new(c.id.clone())).expect("chain");
        chain.settle(now);
        let (held, minted) = (chain.balance_total() + chain.pending_total(), chain.faucet_total());
        if held != minted {
            let detail = format!("{}: {held} held but {minted} minted", c.id);
            return Check { name: "conservation", passed: false, detail };
        }
    }
    Check { name: "conservation", passed: true, detail: String::new() }
}

fn drain(peers: &[Peer], live_events: usize, live_deliveries: usize) -> Check {
    let open: usize = peers.iter().filter_map(Peer::as_trader).map(Trader::open_trades).sum();
    let requests: usize = peers.iter().map(Peer::live_requests).sum();
    let passed = live_events == 0 && open == 0 && requests == 0;
    let detail = format!(
        "{live_events} live events ({live_deliveries} undelivered), {open} open trades, {requests} live requests"
    );
    Check { name: "drained", passed, detail }
}
