//! Payment withholders among honest RESTRICT(1) traders steal from at most
//! one trade, and with two payments per side at most one increment of it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xchange_core::assets::{ExternalTxId, WalletAddress};
use xchange_core::ledger::{AgreementTx, LinkRole, TxPayload};
use xchange_core::protocol::Behavior;
use xchange_core::{Hash, PeerId};
use xchange_sim::scenario::AdversarySpec;
use xchange_sim::{run, PolicySpec, RunOutput, Scenario};

use crate::Outcome;

const RUNS: usize = 100;
const CONTROL_RUNS: usize = 10;
const HONEST: std::ops::RangeInclusive<usize> = 20..=100;
const WORKLOAD_SECS: f64 = 1.5;
const BUDGET: Duration = Duration::from_secs(120);

/// One trade in which the thief kept payments it did not reciprocate.
#[derive(Debug)]
pub struct Theft {
    pub trade: String,
    pub stolen: u64,
    /// One increment of the victim's side, rounded up. Zero when the
    /// transfer could not be tied to any agreement.
    pub bound: u64,
}

/// Reads every transfer into and out of `thief`'s wallets from the external
/// chains, ties them to trades through the payment blocks on the ledger and
/// returns the trades with unreciprocated incoming payments.
pub fn thefts(out: &RunOutput, thief: PeerId) -> Vec<Theft> {
    let mut agreements: HashMap<Hash, AgreementTx> = HashMap::new();
    let mut payments: HashMap<ExternalTxId, (Hash, u32)> = HashMap::new();
    for peer in out.ledger.peers() {
        for b in out.ledger.chain(peer) {
            match &b.payload {
                TxPayload::Agreement(a) if b.role == LinkRole::Initiator => {
                    agreements.insert(b.hash(), a.clone());
                }
                TxPayload::Payment(p) => {
                    payments.insert(p.external_txid.clone(), (p.trade_ref.hash, p.payment_index));
                }
                _ => {}
            }
        }
    }

    let mut found = Vec::new();
    let mut trades: BTreeMap<Hash, (BTreeMap<u32, u64>, BTreeSet<u32>)> = BTreeMap::new();
    for chain in out.chains.chains() {
        let wallet = WalletAddress::for_peer(chain.id(), &thief);
        for tx in chain.transactions() {
            let inbound = tx.to == wallet;
            if !inbound && tx.from != wallet {
                continue;
            }
            match payments.get(&tx.id()) {
                Some((trade, k)) => {
                    let e = trades.entry(*trade).or_default();
                    if inbound {
                        *e.0.entry(*k).or_default() += tx.amount;
                    } else {
                        e.1.insert(*k);
                    }
                }
                None if inbound => found.push(Theft { trade: format!("tx {}", tx.txid), stolen: tx.amount, bound: 0 }),
                None => {}
            }
        }
    }

    for (trade, (received, paid)) in trades {
        let stolen: u64 = received.iter().filter(|(k, _)| !paid.contains(k)).map(|(_, a)| a).sum();
        if stolen == 0 {
            continue;
        }
        let bound = agreements.get(&trade).map_or(0, |a| {
            let victim_is_initiator = a.initiator != thief;
            let pays_base = victim_is_initiator == a.initiator_is_offer;
            let total = if pays_base { a.pair.base_qty } else { a.pair.quote_qty };
            let n = a.payments_per_side.max(1) as u64;
            total.div_ceil(n)
        });
        found.push(Theft { trade: format!("trade {trade}"), stolen, bound });
    }
    found
}

fn scenario(rng: &mut ChaCha8Rng, restrict: Option<u32>, payments_per_side: u32) -> (Scenario, usize) {
    let traders = rng.gen_range(HONEST) + 1;
    let policy = PolicySpec { restrict, payments_per_side, ..PolicySpec::default() };
    let mut s = Scenario::synthetic(2 * traders as u32, WORKLOAD_SECS, policy, rng.gen());
    let thief = rng.gen_range(0..traders);
    s.adversaries =
        vec![AdversarySpec { trader: Some(thief), matchmaker: None, behavior: Behavior::PaymentWithholder }];
    (s, thief)
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF4A0D);
    let mut problems = Vec::new();
    let mut with_theft = 0;
    let start = Instant::now();
    for i in 0..RUNS {
        let n = 1 + (i % 2) as u32;
        let (s, thief) = scenario(&mut rng, Some(1), n);
        let out = match run(&s) {
            Ok(o) => o,
            Err(e) => return Outcome::new(false, format!("run {i}: {e}")),
        };
        let found = thefts(&out, out.trader_id(thief));
        let tag = format!("run {i} (seed {}, {} traders, incset {n})", s.seed, s.peers.traders);
        if found.len() > 1 {
            problems.push(format!("{tag}: stole from {} trades", found.len()));
        }
        for t in found.iter().filter(|t| n > 1 && t.stolen > t.bound) {
            problems.push(format!("{tag}: {} stolen {} > increment {}", t.trade, t.stolen, t.bound));
        }
        if out.metrics.summary.stolen_trades != found.len() as u64 {
            problems.push(format!(
                "{tag}: metrics report {} stolen trades, chains show {}",
                out.metrics.summary.stolen_trades,
                found.len()
            ));
        }
        if let Some(c) = out.checks.iter().find(|c| !c.passed) {
            problems.push(format!("{tag}: check {} failed: {}", c.name, c.detail));
        }
        with_theft += usize::from(!found.is_empty());
    }
    let elapsed = start.elapsed();
    if elapsed > BUDGET {
        problems.push(format!("took {:.0}s, budget {}s", elapsed.as_secs_f64(), BUDGET.as_secs()));
    }

    // Without RESTRICT the same adversary must be able to steal repeatedly,
    // otherwise the runs above prove nothing.
    let mut control_max = 0;
    for _ in 0..CONTROL_RUNS {
        let (s, thief) = scenario(&mut rng, None, 1);
        let out = run(&s).expect("control run");
        control_max = control_max.max(thefts(&out, out.trader_id(thief)).len());
    }
    if control_max <= 1 {
        problems.push(format!("control without RESTRICT stole from at most {control_max} trade"));
    }
    if with_theft == 0 {
        problems.push("no run produced a theft".into());
    }

    let detail = format!(
        "{RUNS} runs, {with_theft} with one theft, none above one increment at incset 2; \
         control without RESTRICT stole from up to {control_max} trades; {:.0}s of {}s",
        elapsed.as_secs_f64(),
        BUDGET.as_secs()
    );
    match problems.is_empty() {
        true => Outcome::new(true, detail),
        false => Outcome::new(false, format!("{}; {detail}", problems.join("; "))),
    }
}
