//! One offer, one request, instant settlement: the golden message sequence,
//! 2n payment blocks, one dual-signed trade-done block.

use std::path::Path;
use std::time::Duration;

use xchange_core::ledger::{verify_ledger, BlockPartition, LinkRole, TxPayload};
use xchange_core::PeerId;
use xchange_sim::{run, Scenario, TraceKind};

use crate::Outcome;

const WALL_LIMIT: Duration = Duration::from_secs(1);

/// Expected non-ledger messages, A offering and B requesting through M.
/// B receives the match and initiates.
pub fn golden(n: u32) -> Vec<String> {
    let mut want = vec!["Order A>M", "Order B>M", "Match M>B", "TradeProposal B>A", "TradeAccept A>B"];
    want.extend(["PartialAgreement B>A", "Agreement A>B"]);
    for _ in 0..n {
        want.extend(["Payment B>A", "Payment A>B"]);
    }
    want.extend(["PartialTradeDone B>A", "TradeDone A>M", "TradeDone A>B", "TradeDone B>M"]);
    want.into_iter().map(String::from).collect()
}

fn one(n: u32) -> Result<Duration, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/single_trade.toml");
    let mut s = Scenario::load(&path).map_err(|e| e.to_string())?;
    s.policy.payments_per_side = n;
    let out = run(&s).map_err(|e| e.to_string())?;
    let (m, a, b) = (out.peers[0].id(), out.trader_id(0), out.trader_id(1));
    let name = |p: &PeerId| match p {
        p if *p == a => "A",
        p if *p == b => "B",
        p if *p == m => "M",
        _ => "?",
    };

    let got: Vec<String> = out
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            TraceKind::Send { from, to, msg, .. } if msg != "Block" && msg != "BlockAck" => {
                Some(format!("{msg} {}>{}", name(from), name(to)))
            }
            _ => None,
        })
        .collect();
    if got != golden(n) {
        return Err(format!("message sequence {got:?}"));
    }

    let all: Vec<BlockPartition> = out.ledger.peers().flat_map(|p| out.ledger.chain(p)).cloned().collect();
    let report = verify_ledger(&all, &out.witness_copies(None));
    if !report.is_valid() {
        return Err(format!("ledger invalid: {:?}", report.violations));
    }
    let mut payments: Vec<_> = all
        .iter()
        .filter_map(|b| match &b.payload {
            TxPayload::Payment(p) => Some((p.trade_ref.hash, p.payer, p.payment_index)),
            _ => None,
        })
        .collect();
    payments.sort();
    payments.dedup();
    if payments.len() != 2 * n as usize {
        return Err(format!("{} payment blocks", payments.len()));
    }
    let done: Vec<&BlockPartition> = all.iter().filter(|b| matches!(b.payload, TxPayload::TradeDone(_))).collect();
    // One bilateral block: the initiator half carries the responder's
    // signature, and the responder half, signed by the responder, links it.
    let init = done.iter().find(|b| b.role == LinkRole::Initiator);
    let resp = done.iter().find(|b| b.role == LinkRole::Responder);
    let dual = done.len() == 2
        && match (init, resp) {
            (Some(i), Some(r)) => {
                i.signature_valid()
                    && r.signature_valid()
                    && i.fully_countersigned()
                    && i.valid_countersigners() == vec![r.creator]
                    && r.prev_hash_counterparty == Some(i.hash())
            }
            _ => false,
        };
    if !dual {
        return Err(format!("{} trade-done partitions, not one dual-signed block", done.len()));
    }
    if out.metrics.summary.trades_completed != 1 {
        return Err(format!("{} trades completed", out.metrics.summary.trades_completed));
    }
    Ok(out.wall)
}

pub fn check() -> Outcome {
    let mut walls = Vec::new();
    for n in 1..=3 {
        match one(n) {
            Ok(w) => walls.push(w),
            Err(e) => return Outcome::new(false, format!("n={n}: {e}")),
        }
    }
    let detail = format!(
        "golden sequence and blocks for n=1..3; n=1 ran in {:.1} ms wall (limit {} ms)",
        walls[0].as_secs_f64() * 1e3,
        WALL_LIMIT.as_millis()
    );
    Outcome::new(walls[0] < WALL_LIMIT, detail)
}
