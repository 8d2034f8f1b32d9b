//! Agreement withholders move nothing, a biased matchmaker cannot keep
//! orders from filling, and a stalling counterparty only costs a timeout.

use std::path::Path;

use xchange_core::assets::WalletAddress;
use xchange_core::ledger::TxPayload;
use xchange_core::protocol::Behavior;
use xchange_core::PeerId;
use xchange_sim::{run, RunOutput, Scenario, TraceKind};

use crate::Outcome;

fn scenario(file: &str) -> Result<RunOutput, String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(file);
    let s = Scenario::load(&path).map_err(|e| e.to_string())?;
    let out = run(&s).map_err(|e| e.to_string())?;
    match out.checks.iter().find(|c| !c.passed) {
        Some(c) => Err(format!("{file}: check {} failed: {}", c.name, c.detail)),
        None => Ok(out),
    }
}

fn adversary(out: &RunOutput, behavior: Behavior) -> Option<usize> {
    (0..out.scenario.peers.traders).find(|i| out.scenario.trader_behavior(*i) == behavior)
}

/// External transfers touching any of `peer`'s wallets.
fn transfers(out: &RunOutput, peer: PeerId) -> usize {
    out.chains
        .chains()
        .map(|c| {
            let w = WalletAddress::for_peer(c.id(), &peer);
            c.transactions().iter().filter(|t| t.from == w || t.to == w).count()
        })
        .sum()
}

fn agreement_withholder() -> Result<String, String> {
    let out = scenario("agreement_withholder.toml")?;
    let i = adversary(&out, Behavior::AgreementWithholder).ok_or("no agreement withholder")?;
    let moved = transfers(&out, out.trader_id(i));
    let tried = out.events.iter().any(|e| {
        matches!(&e.kind, TraceKind::Send { from, msg, .. } if *from == out.trader_id(i) && msg == "PartialAgreement")
            || matches!(&e.kind, TraceKind::Send { to, msg, .. } if *to == out.trader_id(i) && msg == "PartialAgreement")
    });
    if !tried {
        return Err("withholder never reached the agreement phase".into());
    }
    match moved {
        0 => Ok("agreement withholder moved no assets".into()),
        n => Err(format!("{n} transfers touched the agreement withholder")),
    }
}

fn biased_matchmaker() -> Result<String, String> {
    let out = scenario("biased_matchmaker.toml")?;
    let m = &out.metrics.summary;
    if m.orders_created == 0 || m.orders_fulfilled != m.orders_created {
        return Err(format!("biased matchmaker: {}/{} orders fulfilled", m.orders_fulfilled, m.orders_created));
    }
    Ok(format!("biased matchmaker: {}/{} orders fulfilled", m.orders_fulfilled, m.orders_created))
}

fn negotiation_staller() -> Result<String, String> {
    let out = scenario("negotiation_staller.toml")?;
    let staller = out.trader_id(adversary(&out, Behavior::NegotiationStaller).ok_or("no staller")?);
    let (honest, victim) = (out.trader_id(1), out.trader_id(2));
    let proposed_to_staller = out.events.iter().any(
        |e| matches!(&e.kind, TraceKind::Send { from, to, msg, .. } if *from == victim && *to == staller && msg == "TradeProposal"),
    );
    if !proposed_to_staller {
        return Err("victim never proposed to the staller".into());
    }
    if out.metrics.summary.request_timeouts == 0 {
        return Err("no request timed out".into());
    }
    let traded = out.ledger.chain(&victim).iter().any(|b| match &b.payload {
        TxPayload::TradeDone(_) => b.counterparties.contains(&honest),
        _ => false,
    });
    if !traded {
        return Err("victim did not complete a trade with the next candidate".into());
    }
    Ok(format!(
        "staller cost {} timeout(s), victim traded with the next candidate",
        out.metrics.summary.request_timeouts
    ))
}

pub fn check() -> Outcome {
    let mut notes = Vec::new();
    for f in [agreement_withholder, biased_matchmaker, negotiation_staller] {
        match f() {
            Ok(n) => notes.push(n),
            Err(e) => return Outcome::new(false, e),
        }
    }
    Outcome::new(true, notes.join("; "))
}
