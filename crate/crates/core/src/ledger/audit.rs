//! Responsibility audits over a ledger view.
//!
//! A payment counts as made only when a Payment block claims it and the
//! external chain confirms a transfer of the scheduled amount to the
//! receiver's agreed wallet. Claims that cannot be resolved are treated as
//! not made.

use super::block::AgreementTx;
use super::store::{LedgerStore, TradeRecord};
use crate::assets::{ExternalChainQuery, TxStatus};
use crate::crypto::PeerId;
use crate::time::{SimDuration, SimTime};

/// Whether `payer`'s payment number `index` is made and final.
pub fn payment_made(
    a: &AgreementTx,
    trade: &TradeRecord,
    payer: &PeerId,
    index: u32,
    ext: &dyn ExternalChainQuery,
) -> bool {
    let amount = a.increment(payer, index);
    let dest = a.destination(payer);
    trade.claims(payer, index).iter().any(|c| {
        let p = &c.payment;
        if p.amount != amount || p.external_txid.chain != *a.pay_asset(payer) {
            return false;
        }
        match ext.lookup(&p.external_txid) {
            TxStatus::Confirmed(tx) => tx.amount == amount && tx.to == *dest,
            _ => false,
        }
    })
}

/// The peer who must make the next payment, or `None` once all are made.
pub fn next_payer(a: &AgreementTx, trade: &TradeRecord, ext: &dyn ExternalChainQuery) -> Option<PeerId> {
    a.schedule().into_iter().find(|(payer, k)| !payment_made(a, trade, payer, *k, ext)).map(|(payer, _)| payer)
}

/// Number of ongoing, established trades in which `subject` owes the next
/// payment.
pub fn audit_responsibilities(subject: &PeerId, store: &LedgerStore, ext: &dyn ExternalChainQuery) -> usize {
    store
        .open_trades(subject)
        .filter(|(_, t)| t.established())
        .filter(|(_, t)| match &t.agreement {
            Some(a) => next_payer(a, t, ext) == Some(*subject),
            None => false,
        })
        .count()
}

/// Number of trades that still expose others to `subject`: agreements
/// published by an initiator that are not yet countersigned but still before
/// their deadline, and established trades in which `subject` has payments
/// left to make. An established trade stops counting once it is older than
/// `stale_after` while `subject` is not the next payer, because the other
/// side has then abandoned it. Used as a publication-time guard so that
/// concurrent agreements cannot expose several initiators to one
/// counterparty at once.
pub fn open_obligations(
    subject: &PeerId,
    store: &LedgerStore,
    ext: &dyn ExternalChainQuery,
    now: SimTime,
    stale_after: SimDuration,
) -> usize {
    store
        .open_trades(subject)
        .filter(|(_, t)| {
            let Some(a) = &t.agreement else { return false };
            if !(1..=a.payments_per_side).any(|k| !payment_made(a, t, subject, k, ext)) {
                return false;
            }
            if t.established() {
                now <= a.created_at + stale_after || next_payer(a, t, ext) == Some(*subject)
            } else {
                t.initiator_block.is_some() && now <= a.publication_deadline
            }
        })
        .count()
}
