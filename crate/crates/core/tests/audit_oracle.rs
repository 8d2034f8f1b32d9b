//! Exhaustive check of responsibility audits for up to three payments per
//! side, against a direct reading of the payment schedule.

use xchange_core::assets::{ChainId, ChainRegistry, ExternalTxId, MockChain, WalletAddress};
use xchange_core::ledger::{audit_responsibilities, AgreementTx, LedgerStore, PaymentTx, TxPayload};
use xchange_core::orderbook::{AssetPair, OrderId};
use xchange_core::{Identity, SimDuration, SimTime};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pay {
    Absent,
    Valid,
    /// Claimed, but the transfer moved less than the scheduled amount.
    Short,
    /// Claimed, transfer not yet confirmed when audited.
    Unconfirmed,
}

const STATES: [Pay; 4] = [Pay::Absent, Pay::Valid, Pay::Short, Pay::Unconfirmed];
const AUDIT_AT: SimTime = SimTime::from_secs(100);

fn agreement(a: &Identity, b: &Identity, n: u32) -> AgreementTx {
    AgreementTx {
        initiator: a.peer_id(),
        counterparty: b.peer_id(),
        initiator_order: OrderId { creator: a.peer_id(), seq: 1 },
        counterparty_order: OrderId { creator: b.peer_id(), seq: 1 },
        pair: AssetPair::new("BTC", 300, "ETH", 600),
        initiator_is_offer: true,
        payments_per_side: n,
        publication_deadline: SimTime::from_secs(10),
        initiator_wallet: WalletAddress::for_peer(&ChainId::new("ETH"), &a.peer_id()),
        counterparty_wallet: WalletAddress::for_peer(&ChainId::new("BTC"), &b.peer_id()),
        created_at: SimTime::ZERO,
    }
}

/// Expected responsibilities of (initiator, counterparty).
fn oracle(states: &[Pay], established: bool) -> (usize, usize) {
    if !established {
        return (0, 0);
    }
    // Entry k of the schedule is paid by the initiator when k is even.
    match states.iter().position(|s| *s != Pay::Valid) {
        None => (0, 0),
        Some(k) if k % 2 == 0 => (1, 0),
        Some(_) => (0, 1),
    }
}

fn audit(n: u32, states: &[Pay], established: bool) -> (usize, usize) {
    let (a, b) = (Identity::derive(3, 1), Identity::derive(3, 2));
    let ag = agreement(&a, &b, n);
    let mut reg = ChainRegistry::new();
    for c in ["BTC", "ETH"] {
        let mut chain = MockChain::new(ChainId::new(c), SimDuration::from_secs(10));
        for who in [&a, &b] {
            chain.faucet(&WalletAddress::for_peer(chain.id(), &who.peer_id()), 10_000).unwrap();
        }
        reg.add(chain);
    }
    reg.close_setup();

    let mut sa = LedgerStore::new();
    let mut sb = LedgerStore::new();
    let init = sa.initiate_bilateral(&a, b.peer_id(), TxPayload::Agreement(ag.clone())).unwrap();
    let mut view = LedgerStore::new();
    view.insert(init.clone()).unwrap();
    if established {
        let (resp, _) = sb.countersign(&b, &init, |_| Ok(())).unwrap();
        view.insert(resp).unwrap();
    }
    for ((payer, k), state) in ag.schedule().into_iter().zip(states) {
        if *state == Pay::Absent {
            continue;
        }
        let who = if payer == a.peer_id() { &a } else { &b };
        let amount = ag.increment(&payer, k);
        let sent = if *state == Pay::Short { amount - 1 } else { amount };
        let at = if *state == Pay::Unconfirmed { AUDIT_AT } else { SimTime::ZERO };
        let from = WalletAddress::for_peer(ag.pay_asset(&payer), &payer);
        let txid: ExternalTxId = reg.transfer(&from, ag.destination(&payer), sent, at).unwrap();
        let pay = PaymentTx { trade_ref: init.block_ref(), payer, amount, external_txid: txid, payment_index: k };
        let store = if payer == a.peer_id() { &mut sa } else { &mut sb };
        let block = store.initiate_bilateral(who, ag.other(&payer), TxPayload::Payment(pay)).unwrap();
        view.insert(block).unwrap();
    }
    let ext = reg.at(AUDIT_AT);
    (audit_responsibilities(&a.peer_id(), &view, &ext), audit_responsibilities(&b.peer_id(), &view, &ext))
}

#[test]
fn responsibilities_match_schedule_oracle() {
    let mut cases = 0;
    for n in 1..=3u32 {
        let len = 2 * n as usize;
        for code in 0..4usize.pow(len as u32) {
            let states: Vec<Pay> = (0..len).map(|i| STATES[(code >> (2 * i)) & 3]).collect();
            for established in [false, true] {
                assert_eq!(
                    audit(n, &states, established),
                    oracle(&states, established),
                    "n={n} states={states:?} established={established}"
                );
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 2 * (16 + 256 + 4096));
}
