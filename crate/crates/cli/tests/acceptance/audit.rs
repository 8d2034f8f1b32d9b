//! Responsibility audit against a walk over the payment schedule, for every
//! combination of payment states with up to three payments per side.

use xchange_core::assets::{ChainId, ChainRegistry, MockChain, WalletAddress};
use xchange_core::ledger::{audit_responsibilities, AgreementTx, LedgerStore, PaymentTx, TxPayload};
use xchange_core::orderbook::{AssetPair, OrderId};
use xchange_core::{Identity, PeerId, SimDuration, SimTime};

use crate::Outcome;

#[derive(Clone, Copy, Debug, PartialEq)]
enum Pay {
    Absent,
    Valid,
    /// Transfer moved less than the scheduled amount.
    Short,
    /// Transfer not confirmed at audit time.
    Unconfirmed,
    /// Transfer made, but no payment block claims it.
    Unclaimed,
}

const STATES: [Pay; 5] = [Pay::Absent, Pay::Valid, Pay::Short, Pay::Unconfirmed, Pay::Unclaimed];
const AUDIT_AT: SimTime = SimTime::from_secs(100);

/// Walks the schedule (initiator 1, counterparty 1, initiator 2, ...) and
/// charges the first unpaid slot to its payer.
fn walker(n: u32, states: &[Pay], established: bool, a: PeerId, b: PeerId) -> (usize, usize) {
    if !established {
        return (0, 0);
    }
    for k in 0..n as usize {
        for (slot, payer) in [(2 * k, a), (2 * k + 1, b)] {
            if states[slot] != Pay::Valid {
                return if payer == a { (1, 0) } else { (0, 1) };
            }
        }
    }
    (0, 0)
}

fn audit(n: u32, states: &[Pay], established: bool) -> (usize, usize) {
    let (a, b) = (Identity::derive(3, 1), Identity::derive(3, 2));
    let ag = AgreementTx {
        initiator: a.peer_id(),
        counterparty: b.peer_id(),
        initiator_order: OrderId { creator: a.peer_id(), seq: 1 },
        counterparty_order: OrderId { creator: b.peer_id(), seq: 1 },
        pair: AssetPair::new("BTC", 301, "ETH", 602),
        initiator_is_offer: true,
        payments_per_side: n,
        publication_deadline: SimTime::from_secs(10),
        initiator_wallet: WalletAddress::for_peer(&ChainId::new("ETH"), &a.peer_id()),
        counterparty_wallet: WalletAddress::for_peer(&ChainId::new("BTC"), &b.peer_id()),
        created_at: SimTime::ZERO,
    };
    let mut reg = ChainRegistry::new();
    for c in ["BTC", "ETH"] {
        let mut chain = MockChain::new(ChainId::new(c), SimDuration::from_secs(10));
        for who in [&a, &b] {
            chain.faucet(&WalletAddress::for_peer(chain.id(), &who.peer_id()), 10_000).unwrap();
        }
        reg.add(chain);
    }
    reg.close_setup();

    let (mut sa, mut sb, mut view) = (LedgerStore::new(), LedgerStore::new(), LedgerStore::new());
    let init = sa.initiate_bilateral(&a, b.peer_id(), TxPayload::Agreement(ag.clone())).unwrap();
    view.insert(init.clone()).unwrap();
    if established {
        let (resp, _) = sb.countersign(&b, &init, |_| Ok(())).unwrap();
        view.insert(resp).unwrap();
    }
    let slots: Vec<(PeerId, u32)> = (1..=n).flat_map(|k| [(a.peer_id(), k), (b.peer_id(), k)]).collect();
    for ((payer, k), state) in slots.into_iter().zip(states) {
        if *state == Pay::Absent {
            continue;
        }
        let amount = ag.increment(&payer, k);
        let sent = if *state == Pay::Short { amount - 1 } else { amount };
        let at = if *state == Pay::Unconfirmed { AUDIT_AT } else { SimTime::ZERO };
        let from = WalletAddress::for_peer(ag.pay_asset(&payer), &payer);
        let txid = reg.transfer(&from, ag.destination(&payer), sent, at).unwrap();
        if *state == Pay::Unclaimed {
            continue;
        }
        let (who, store) = if payer == a.peer_id() { (&a, &mut sa) } else { (&b, &mut sb) };
        let pay = PaymentTx { trade_ref: init.block_ref(), payer, amount, external_txid: txid, payment_index: k };
        view.insert(store.initiate_bilateral(who, ag.other(&payer), TxPayload::Payment(pay)).unwrap()).unwrap();
    }
    let ext = reg.at(AUDIT_AT);
    (audit_responsibilities(&a.peer_id(), &view, &ext), audit_responsibilities(&b.peer_id(), &view, &ext))
}

pub fn check() -> Outcome {
    let (a, b) = (Identity::derive(3, 1).peer_id(), Identity::derive(3, 2).peer_id());
    let mut cases = 0;
    for n in 1..=3u32 {
        let len = 2 * n as usize;
        for code in 0..STATES.len().pow(len as u32) {
            let states: Vec<Pay> = (0..len).map(|i| STATES[code / STATES.len().pow(i as u32) % STATES.len()]).collect();
            for established in [false, true] {
                let got = audit(n, &states, established);
                let want = walker(n, &states, established, a, b);
                if got != want {
                    return Outcome::new(
                        false,
                        format!("n={n} {states:?} established={established}: audit {got:?}, schedule {want:?}"),
                    );
                }
                cases += 1;
            }
        }
    }
    Outcome::new(true, format!("{cases} payment-state combinations for n=1..3 agree"))
}
