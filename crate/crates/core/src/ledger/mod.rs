//! Per-peer hash chains recording orders and full trade specifications.
//!
//! Every peer appends to its own chain. A bilateral transaction is stored as
//! two partitions, one per chain: the initiator appends its half at once and
//! the counterparty appends a half linking the initiator's hash, signing the
//! initiator's half in return. Because a partition's hash excludes the
//! signatures, a peer may have several bilateral transactions in flight.

mod audit;
mod block;
pub mod dump;
mod store;
mod verify;

pub use audit::{audit_responsibilities, next_payer, open_obligations, payment_made};
pub use block::{increment_amount, AgreementTx, BlockPartition, BlockRef, LinkRole, PaymentTx, TradeDoneTx, TxPayload};
pub use store::{BlockTree, FraudProof, Inserted, LedgerError, LedgerStore, PaymentClaim, TradeRecord};
pub use verify::{verify_chain, verify_ledger, ValidationReport, Violation};

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::assets::{ChainId, WalletAddress};
    use crate::crypto::Identity;
    use crate::orderbook::{AssetPair, OrderId, OrderSpec};
    use crate::time::{SimDuration, SimTime};

    pub fn ident(i: u64) -> Identity {
        Identity::derive(0x1ed6, i)
    }

    fn order(who: &Identity, seq: u64, is_offer: bool) -> OrderSpec {
        OrderSpec::new_signed(
            who,
            seq,
            SimTime::ZERO,
            SimDuration::from_secs(3600),
            is_offer,
            AssetPair::new("BTC", 100, "ETH", 150),
        )
    }

    pub fn offer_payload(who: &Identity, seq: u64) -> TxPayload {
        TxPayload::Offer { order: order(who, seq, true) }
    }

    pub fn request_payload(who: &Identity, seq: u64) -> TxPayload {
        TxPayload::Request { order: order(who, seq, false) }
    }

    /// `a` sells 100 BTC to `b` for 150 ETH in `n` increments per side.
    pub fn agreement(a: &Identity, b: &Identity, n: u32) -> AgreementTx {
        let (btc, eth) = (ChainId::new("BTC"), ChainId::new("ETH"));
        AgreementTx {
            initiator: a.peer_id(),
            counterparty: b.peer_id(),
            initiator_order: OrderId { creator: a.peer_id(), seq: 1 },
            counterparty_order: OrderId { creator: b.peer_id(), seq: 1 },
            pair: AssetPair::new("BTC", 100, "ETH", 150),
            initiator_is_offer: true,
            payments_per_side: n,
            publication_deadline: SimTime::from_secs(10),
            initiator_wallet: WalletAddress::for_peer(&eth, &a.peer_id()),
            counterparty_wallet: WalletAddress::for_peer(&btc, &b.peer_id()),
            created_at: SimTime::ZERO,
        }
    }
}
