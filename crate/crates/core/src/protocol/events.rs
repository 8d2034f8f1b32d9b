use serde::{Deserialize, Serialize};

use super::messages::{Envelope, RejectReason};
use crate::assets::{AssetError, ChainId, ChainRegistry, ExternalTxId, WalletAddress};
use crate::crypto::{Hash, PeerId};
use crate::ledger::{BlockPartition, LedgerStore};
use crate::orderbook::{OrderId, PairKey};
use crate::time::{SimDuration, SimTime};

/// Handle for a scheduled timer, unique per driver.
pub type TimerId = u64;

/// Scheduled actions a peer asks its driver for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Timer {
    /// The match window of an order closed.
    MatchWindow {
        order: OrderId,
    },
    /// A requeued nomination became eligible again.
    MatchRetry {
        order: OrderId,
    },
    RequestTimeout {
        request: u64,
    },
    /// A counterparty's reservation for a proposal nobody followed up on.
    ProposalExpiry {
        initiator_order: OrderId,
    },
    PublicationDeadline {
        trade: Hash,
    },
    PaymentPoll {
        trade: Hash,
    },
    PaymentWait {
        trade: Hash,
    },
    TransferRetry {
        trade: Hash,
    },
}

/// Everything a peer may ask of the environment it runs in. The simulator
/// implements this; tests can implement it with plain vectors.
pub trait Context {
    fn now(&self) -> SimTime;
    fn send(&mut self, envelope: Envelope);
    fn set_timer(&mut self, after: SimDuration, timer: Timer) -> TimerId;
    fn cancel_timer(&mut self, id: TimerId);
    fn chains(&self) -> &ChainRegistry;
    fn transfer(&mut self, from: &WalletAddress, to: &WalletAddress, amount: u64) -> Result<ExternalTxId, AssetError>;
    /// Shared view of all published partitions, when the run provides one.
    fn ledger_oracle(&self) -> Option<&LedgerStore>;
    /// Announces a partition the peer appended or completed.
    fn publish(&mut self, partition: &BlockPartition);
    fn observe(&mut self, observation: Observation);
}

/// Protocol-level facts a peer reports, for traces and metrics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum Observation {
    OrderCreated {
        order: OrderId,
        pair: PairKey,
        is_offer: bool,
        base_qty: u64,
        quote_qty: u64,
    },
    OrderFulfilled {
        order: OrderId,
    },
    OrderClosed {
        order: OrderId,
        reason: RejectReason,
    },
    TradeProposed {
        initiator_order: OrderId,
        counterparty_order: OrderId,
        qty: u64,
    },
    TradeEstablished {
        trade: Hash,
        initiator: PeerId,
        counterparty: PeerId,
    },
    PaymentSent {
        trade: Hash,
        payer: PeerId,
        receiver: PeerId,
        index: u32,
        amount: u64,
        asset: ChainId,
        txid: Hash,
    },
    PaymentVerified {
        trade: Hash,
        payer: PeerId,
        index: u32,
    },
    TradeCompleted {
        trade: Hash,
        initiator: PeerId,
        counterparty: PeerId,
        initiator_order: OrderId,
        counterparty_order: OrderId,
        qty: u64,
    },
    TradeAborted {
        trade: Hash,
        peer: PeerId,
        reason: String,
    },
    RequestTimedOut {
        peer: PeerId,
        kind: String,
        to: PeerId,
    },
}
