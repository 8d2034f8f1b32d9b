use super::events::TimerId;
use super::messages::Proposal;
use super::mpq::MatchQueueEntry;
use crate::assets::ExternalTxId;
use crate::crypto::{Hash, PeerId};
use crate::ledger::{AgreementTx, BlockPartition, BlockRef};
use crate::orderbook::OrderId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Counterparty,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Signed terms exist; waiting for the initiator's Agreement block.
    Agreed,
    Executing,
    /// All payments made; the TradeDone record is being signed.
    Finalizing,
    Done,
    Aborted(String),
}

impl Phase {
    pub fn is_open(&self) -> bool {
        matches!(self, Phase::Agreed | Phase::Executing | Phase::Finalizing)
    }
}

/// Initiator-side negotiation for one own order.
#[derive(Clone, Debug)]
pub struct Negotiation {
    pub order: OrderId,
    pub entry: MatchQueueEntry,
    pub proposal: Proposal,
    /// Base units reserved on the own order.
    pub reserved: u64,
    /// Terms sent in the PartialAgreement, once sent.
    pub partial: Option<AgreementTx>,
}

impl Negotiation {
    pub fn counterparty(&self) -> PeerId {
        self.proposal.counterparty_order.creator
    }
}

/// Counterparty-side reservation for an accepted proposal that has not yet
/// turned into agreement terms.
#[derive(Clone, Debug)]
pub struct PendingProposal {
    pub proposal: Proposal,
    pub reserved: u64,
    pub timer: TimerId,
}

/// One trade from the point both sides signed the terms.
#[derive(Clone, Debug)]
pub struct TradeState {
    /// Digest of the agreement terms.
    pub id: Hash,
    pub role: Role,
    pub me: PeerId,
    pub agreement: AgreementTx,
    pub phase: Phase,
    /// The initiator's Agreement partition, once published.
    pub agreement_block: Option<BlockRef>,
    /// Number of schedule entries done: own payments sent plus the other
    /// side's payments verified.
    pub step: usize,
    /// Payer partitions of the payments in schedule order.
    pub payment_refs: Vec<BlockRef>,
    pub txids: Vec<ExternalTxId>,
    /// An incoming Payment partition waiting for its transfer to confirm,
    /// with the sender and request id to answer.
    pub incoming: Option<(BlockPartition, u64)>,
    pub transfer_attempts: u32,
    /// Deadline, wait or poll timer currently armed.
    pub timer: Option<TimerId>,
    /// The own order's reservation for this trade has been settled or
    /// released.
    pub reservation_closed: bool,
}

impl TradeState {
    pub fn new(role: Role, me: PeerId, agreement: AgreementTx) -> Self {
        TradeState {
            id: agreement.digest(),
            role,
            me,
            agreement,
            phase: Phase::Agreed,
            agreement_block: None,
            step: 0,
            payment_refs: Vec::new(),
            txids: Vec::new(),
            incoming: None,
            transfer_attempts: 0,
            timer: None,
            reservation_closed: false,
        }
    }

    pub fn other(&self) -> PeerId {
        self.agreement.other(&self.me)
    }

    pub fn own_order(&self) -> OrderId {
        match self.role {
            Role::Initiator => self.agreement.initiator_order,
            Role::Counterparty => self.agreement.counterparty_order,
        }
    }

    pub fn qty(&self) -> u64 {
        self.agreement.pair.base_qty
    }

    fn schedule_len(&self) -> usize {
        2 * self.agreement.payments_per_side as usize
    }

    /// Payer and index of the next payment, or `None` when all are done.
    pub fn next_payment(&self) -> Option<(PeerId, u32)> {
        if self.step >= self.schedule_len() {
            return None;
        }
        let index = (self.step / 2) as u32 + 1;
        let payer = if self.step.is_multiple_of(2) { self.agreement.initiator } else { self.agreement.counterparty };
        Some((payer, index))
    }

    pub fn my_turn(&self) -> bool {
        self.phase == Phase::Executing && matches!(self.next_payment(), Some((p, _)) if p == self.me)
    }

    pub fn payments_complete(&self) -> bool {
        self.step >= self.schedule_len()
    }
}
