use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{Hash, Identity, PeerId, Signature};
use crate::ledger::{AgreementTx, BlockPartition, BlockRef, TradeDoneTx};
use crate::orderbook::{AssetPair, OrderId, OrderSpec};

/// Why a match or proposal was turned down.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Expired,
    Cancelled,
    AssetsReserved,
    NegotiationFailed,
    ResponsibilityHeld,
    /// The order has no quantity left to trade.
    Fulfilled,
}

impl RejectReason {
    const ALL: [RejectReason; 6] = [
        RejectReason::Expired,
        RejectReason::Cancelled,
        RejectReason::AssetsReserved,
        RejectReason::NegotiationFailed,
        RejectReason::ResponsibilityHeld,
        RejectReason::Fulfilled,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::Expired => "expired",
            RejectReason::Cancelled => "cancelled",
            RejectReason::AssetsReserved => "assets-reserved",
            RejectReason::NegotiationFailed => "negotiation-failed",
            RejectReason::ResponsibilityHeld => "responsibility-held",
            RejectReason::Fulfilled => "fulfilled",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Encode for RejectReason {
    fn encode(&self, w: &mut Writer) {
        w.u8(*self as u8);
    }
}

impl Decode for RejectReason {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let t = r.tag("reject reason", 5)?;
        Ok(RejectReason::ALL[t as usize])
    }
}

/// Terms under negotiation: `pair` carries the traded quantities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Proposal {
    pub initiator_order: OrderId,
    pub counterparty_order: OrderId,
    pub pair: AssetPair,
    pub initiator_is_offer: bool,
}

impl Encode for Proposal {
    fn encode(&self, w: &mut Writer) {
        self.initiator_order.encode(w);
        self.counterparty_order.encode(w);
        self.pair.encode(w);
        w.bool(self.initiator_is_offer);
    }
}

impl Decode for Proposal {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Proposal {
            initiator_order: OrderId::decode(r)?,
            counterparty_order: OrderId::decode(r)?,
            pair: AssetPair::decode(r)?,
            initiator_is_offer: r.bool()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message {
    /// New order, with the creator's unilateral block recording it.
    Order {
        order: OrderSpec,
        block: Option<BlockPartition>,
    },
    CancelOrder {
        order: OrderId,
    },
    /// Matchmaker to the creator of `order`: `matched` is a prospective
    /// counterparty order.
    Match {
        order: OrderId,
        matched: OrderSpec,
    },
    /// Trader to matchmaker: `order` will not trade against `matched`.
    RejectMatch {
        order: OrderId,
        matched: OrderId,
        reason: RejectReason,
    },
    TradeProposal(Proposal),
    Negotiate(Proposal),
    TradeAccept(Proposal),
    TradeReject {
        proposal: Proposal,
        reason: RejectReason,
    },
    /// Agreement terms from the initiator, without the counterparty wallet.
    PartialAgreement(AgreementTx),
    /// Completed terms signed by the counterparty.
    Agreement {
        agreement: AgreementTx,
        signature: Signature,
    },
    /// The payer's Payment partition.
    Payment {
        block: BlockPartition,
    },
    PartialTradeDone {
        done: TradeDoneTx,
    },
    /// Signed completion notice; also sent to matchmakers.
    TradeDone {
        done: TradeDoneTx,
        agreement: AgreementTx,
        signature: Signature,
    },
    /// Initiator partition for the recipient to countersign.
    Block {
        block: BlockPartition,
    },
    /// The recipient's own half plus its signature over `of`.
    BlockAck {
        of: BlockRef,
        response: BlockPartition,
        signature: Signature,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Order { .. } => "Order",
            Message::CancelOrder { .. } => "CancelOrder",
            Message::Match { .. } => "Match",
            Message::RejectMatch { .. } => "RejectMatch",
            Message::TradeProposal(_) => "TradeProposal",
            Message::Negotiate(_) => "Negotiate",
            Message::TradeAccept(_) => "TradeAccept",
            Message::TradeReject { .. } => "TradeReject",
            Message::PartialAgreement(_) => "PartialAgreement",
            Message::Agreement { .. } => "Agreement",
            Message::Payment { .. } => "Payment",
            Message::PartialTradeDone { .. } => "PartialTradeDone",
            Message::TradeDone { .. } => "TradeDone",
            Message::Block { .. } => "Block",
            Message::BlockAck { .. } => "BlockAck",
        }
    }

    /// Ledger replication messages that are not part of the trading
    /// vocabulary proper.
    pub fn is_ledger_plumbing(&self) -> bool {
        matches!(self, Message::Block { .. } | Message::BlockAck { .. })
    }
}

impl Encode for Message {
    fn encode(&self, w: &mut Writer) {
        match self {
            Message::Order { order, block } => {
                w.u8(0);
                order.encode(w);
                w.opt(block);
            }
            Message::CancelOrder { order } => {
                w.u8(1);
                order.encode(w);
            }
            Message::Match { order, matched } => {
                w.u8(2);
                order.encode(w);
                matched.encode(w);
            }
            Message::RejectMatch { order, matched, reason } => {
                w.u8(3);
                order.encode(w);
                matched.encode(w);
                reason.encode(w);
            }
            Message::TradeProposal(p) => {
                w.u8(4);
                p.encode(w);
            }
            Message::Negotiate(p) => {
                w.u8(5);
                p.encode(w);
            }
            Message::TradeAccept(p) => {
                w.u8(6);
                p.encode(w);
            }
            Message::TradeReject { proposal, reason } => {
                w.u8(7);
                proposal.encode(w);
                reason.encode(w);
            }
            Message::PartialAgreement(a) => {
                w.u8(8);
                a.encode(w);
            }
            Message::Agreement { agreement, signature } => {
                w.u8(9);
                agreement.encode(w);
                signature.encode(w);
            }
            Message::Payment { block } => {
                w.u8(10);
                block.encode(w);
            }
            Message::PartialTradeDone { done } => {
                w.u8(11);
                done.encode(w);
            }
            Message::TradeDone { done, agreement, signature } => {
                w.u8(12);
                done.encode(w);
                agreement.encode(w);
                signature.encode(w);
            }
            Message::Block { block } => {
                w.u8(13);
                block.encode(w);
            }
            Message::BlockAck { of, response, signature } => {
                w.u8(14);
                of.encode(w);
                response.encode(w);
                signature.encode(w);
            }
        }
    }
}

impl Decode for Message {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.tag("message", 14)? {
            0 => Message::Order { order: OrderSpec::decode(r)?, block: r.opt()? },
            1 => Message::CancelOrder { order: OrderId::decode(r)? },
            2 => Message::Match { order: OrderId::decode(r)?, matched: OrderSpec::decode(r)? },
            3 => Message::RejectMatch {
                order: OrderId::decode(r)?,
                matched: OrderId::decode(r)?,
                reason: RejectReason::decode(r)?,
            },
            4 => Message::TradeProposal(Proposal::decode(r)?),
            5 => Message::Negotiate(Proposal::decode(r)?),
            6 => Message::TradeAccept(Proposal::decode(r)?),
            7 => Message::TradeReject { proposal: Proposal::decode(r)?, reason: RejectReason::decode(r)? },
            8 => Message::PartialAgreement(AgreementTx::decode(r)?),
            9 => Message::Agreement { agreement: AgreementTx::decode(r)?, signature: Signature::decode(r)? },
            10 => Message::Payment { block: BlockPartition::decode(r)? },
            11 => Message::PartialTradeDone { done: TradeDoneTx::decode(r)? },
            12 => Message::TradeDone {
                done: TradeDoneTx::decode(r)?,
                agreement: AgreementTx::decode(r)?,
                signature: Signature::decode(r)?,
            },
            13 => Message::Block { block: BlockPartition::decode(r)? },
            _ => Message::BlockAck {
                of: BlockRef::decode(r)?,
                response: BlockPartition::decode(r)?,
                signature: Signature::decode(r)?,
            },
        })
    }
}

/// Digest a counterparty signs to confirm a trade-done record.
pub fn trade_done_digest(done: &TradeDoneTx) -> Hash {
    let mut w = Writer::default();
    w.str("trade-done");
    done.encode(&mut w);
    Hash::digest(&w.into_bytes())
}

/// A signed message in transit. `request_id` is unique per sender;
/// responses echo the request they answer in `reply_to`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Envelope {
    pub sender: PeerId,
    pub recipient: PeerId,
    pub request_id: u64,
    pub reply_to: Option<u64>,
    pub body: Message,
    pub signature: Signature,
}

impl Envelope {
    fn digest_fields(
        sender: &PeerId,
        recipient: &PeerId,
        request_id: u64,
        reply_to: Option<u64>,
        body: &Message,
    ) -> Hash {
        let mut w = Writer::default();
        w.str("envelope");
        sender.encode(&mut w);
        recipient.encode(&mut w);
        w.u64(request_id);
        w.opt(&reply_to);
        body.encode(&mut w);
        Hash::digest(&w.into_bytes())
    }

    pub fn new_signed(
        identity: &Identity,
        recipient: PeerId,
        request_id: u64,
        reply_to: Option<u64>,
        body: Message,
    ) -> Self {
        let sender = identity.peer_id();
        let digest = Self::digest_fields(&sender, &recipient, request_id, reply_to, &body);
        Envelope { sender, recipient, request_id, reply_to, body, signature: identity.sign(&digest) }
    }

    pub fn verify(&self) -> bool {
        self.signature.signer == self.sender
            && self.signature.verify(&Self::digest_fields(
                &self.sender,
                &self.recipient,
                self.request_id,
                self.reply_to,
                &self.body,
            ))
    }
}

impl Encode for Envelope {
    fn encode(&self, w: &mut Writer) {
        self.sender.encode(w);
        self.recipient.encode(w);
        w.u64(self.request_id);
        w.opt(&self.reply_to);
        self.body.encode(w);
        self.signature.encode(w);
    }
}

impl Decode for Envelope {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Envelope {
            sender: PeerId::decode(r)?,
            recipient: PeerId::decode(r)?,
            request_id: r.u64()?,
            reply_to: r.opt()?,
            body: Message::decode(r)?,
            signature: Signature::decode(r)?,
        })
    }
}
