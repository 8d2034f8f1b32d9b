use std::fmt;

use crate::assets::{ChainId, ExternalTxId, WalletAddress};
use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{Hash, Identity, PeerId, Signature};
use crate::orderbook::{AssetPair, OrderId, OrderSpec};
use crate::time::SimTime;

/// Points at the partition stored at `(creator, seq)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct BlockRef {
    pub creator: PeerId,
    pub seq: u64,
    pub hash: Hash,
}

impl fmt::Display for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.creator, self.seq)
    }
}

impl Encode for BlockRef {
    fn encode(&self, w: &mut Writer) {
        self.creator.encode(w);
        w.u64(self.seq);
        self.hash.encode(w);
    }
}

impl Decode for BlockRef {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(BlockRef { creator: PeerId::decode(r)?, seq: r.u64()?, hash: Hash::decode(r)? })
    }
}

/// Terms of one bilateral trade. The initiator pays first.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AgreementTx {
    pub initiator: PeerId,
    pub counterparty: PeerId,
    pub initiator_order: OrderId,
    pub counterparty_order: OrderId,
    /// Normalized pair carrying the traded quantities of this trade.
    pub pair: AssetPair,
    /// The initiator sells the base asset.
    pub initiator_is_offer: bool,
    pub payments_per_side: u32,
    pub publication_deadline: SimTime,
    /// Where the initiator receives the asset it buys.
    pub initiator_wallet: WalletAddress,
    /// Where the counterparty receives the asset it buys.
    pub counterparty_wallet: WalletAddress,
    pub created_at: SimTime,
}

impl AgreementTx {
    pub fn other(&self, peer: &PeerId) -> PeerId {
        if *peer == self.initiator {
            self.counterparty
        } else {
            self.initiator
        }
    }

    pub fn involves(&self, peer: &PeerId) -> bool {
        self.initiator == *peer || self.counterparty == *peer
    }

    fn sells_base(&self, payer: &PeerId) -> bool {
        (*payer == self.initiator) == self.initiator_is_offer
    }

    /// Asset (chain) on which `payer` pays.
    pub fn pay_asset(&self, payer: &PeerId) -> &ChainId {
        if self.sells_base(payer) {
            &self.pair.base
        } else {
            &self.pair.quote
        }
    }

    /// Total `payer` owes over all increments.
    pub fn side_total(&self, payer: &PeerId) -> u64 {
        if self.sells_base(payer) {
            self.pair.base_qty
        } else {
            self.pair.quote_qty
        }
    }

    /// Wallet that must receive `payer`'s payments.
    pub fn destination(&self, payer: &PeerId) -> &WalletAddress {
        if *payer == self.initiator {
            &self.counterparty_wallet
        } else {
            &self.initiator_wallet
        }
    }

    /// Amount of `payer`'s payment number `index` (1-based).
    pub fn increment(&self, payer: &PeerId, index: u32) -> u64 {
        increment_amount(self.side_total(payer), self.payments_per_side, index)
    }

    /// Payment order: initiator 1, counterparty 1, initiator 2, ...
    pub fn schedule(&self) -> Vec<(PeerId, u32)> {
        (1..=self.payments_per_side).flat_map(|k| [(self.initiator, k), (self.counterparty, k)]).collect()
    }

    pub fn digest(&self) -> Hash {
        let mut w = Writer::default();
        w.str("agreement");
        self.encode(&mut w);
        Hash::digest(&w.into_bytes())
    }
}

/// Splits `total` into `n` increments: floor division, remainder on the last.
pub fn increment_amount(total: u64, n: u32, index: u32) -> u64 {
    let n = n.max(1) as u64;
    let base = total / n;
    if index as u64 == n {
        base + total % n
    } else {
        base
    }
}

impl Encode for AgreementTx {
    fn encode(&self, w: &mut Writer) {
        self.initiator.encode(w);
        self.counterparty.encode(w);
        self.initiator_order.encode(w);
        self.counterparty_order.encode(w);
        self.pair.encode(w);
        w.bool(self.initiator_is_offer);
        w.u32(self.payments_per_side);
        w.u64(self.publication_deadline.0);
        self.initiator_wallet.encode(w);
        self.counterparty_wallet.encode(w);
        w.u64(self.created_at.0);
    }
}

impl Decode for AgreementTx {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(AgreementTx {
            initiator: PeerId::decode(r)?,
            counterparty: PeerId::decode(r)?,
            initiator_order: OrderId::decode(r)?,
            counterparty_order: OrderId::decode(r)?,
            pair: AssetPair::decode(r)?,
            initiator_is_offer: r.bool()?,
            payments_per_side: r.u32()?,
            publication_deadline: SimTime(r.u64()?),
            initiator_wallet: WalletAddress::decode(r)?,
            counterparty_wallet: WalletAddress::decode(r)?,
            created_at: SimTime(r.u64()?),
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct PaymentTx {
    /// The initiator's Agreement partition.
    pub trade_ref: BlockRef,
    pub payer: PeerId,
    pub amount: u64,
    pub external_txid: ExternalTxId,
    pub payment_index: u32,
}

impl Encode for PaymentTx {
    fn encode(&self, w: &mut Writer) {
        self.trade_ref.encode(w);
        self.payer.encode(w);
        w.u64(self.amount);
        self.external_txid.encode(w);
        w.u32(self.payment_index);
    }
}

impl Decode for PaymentTx {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(PaymentTx {
            trade_ref: BlockRef::decode(r)?,
            payer: PeerId::decode(r)?,
            amount: r.u64()?,
            external_txid: ExternalTxId::decode(r)?,
            payment_index: r.u32()?,
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TradeDoneTx {
    pub trade_ref: BlockRef,
    /// Payer-side Payment partitions in schedule order.
    pub payment_refs: Vec<BlockRef>,
}

impl Encode for TradeDoneTx {
    fn encode(&self, w: &mut Writer) {
        self.trade_ref.encode(w);
        w.seq(&self.payment_refs);
    }
}

impl Decode for TradeDoneTx {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(TradeDoneTx { trade_ref: BlockRef::decode(r)?, payment_refs: r.seq()? })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum TxPayload {
    Offer {
        order: OrderSpec,
    },
    Request {
        order: OrderSpec,
    },
    Agreement(AgreementTx),
    Payment(PaymentTx),
    TradeDone(TradeDoneTx),
    /// Opaque terms agreed by three or more parties in one block tree. The
    /// trading protocol itself is bilateral and never creates these.
    MultiParty {
        terms: Vec<u8>,
    },
}

impl TxPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            TxPayload::Offer { .. } => "offer",
            TxPayload::Request { .. } => "request",
            TxPayload::Agreement(_) => "agreement",
            TxPayload::Payment(_) => "payment",
            TxPayload::TradeDone(_) => "trade-done",
            TxPayload::MultiParty { .. } => "multi-party",
        }
    }

    pub fn is_unilateral(&self) -> bool {
        matches!(self, TxPayload::Offer { .. } | TxPayload::Request { .. })
    }

    /// Self-contained invariants that do not need other blocks.
    pub fn check(&self, creator: &PeerId, counterparties: &[PeerId]) -> Result<(), String> {
        match self {
            TxPayload::Offer { order } | TxPayload::Request { order } => {
                if order.creator != *creator {
                    return Err("order not created by block creator".into());
                }
                if matches!(self, TxPayload::Offer { .. }) != order.is_offer {
                    return Err("order side does not match payload kind".into());
                }
                if !order.signature.verify(&order.digest()) || order.signature.signer != order.creator {
                    return Err("order signature invalid".into());
                }
            }
            TxPayload::Agreement(a) => {
                if a.payments_per_side == 0 {
                    return Err("agreement with zero payments per side".into());
                }
                if a.initiator == a.counterparty {
                    return Err("agreement with itself".into());
                }
                if !a.involves(creator) || counterparties != [a.other(creator)] {
                    return Err("agreement parties do not match block parties".into());
                }
                if a.pair.base_qty == 0 || a.pair.quote_qty == 0 || a.pair.base == a.pair.quote {
                    return Err("agreement pair invalid".into());
                }
                for payer in [a.initiator, a.counterparty] {
                    if a.destination(&payer).chain != *a.pay_asset(&payer) {
                        return Err("receiving wallet on wrong chain".into());
                    }
                }
            }
            TxPayload::Payment(p) => {
                if p.payment_index == 0 {
                    return Err("payment index must start at 1".into());
                }
                if p.amount == 0 {
                    return Err("zero payment".into());
                }
                if counterparties.len() != 1 || counterparties[0] == *creator {
                    return Err("payment parties invalid".into());
                }
                if p.payer != *creator && p.payer != counterparties[0] {
                    return Err("payer is not a block party".into());
                }
            }
            TxPayload::TradeDone(d) => {
                if d.payment_refs.is_empty() || d.payment_refs.len() % 2 != 0 {
                    return Err(format!("trade done lists {} payments", d.payment_refs.len()));
                }
            }
            TxPayload::MultiParty { .. } => {
                if counterparties.is_empty() {
                    return Err("multi-party block without other parties".into());
                }
            }
        }
        Ok(())
    }
}

impl Encode for TxPayload {
    fn encode(&self, w: &mut Writer) {
        match self {
            TxPayload::Offer { order } => {
                w.u8(0);
                order.encode(w);
            }
            TxPayload::Request { order } => {
                w.u8(1);
                order.encode(w);
            }
            TxPayload::Agreement(a) => {
                w.u8(2);
                a.encode(w);
            }
            TxPayload::Payment(p) => {
                w.u8(3);
                p.encode(w);
            }
            TxPayload::TradeDone(d) => {
                w.u8(4);
                d.encode(w);
            }
            TxPayload::MultiParty { terms } => {
                w.u8(5);
                w.bytes(terms);
            }
        }
    }
}

impl Decode for TxPayload {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.tag("payload", 5)? {
            0 => TxPayload::Offer { order: OrderSpec::decode(r)? },
            1 => TxPayload::Request { order: OrderSpec::decode(r)? },
            2 => TxPayload::Agreement(AgreementTx::decode(r)?),
            3 => TxPayload::Payment(PaymentTx::decode(r)?),
            4 => TxPayload::TradeDone(TradeDoneTx::decode(r)?),
            _ => TxPayload::MultiParty { terms: r.bytes()?.to_vec() },
        })
    }
}

/// How a partition relates to the other half (or halves) of its block.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub enum LinkRole {
    Unilateral,
    /// Created first; awaits counterparty signatures.
    Initiator,
    /// Created on receipt of an initiator partition whose hash it links.
    Responder,
}

impl Encode for LinkRole {
    fn encode(&self, w: &mut Writer) {
        w.u8(*self as u8);
    }
}

impl Decode for LinkRole {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(match r.tag("link role", 2)? {
            0 => LinkRole::Unilateral,
            1 => LinkRole::Initiator,
            _ => LinkRole::Responder,
        })
    }
}

/// One entry of a peer's individual chain.
///
/// The hash covers every field except the signatures, so the creator can
/// append it before any counterparty has signed.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BlockPartition {
    pub creator: PeerId,
    pub seq: u64,
    pub prev_hash_self: Hash,
    pub prev_hash_counterparty: Option<Hash>,
    pub role: LinkRole,
    pub counterparties: Vec<PeerId>,
    pub payload: TxPayload,
    pub signature: Signature,
    pub counterparty_signatures: Vec<Signature>,
}

impl BlockPartition {
    /// Builds and signs a partition.
    #[allow(clippy::too_many_arguments)]
    pub fn new_signed(
        identity: &Identity,
        seq: u64,
        prev_hash_self: Hash,
        prev_hash_counterparty: Option<Hash>,
        role: LinkRole,
        counterparties: Vec<PeerId>,
        payload: TxPayload,
    ) -> BlockPartition {
        let mut p = BlockPartition {
            creator: identity.peer_id(),
            seq,
            prev_hash_self,
            prev_hash_counterparty,
            role,
            counterparties,
            payload,
            signature: Signature { signer: identity.peer_id(), bytes: [0; 64] },
            counterparty_signatures: Vec::new(),
        };
        p.signature = identity.sign(&p.hash());
        p
    }

    fn encode_body(&self, w: &mut Writer) {
        self.creator.encode(w);
        w.u64(self.seq);
        self.prev_hash_self.encode(w);
        w.opt(&self.prev_hash_counterparty);
        self.role.encode(w);
        w.seq(&self.counterparties);
        self.payload.encode(w);
    }

    pub fn hash(&self) -> Hash {
        let mut w = Writer::default();
        w.str("xchange-partition");
        self.encode_body(&mut w);
        Hash::digest(&w.into_bytes())
    }

    pub fn block_ref(&self) -> BlockRef {
        BlockRef { creator: self.creator, seq: self.seq, hash: self.hash() }
    }

    pub fn signature_valid(&self) -> bool {
        self.signature.signer == self.creator && self.signature.verify(&self.hash())
    }

    /// Counterparty signatures that verify and come from listed counterparties.
    pub fn valid_countersigners(&self) -> Vec<PeerId> {
        let h = self.hash();
        let mut out: Vec<PeerId> = self
            .counterparty_signatures
            .iter()
            .filter(|s| self.counterparties.contains(&s.signer) && s.verify(&h))
            .map(|s| s.signer)
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Every listed counterparty has signed.
    pub fn fully_countersigned(&self) -> bool {
        !self.counterparties.is_empty() && self.valid_countersigners().len() == self.counterparties.len()
    }

    pub fn add_countersignature(&mut self, sig: Signature) {
        if !self.counterparty_signatures.iter().any(|s| s.signer == sig.signer) {
            self.counterparty_signatures.push(sig);
            self.counterparty_signatures.sort_by_key(|s| s.signer);
        }
    }
}

impl Encode for BlockPartition {
    fn encode(&self, w: &mut Writer) {
        self.encode_body(w);
        self.signature.encode(w);
        w.seq(&self.counterparty_signatures);
    }
}

impl Decode for BlockPartition {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(BlockPartition {
            creator: PeerId::decode(r)?,
            seq: r.u64()?,
            prev_hash_self: Hash::decode(r)?,
            prev_hash_counterparty: r.opt()?,
            role: LinkRole::decode(r)?,
            counterparties: r.seq()?,
            payload: TxPayload::decode(r)?,
            signature: Signature::decode(r)?,
            counterparty_signatures: r.seq()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn increments_sum_to_total() {
        for total in [0u64, 1, 7, 100, 100_000_001] {
            for n in 1..=5u32 {
                let sum: u64 = (1..=n).map(|k| increment_amount(total, n, k)).sum();
                assert_eq!(sum, total);
            }
        }
        assert_eq!(increment_amount(7, 2, 1), 3);
        assert_eq!(increment_amount(7, 2, 2), 4);
    }

    #[test]
    fn hash_excludes_signatures() {
        let a = Identity::derive(1, 1);
        let b = Identity::derive(1, 2);
        let mut p = BlockPartition::new_signed(
            &a,
            1,
            Hash::ZERO,
            Some(Hash::ZERO),
            LinkRole::Initiator,
            vec![b.peer_id()],
            TxPayload::MultiParty { terms: b"x".to_vec() },
        );
        let h = p.hash();
        assert!(p.signature_valid());
        assert!(!p.fully_countersigned());
        p.add_countersignature(b.sign(&h));
        assert_eq!(p.hash(), h);
        assert!(p.fully_countersigned());
        assert_eq!(BlockPartition::from_bytes(&p.to_bytes()).unwrap(), p);
    }
}
