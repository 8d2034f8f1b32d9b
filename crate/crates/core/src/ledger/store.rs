use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use super::block::{AgreementTx, BlockPartition, BlockRef, LinkRole, PaymentTx, TxPayload};
use crate::crypto::{Hash, Identity, PeerId, Signature};

/// Two validly signed partitions by the same creator at the same position.
/// Either is enough to convict the creator of rewriting its chain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FraudProof {
    pub first: BlockPartition,
    pub second: BlockPartition,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("{0} payload not allowed for this operation")]
    WrongPayloadKind(&'static str),
    #[error("creator and counterparty are the same peer")]
    SelfTrade,
    #[error("partition {0} has an invalid signature")]
    BadSignature(String),
    #[error("countersignature does not verify")]
    BadCountersignature,
    #[error("partition is not addressed to this peer")]
    NotAddressedToUs,
    #[error("expected an initiator partition")]
    NotInitiator,
    #[error("payload rejected: {0}")]
    Rejected(String),
    #[error("no partition {creator}#{seq} in store")]
    UnknownPartition { creator: PeerId, seq: u64 },
    #[error("conflicting partition {creator}#{seq}")]
    Conflict { creator: PeerId, seq: u64 },
    #[error("duplicate participant {0}")]
    DuplicateParticipant(PeerId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inserted {
    New,
    /// Already stored; any new countersignatures were merged.
    Known,
}

/// A Payment partition claiming a payment, with where it is stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaymentClaim {
    pub block: BlockRef,
    pub payment: PaymentTx,
}

/// Everything the store has seen about one trade, keyed by the hash of the
/// initiator's Agreement partition.
#[derive(Clone, Debug, Default)]
pub struct TradeRecord {
    pub agreement: Option<AgreementTx>,
    pub initiator_block: Option<BlockRef>,
    pub countersigned: bool,
    pub responder_block: Option<BlockRef>,
    pub payments: BTreeMap<(PeerId, u32), Vec<PaymentClaim>>,
    /// An established TradeDone block.
    pub done: Option<BlockRef>,
}

impl TradeRecord {
    /// Both parties have committed to the agreement on their chains.
    pub fn established(&self) -> bool {
        self.countersigned || self.responder_block.is_some()
    }

    pub fn claims(&self, payer: &PeerId, index: u32) -> &[PaymentClaim] {
        self.payments.get(&(*payer, index)).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Partitions known to one peer (or to the simulator's global view): the
/// owner's own chain plus partitions received from others.
#[derive(Clone, Debug, Default)]
pub struct LedgerStore {
    chains: BTreeMap<PeerId, BTreeMap<u64, BlockPartition>>,
    by_hash: HashMap<Hash, (PeerId, u64)>,
    trades: HashMap<Hash, TradeRecord>,
    open_by_peer: BTreeMap<PeerId, BTreeSet<Hash>>,
    fraud: Vec<FraudProof>,
}

impl LedgerStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn peers(&self) -> impl Iterator<Item = &PeerId> {
        self.chains.keys()
    }

    /// Stored partitions of `peer` in sequence order (may have gaps for
    /// peers other than the owner).
    pub fn chain(&self, peer: &PeerId) -> Vec<&BlockPartition> {
        self.chains.get(peer).map(|c| c.values().collect()).unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.by_hash.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_hash.is_empty()
    }

    pub fn get(&self, creator: &PeerId, seq: u64) -> Option<&BlockPartition> {
        self.chains.get(creator)?.get(&seq)
    }

    pub fn get_by_hash(&self, hash: &Hash) -> Option<&BlockPartition> {
        let (c, s) = self.by_hash.get(hash)?;
        self.get(c, *s)
    }

    pub fn latest(&self, peer: &PeerId) -> Option<&BlockPartition> {
        self.chains.get(peer)?.values().next_back()
    }

    pub fn trade(&self, key: &Hash) -> Option<&TradeRecord> {
        self.trades.get(key)
    }

    /// Keys of trades involving `peer` without an established TradeDone, in
    /// hash order.
    pub fn open_trades(&self, peer: &PeerId) -> impl Iterator<Item = (&Hash, &TradeRecord)> {
        self.open_by_peer.get(peer).into_iter().flatten().filter_map(|h| self.trades.get(h).map(|t| (h, t)))
    }

    pub fn fraud_proofs(&self) -> &[FraudProof] {
        &self.fraud
    }

    fn tip(&self, peer: &PeerId) -> (u64, Hash) {
        match self.latest(peer) {
            Some(p) => (p.seq, p.hash()),
            None => (0, Hash::ZERO),
        }
    }

    /// Stores a partition received from anyone, merging countersignatures
    /// into an existing copy. A different partition at an occupied position
    /// is recorded as a fraud proof and rejected.
    pub fn insert(&mut self, p: BlockPartition) -> Result<Inserted, LedgerError> {
        if !p.signature_valid() {
            return Err(LedgerError::BadSignature(p.block_ref().to_string()));
        }
        self.insert_trusted(p)
    }

    /// [`insert`](Self::insert) without re-verifying the creator signature,
    /// for partitions whose signature the caller already checked or made.
    pub fn insert_trusted(&mut self, p: BlockPartition) -> Result<Inserted, LedgerError> {
        let hash = p.hash();
        let chain = self.chains.entry(p.creator).or_default();
        if let Some(existing) = chain.get_mut(&p.seq) {
            if existing.hash() != hash {
                let (creator, seq) = (p.creator, p.seq);
                self.fraud.push(FraudProof { first: existing.clone(), second: p });
                return Err(LedgerError::Conflict { creator, seq });
            }
            let before = existing.counterparty_signatures.len();
            for sig in p.counterparty_signatures {
                if existing.counterparties.contains(&sig.signer) && sig.verify(&hash) {
                    existing.add_countersignature(sig);
                }
            }
            if existing.counterparty_signatures.len() != before {
                let stored = existing.clone();
                self.index(&stored);
            }
            return Ok(Inserted::Known);
        }
        let mut p = p;
        p.counterparty_signatures.retain(|s| p.counterparties.contains(&s.signer) && s.verify(&hash));
        self.by_hash.insert(hash, (p.creator, p.seq));
        chain.insert(p.seq, p.clone());
        self.index(&p);
        Ok(Inserted::New)
    }

    fn record_mut(&mut self, key: Hash) -> &mut TradeRecord {
        self.trades.entry(key).or_default()
    }

    fn index(&mut self, p: &BlockPartition) {
        let r = p.block_ref();
        match (&p.payload, p.role) {
            (TxPayload::Agreement(a), LinkRole::Initiator) => {
                let countersigned = p.fully_countersigned();
                let rec = self.record_mut(r.hash);
                rec.agreement = Some(a.clone());
                rec.initiator_block = Some(r);
                rec.countersigned |= countersigned;
                let done = self.trades[&r.hash].done.is_some();
                if !done {
                    for peer in [a.initiator, a.counterparty] {
                        self.open_by_peer.entry(peer).or_default().insert(r.hash);
                    }
                }
            }
            (TxPayload::Agreement(a), LinkRole::Responder) => {
                let Some(key) = p.prev_hash_counterparty else { return };
                let rec = self.record_mut(key);
                rec.responder_block = Some(r);
                if rec.agreement.is_none() {
                    rec.agreement = Some(a.clone());
                    let done = self.trades[&key].done.is_some();
                    if !done {
                        for peer in [a.initiator, a.counterparty] {
                            self.open_by_peer.entry(peer).or_default().insert(key);
                        }
                    }
                }
            }
            (TxPayload::Payment(pay), _) => {
                let claim = PaymentClaim { block: r, payment: pay.clone() };
                let claims =
                    self.record_mut(pay.trade_ref.hash).payments.entry((pay.payer, pay.payment_index)).or_default();
                if !claims.iter().any(|c| c.block == claim.block) {
                    claims.push(claim);
                }
            }
            (TxPayload::TradeDone(d), role) => {
                let key = d.trade_ref.hash;
                let established = role == LinkRole::Responder || p.fully_countersigned();
                let rec = self.record_mut(key);
                if established && rec.done.is_none() {
                    rec.done = Some(r);
                    if let Some(a) = rec.agreement.clone() {
                        for peer in [a.initiator, a.counterparty] {
                            if let Some(set) = self.open_by_peer.get_mut(&peer) {
                                set.remove(&key);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }

    /// Appends an Offer or Request to the creator's own chain.
    pub fn append_unilateral(
        &mut self,
        identity: &Identity,
        payload: TxPayload,
    ) -> Result<BlockPartition, LedgerError> {
        if !payload.is_unilateral() {
            return Err(LedgerError::WrongPayloadKind(payload.kind()));
        }
        let me = identity.peer_id();
        payload.check(&me, &[]).map_err(LedgerError::Rejected)?;
        let (seq, prev) = self.tip(&me);
        let p = BlockPartition::new_signed(identity, seq + 1, prev, None, LinkRole::Unilateral, vec![], payload);
        self.insert_trusted(p.clone())?;
        Ok(p)
    }

    /// Appends the creator's half of a bilateral block immediately, before
    /// the counterparty has signed. Several may be outstanding at once.
    pub fn initiate_bilateral(
        &mut self,
        identity: &Identity,
        counterparty: PeerId,
        payload: TxPayload,
    ) -> Result<BlockPartition, LedgerError> {
        self.initiate(identity, vec![counterparty], payload)
    }

    fn initiate(
        &mut self,
        identity: &Identity,
        others: Vec<PeerId>,
        payload: TxPayload,
    ) -> Result<BlockPartition, LedgerError> {
        if payload.is_unilateral() {
            return Err(LedgerError::WrongPayloadKind(payload.kind()));
        }
        let me = identity.peer_id();
        let mut seen = BTreeSet::new();
        for o in &others {
            if *o == me {
                return Err(LedgerError::SelfTrade);
            }
            if !seen.insert(*o) {
                return Err(LedgerError::DuplicateParticipant(*o));
            }
        }
        payload.check(&me, &others).map_err(LedgerError::Rejected)?;
        let link = match others.as_slice() {
            [one] => self.tip(one).1,
            _ => Hash::ZERO,
        };
        let (seq, prev) = self.tip(&me);
        let p = BlockPartition::new_signed(identity, seq + 1, prev, Some(link), LinkRole::Initiator, others, payload);
        self.insert_trusted(p.clone())?;
        Ok(p)
    }

    /// Validates an incoming initiator partition, appends the responder's own
    /// half linking it, and returns that half plus a signature over the
    /// incoming partition. Nothing is stored if any check fails.
    pub fn countersign<F>(
        &mut self,
        identity: &Identity,
        incoming: &BlockPartition,
        accept: F,
    ) -> Result<(BlockPartition, Signature), LedgerError>
    where
        F: FnOnce(&TxPayload) -> Result<(), String>,
    {
        let me = identity.peer_id();
        if !incoming.signature_valid() {
            return Err(LedgerError::BadSignature(incoming.block_ref().to_string()));
        }
        if incoming.role != LinkRole::Initiator {
            return Err(LedgerError::NotInitiator);
        }
        if !incoming.counterparties.contains(&me) {
            return Err(LedgerError::NotAddressedToUs);
        }
        incoming.payload.check(&incoming.creator, &incoming.counterparties).map_err(LedgerError::Rejected)?;
        accept(&incoming.payload).map_err(LedgerError::Rejected)?;
        if let Some(existing) = self.get(&incoming.creator, incoming.seq) {
            if existing.hash() != incoming.hash() {
                let proof = FraudProof { first: existing.clone(), second: incoming.clone() };
                self.fraud.push(proof);
                return Err(LedgerError::Conflict { creator: incoming.creator, seq: incoming.seq });
            }
        }
        let h = incoming.hash();
        self.insert_trusted(incoming.clone())?;
        let (seq, prev) = self.tip(&me);
        let own = BlockPartition::new_signed(
            identity,
            seq + 1,
            prev,
            Some(h),
            LinkRole::Responder,
            vec![incoming.creator],
            incoming.payload.clone(),
        );
        self.insert_trusted(own.clone())?;
        let sig = identity.sign(&h);
        self.attach_unchecked(&incoming.creator, incoming.seq, sig)?;
        Ok((own, sig))
    }

    /// Attaches a counterparty signature to a stored partition.
    pub fn attach_countersignature(&mut self, creator: &PeerId, seq: u64, sig: Signature) -> Result<(), LedgerError> {
        let p = self
            .chains
            .get_mut(creator)
            .and_then(|c| c.get_mut(&seq))
            .ok_or(LedgerError::UnknownPartition { creator: *creator, seq })?;
        if !p.counterparties.contains(&sig.signer) || !sig.verify(&p.hash()) {
            return Err(LedgerError::BadCountersignature);
        }
        self.attach_unchecked(creator, seq, sig)
    }

    fn attach_unchecked(&mut self, creator: &PeerId, seq: u64, sig: Signature) -> Result<(), LedgerError> {
        let p = self
            .chains
            .get_mut(creator)
            .and_then(|c| c.get_mut(&seq))
            .ok_or(LedgerError::UnknownPartition { creator: *creator, seq })?;
        p.add_countersignature(sig);
        let stored = p.clone();
        self.index(&stored);
        Ok(())
    }

    /// Initiator side: stores the counterparty's half and its signature over
    /// our partition.
    pub fn complete_bilateral(
        &mut self,
        own: &BlockRef,
        response: &BlockPartition,
        sig: Signature,
    ) -> Result<(), LedgerError> {
        if response.prev_hash_counterparty != Some(own.hash) || response.role != LinkRole::Responder {
            return Err(LedgerError::Rejected("response does not link our partition".into()));
        }
        if sig.signer != response.creator {
            return Err(LedgerError::BadCountersignature);
        }
        self.attach_countersignature(&own.creator, own.seq, sig)?;
        self.insert(response.clone())?;
        Ok(())
    }

    /// Builds a block tree: the initiator's root lists every other party,
    /// each party appends a leaf linking the root, and the root collects all
    /// signatures. With one other party this is an ordinary bilateral block.
    pub fn build_multiparty_block(
        &mut self,
        initiator: &Identity,
        others: &[&Identity],
        payload: TxPayload,
    ) -> Result<BlockTree, LedgerError> {
        let ids: Vec<PeerId> = others.iter().map(|i| i.peer_id()).collect();
        let root = self.initiate(initiator, ids, payload)?;
        let mut leaves = Vec::new();
        for other in others {
            let (leaf, _) = self.countersign(other, &root, |_| Ok(()))?;
            leaves.push(leaf);
        }
        let root = self.get(&root.creator, root.seq).cloned().expect("root stored");
        Ok(BlockTree { root, leaves })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockTree {
    pub root: BlockPartition,
    pub leaves: Vec<BlockPartition>,
}
