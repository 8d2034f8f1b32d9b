//! Wallets and mock external blockchains.
//!
//! A [`MockChain`] stands in for a settlement platform such as Bitcoin or
//! Ethereum. Transfers debit the sender when submitted and credit the receiver
//! once the chain's fixed confirmation delay has elapsed, so at any instant
//! `sum(balances) + pending = sum(faucet credits)`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{Hash, PeerId};
use crate::time::{SimDuration, SimTime};

/// Identifier of an external chain. Each chain hosts exactly one asset, so
/// the chain id doubles as the asset id used in asset pairs.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainId(pub String);

impl ChainId {
    pub fn new(s: impl Into<String>) -> Self {
        ChainId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Encode for ChainId {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.0);
    }
}

impl Decode for ChainId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(ChainId(r.string()?))
    }
}

pub const ADDRESS_LEN: usize = 20;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WalletAddress {
    pub chain: ChainId,
    pub address: [u8; ADDRESS_LEN],
}

impl WalletAddress {
    /// The wallet a peer uses on `chain`.
    pub fn for_peer(chain: &ChainId, peer: &PeerId) -> Self {
        let h = Hash::digest_parts(&[b"wallet", chain.0.as_bytes(), &peer.0]);
        let mut address = [0u8; ADDRESS_LEN];
        address.copy_from_slice(&h.0[..ADDRESS_LEN]);
        WalletAddress { chain: chain.clone(), address }
    }
}

impl fmt::Debug for WalletAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.chain, hex::encode(&self.address[..4]))
    }
}

impl Encode for WalletAddress {
    fn encode(&self, w: &mut Writer) {
        self.chain.encode(w);
        w.raw(&self.address);
    }
}

impl Decode for WalletAddress {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(WalletAddress { chain: ChainId::decode(r)?, address: r.array()? })
    }
}

/// Globally unique reference to a transaction on some external chain.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct ExternalTxId {
    pub chain: ChainId,
    pub txid: Hash,
}

impl Encode for ExternalTxId {
    fn encode(&self, w: &mut Writer) {
        self.chain.encode(w);
        self.txid.encode(w);
    }
}

impl Decode for ExternalTxId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(ExternalTxId { chain: ChainId::decode(r)?, txid: Hash::decode(r)? })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ExternalTx {
    pub txid: Hash,
    pub from: WalletAddress,
    pub to: WalletAddress,
    pub amount: u64,
    pub submitted_at: SimTime,
    /// Time at which the transfer becomes final.
    pub confirms_at: SimTime,
}

impl ExternalTx {
    pub fn id(&self) -> ExternalTxId {
        ExternalTxId { chain: self.from.chain.clone(), txid: self.txid }
    }

    pub fn confirmed_at(&self, now: SimTime) -> Option<SimTime> {
        (now >= self.confirms_at).then_some(self.confirms_at)
    }

    fn compute_txid(from: &WalletAddress, to: &WalletAddress, amount: u64, at: SimTime, nonce: u64) -> Hash {
        let mut w = Writer::default();
        from.encode(&mut w);
        to.encode(&mut w);
        w.u64(amount);
        w.u64(at.0);
        w.u64(nonce);
        Hash::digest(&w.into_bytes())
    }
}

impl Encode for ExternalTx {
    fn encode(&self, w: &mut Writer) {
        self.txid.encode(w);
        self.from.encode(w);
        self.to.encode(w);
        w.u64(self.amount);
        w.u64(self.submitted_at.0);
        w.u64(self.confirms_at.0);
    }
}

impl Decode for ExternalTx {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(ExternalTx {
            txid: Hash::decode(r)?,
            from: WalletAddress::decode(r)?,
            to: WalletAddress::decode(r)?,
            amount: r.u64()?,
            submitted_at: SimTime(r.u64()?),
            confirms_at: SimTime(r.u64()?),
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum TxStatus {
    Unknown,
    Pending(ExternalTx),
    Confirmed(ExternalTx),
}

impl TxStatus {
    pub fn confirmed(&self) -> Option<&ExternalTx> {
        match self {
            TxStatus::Confirmed(tx) => Some(tx),
            _ => None,
        }
    }

    /// Submitted, whether or not final yet.
    pub fn known(&self) -> Option<&ExternalTx> {
        match self {
            TxStatus::Pending(tx) | TxStatus::Confirmed(tx) => Some(tx),
            TxStatus::Unknown => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AssetError {
    #[error("unknown chain {0}")]
    UnknownChain(ChainId),
    #[error("address on chain {found} used with chain {expected}")]
    WrongChain { expected: ChainId, found: ChainId },
    #[error("transfer amount must be positive")]
    NonPositiveAmount,
    #[error("insufficient funds: available {available}, requested {requested}")]
    InsufficientFunds { available: u64, requested: u64 },
    #[error("faucet is only available during setup")]
    SetupClosed,
}

/// Per-address read position for [`MockChain::poll_incoming`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PollCursor {
    pub address: WalletAddress,
    seen: usize,
}

impl PollCursor {
    pub fn new(address: WalletAddress) -> Self {
        PollCursor { address, seen: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct MockChain {
    id: ChainId,
    confirmation_delay: SimDuration,
    balances: BTreeMap<[u8; ADDRESS_LEN], u64>,
    txs: Vec<ExternalTx>,
    by_id: HashMap<Hash, usize>,
    /// Number of transactions (in submission order) already credited.
    settled: usize,
    /// Confirmed incoming transfers per address, in confirmation order.
    credits: BTreeMap<[u8; ADDRESS_LEN], Vec<usize>>,
    pending: u64,
    faucet_total: u64,
    setup_open: bool,
}

impl MockChain {
    pub fn new(id: ChainId, confirmation_delay: SimDuration) -> Self {
        MockChain {
            id,
            confirmation_delay,
            balances: BTreeMap::new(),
            txs: Vec::new(),
            by_id: HashMap::new(),
            settled: 0,
            credits: BTreeMap::new(),
            pending: 0,
            faucet_total: 0,
            setup_open: true,
        }
    }

    pub fn id(&self) -> &ChainId {
        &self.id
    }

    pub fn confirmation_delay(&self) -> SimDuration {
        self.confirmation_delay
    }

    fn check_chain(&self, addr: &WalletAddress) -> Result<(), AssetError> {
        if addr.chain != self.id {
            return Err(AssetError::WrongChain { expected: self.id.clone(), found: addr.chain.clone() });
        }
        Ok(())
    }

    /// Applies every confirmation due at or before `now`. Because the delay is
    /// constant and time never runs backwards, confirmation order equals
    /// submission order.
    pub fn settle(&mut self, now: SimTime) {
        while let Some(tx) = self.txs.get(self.settled) {
            if tx.confirms_at > now {
                break;
            }
            *self.balances.entry(tx.to.address).or_default() += tx.amount;
            self.pending -= tx.amount;
            self.credits.entry(tx.to.address).or_default().push(self.settled);
            self.settled += 1;
        }
    }

    pub fn faucet(&mut self, to: &WalletAddress, amount: u64) -> Result<(), AssetError> {
        self.check_chain(to)?;
        if !self.setup_open {
            return Err(AssetError::SetupClosed);
        }
        *self.balances.entry(to.address).or_default() += amount;
        self.faucet_total += amount;
        Ok(())
    }

    /// Ends the setup phase; later faucet calls are rejected.
    pub fn close_setup(&mut self) {
        self.setup_open = false;
    }

    pub fn transfer(
        &mut self,
        from: &WalletAddress,
        to: &WalletAddress,
        amount: u64,
        now: SimTime,
    ) -> Result<ExternalTxId, AssetError> {
        self.check_chain(from)?;
        self.check_chain(to)?;
        if amount == 0 {
            return Err(AssetError::NonPositiveAmount);
        }
        self.settle(now);
        let available = self.balances.get(&from.address).copied().unwrap_or(0);
        if available < amount {
            return Err(AssetError::InsufficientFunds { available, requested: amount });
        }
        *self.balances.get_mut(&from.address).expect("checked above") -= amount;
        self.pending += amount;
        let nonce = self.txs.len() as u64;
        let txid = ExternalTx::compute_txid(from, to, amount, now, nonce);
        self.by_id.insert(txid, self.txs.len());
        self.txs.push(ExternalTx {
            txid,
            from: from.clone(),
            to: to.clone(),
            amount,
            submitted_at: now,
            confirms_at: now + self.confirmation_delay,
        });
        self.settle(now);
        Ok(ExternalTxId { chain: self.id.clone(), txid })
    }

    /// Full-node style lookup of a transaction's status at `now`.
    pub fn lookup(&self, txid: &Hash, now: SimTime) -> TxStatus {
        match self.by_id.get(txid) {
            None => TxStatus::Unknown,
            Some(&i) => {
                let tx = &self.txs[i];
                if tx.confirmed_at(now).is_some() {
                    TxStatus::Confirmed(tx.clone())
                } else {
                    TxStatus::Pending(tx.clone())
                }
            }
        }
    }

    pub fn balance(&mut self, address: &WalletAddress, now: SimTime) -> u64 {
        self.settle(now);
        self.balances.get(&address.address).copied().unwrap_or(0)
    }

    /// Confirmed credits to `cursor.address` not returned by earlier polls.
    pub fn poll_incoming(&mut self, cursor: &mut PollCursor, now: SimTime) -> Vec<ExternalTx> {
        self.settle(now);
        let Some(list) = self.credits.get(&cursor.address.address) else {
            return Vec::new();
        };
        let out = list[cursor.seen..].iter().map(|&i| self.txs[i].clone()).collect();
        cursor.seen = list.len();
        out
    }

    pub fn pending_total(&self) -> u64 {
        self.pending
    }

    pub fn faucet_total(&self) -> u64 {
        self.faucet_total
    }

    /// Sum of settled balances.
    pub fn balance_total(&self) -> u64 {
        self.balances.values().sum()
    }

    pub fn transactions(&self) -> &[ExternalTx] {
        &self.txs
    }

    /// Line-delimited transaction log, one hex-encoded canonical record per line.
    pub fn export_log(&self) -> String {
        let mut out = String::new();
        for tx in &self.txs {
            out.push_str(&hex::encode(tx.to_bytes()));
            out.push('\n');
        }
        out
    }

    pub fn parse_log(text: &str) -> Result<Vec<ExternalTx>, DecodeError> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let bytes = hex::decode(l.trim()).map_err(|e| DecodeError::Invalid(e.to_string()))?;
                ExternalTx::from_bytes(&bytes)
            })
            .collect()
    }
}

/// Read access to external chains, as used by auditors and payment checks.
pub trait ExternalChainQuery {
    fn lookup(&self, id: &ExternalTxId) -> TxStatus;
}

/// All external chains of a run.
#[derive(Clone, Debug, Default)]
pub struct ChainRegistry {
    chains: BTreeMap<ChainId, MockChain>,
}

impl ChainRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, chain: MockChain) {
        self.chains.insert(chain.id().clone(), chain);
    }

    pub fn get(&self, id: &ChainId) -> Option<&MockChain> {
        self.chains.get(id)
    }

    pub fn get_mut(&mut self, id: &ChainId) -> Result<&mut MockChain, AssetError> {
        self.chains.get_mut(id).ok_or_else(|| AssetError::UnknownChain(id.clone()))
    }

    pub fn chains(&self) -> impl Iterator<Item = &MockChain> {
        self.chains.values()
    }

    pub fn transfer(
        &mut self,
        from: &WalletAddress,
        to: &WalletAddress,
        amount: u64,
        now: SimTime,
    ) -> Result<ExternalTxId, AssetError> {
        self.get_mut(&from.chain)?.transfer(from, to, amount, now)
    }

    pub fn close_setup(&mut self) {
        for c in self.chains.values_mut() {
            c.close_setup();
        }
    }

    /// A query view pinned at `now`.
    pub fn at(&self, now: SimTime) -> ChainsAt<'_> {
        ChainsAt { registry: self, now }
    }
}

pub struct ChainsAt<'a> {
    registry: &'a ChainRegistry,
    now: SimTime,
}

impl ExternalChainQuery for ChainsAt<'_> {
    fn lookup(&self, id: &ExternalTxId) -> TxStatus {
        match self.registry.get(&id.chain) {
            Some(chain) => chain.lookup(&id.txid, self.now),
            None => TxStatus::Unknown,
        }
    }
}
