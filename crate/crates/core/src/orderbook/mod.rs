//! Orders, limit order books and matching policies.

mod book;
mod policy;

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assets::ChainId;
use crate::codec::{Decode, DecodeError, Encode, Reader, Writer};
use crate::crypto::{Hash, Identity, PeerId, Signature};
use crate::time::{SimDuration, SimTime};

pub use book::{LimitOrderBook, MatchCandidate, PriceLevel};
pub use policy::{MatchPolicy, MatchPolicyRegistry, PriceTimePolicy, PRICE_TIME};

/// What an order exchanges: `base_qty` units of `base` against `quote_qty`
/// units of `quote`. An offer sells the base asset, a request buys it.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct AssetPair {
    pub base: ChainId,
    pub quote: ChainId,
    pub base_qty: u64,
    pub quote_qty: u64,
}

impl AssetPair {
    pub fn new(base: impl Into<String>, base_qty: u64, quote: impl Into<String>, quote_qty: u64) -> Self {
        AssetPair { base: ChainId::new(base), quote: ChainId::new(quote), base_qty, quote_qty }
    }

    pub fn price(&self) -> Price {
        Price::new(self.quote_qty, self.base_qty)
    }

    pub fn key(&self) -> PairKey {
        PairKey { base: self.base.clone(), quote: self.quote.clone() }
    }

    /// Canonical orientation has the lexicographically smaller asset as base.
    pub fn is_normalized(&self) -> bool {
        self.base < self.quote
    }

    /// Returns the canonical pair and whether the offer/request flag flips.
    pub fn normalized(self) -> (AssetPair, bool) {
        if self.base > self.quote {
            let flipped =
                AssetPair { base: self.quote, quote: self.base, base_qty: self.quote_qty, quote_qty: self.base_qty };
            (flipped, true)
        } else {
            (self, false)
        }
    }

    /// Quote units owed for `base` units at this pair's price, rounded down.
    pub fn quote_for(&self, base: u64) -> u64 {
        ((base as u128 * self.quote_qty as u128) / self.base_qty as u128) as u64
    }
}

impl Encode for AssetPair {
    fn encode(&self, w: &mut Writer) {
        self.base.encode(w);
        self.quote.encode(w);
        w.u64(self.base_qty);
        w.u64(self.quote_qty);
    }
}

impl Decode for AssetPair {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(AssetPair { base: ChainId::decode(r)?, quote: ChainId::decode(r)?, base_qty: r.u64()?, quote_qty: r.u64()? })
    }
}

/// Identifies one order book: the normalized asset pair without quantities.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct PairKey {
    pub base: ChainId,
    pub quote: ChainId,
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base, self.quote)
    }
}

/// Exact price in quote units per base unit.
#[derive(Clone, Copy, Debug)]
pub struct Price {
    quote: u64,
    base: u64,
}

impl Price {
    pub fn new(quote: u64, base: u64) -> Self {
        assert!(base > 0, "price with zero base quantity");
        Price { quote, base }
    }

    pub fn as_ratio(&self) -> Ratio<i128> {
        Ratio::new(self.quote as i128, self.base as i128)
    }
}

impl Ord for Price {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.quote as u128 * other.base as u128).cmp(&(other.quote as u128 * self.base as u128))
    }
}

impl PartialOrd for Price {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Price {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Price {}

impl fmt::Display for Price {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = Ratio::new(self.quote as u128, self.base as u128);
        write!(f, "{}/{}", r.numer(), r.denom())
    }
}

/// `(creator, per-creator ordinal)`; unique across the network.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct OrderId {
    pub creator: PeerId,
    pub seq: u64,
}

impl fmt::Display for OrderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.creator, self.seq)
    }
}

impl Encode for OrderId {
    fn encode(&self, w: &mut Writer) {
        self.creator.encode(w);
        w.u64(self.seq);
    }
}

impl Decode for OrderId {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(OrderId { creator: PeerId::decode(r)?, seq: r.u64()? })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct OrderSpec {
    pub creator: PeerId,
    pub order_seq: u64,
    pub created_at: SimTime,
    pub timeout: SimDuration,
    pub is_offer: bool,
    pub pair: AssetPair,
    /// Base units already exchanged.
    pub traded_qty: u64,
    /// Base units locked by outstanding proposals.
    pub reserved_qty: u64,
    pub signature: Signature,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QuantityError {
    #[error("cannot reserve {requested}: only {remaining} unreserved")]
    Overcommit { requested: u64, remaining: u64 },
    #[error("cannot release {requested}: only {reserved} reserved")]
    NotReserved { requested: u64, reserved: u64 },
}

impl OrderSpec {
    /// Creates and signs an order. The pair is normalized first, flipping the
    /// offer/request flag when the assets are swapped.
    pub fn new_signed(
        identity: &Identity,
        order_seq: u64,
        created_at: SimTime,
        timeout: SimDuration,
        is_offer: bool,
        pair: AssetPair,
    ) -> OrderSpec {
        let (pair, flipped) = pair.normalized();
        let is_offer = is_offer ^ flipped;
        let creator = identity.peer_id();
        let digest = Self::digest_fields(&creator, order_seq, created_at, timeout, is_offer, &pair);
        OrderSpec {
            creator,
            order_seq,
            created_at,
            timeout,
            is_offer,
            pair,
            traded_qty: 0,
            reserved_qty: 0,
            signature: identity.sign(&digest),
        }
    }

    fn digest_fields(
        creator: &PeerId,
        seq: u64,
        created_at: SimTime,
        timeout: SimDuration,
        is_offer: bool,
        pair: &AssetPair,
    ) -> Hash {
        let mut w = Writer::default();
        w.str("order");
        creator.encode(&mut w);
        w.u64(seq);
        w.u64(created_at.0);
        w.u64(timeout.0);
        w.bool(is_offer);
        pair.encode(&mut w);
        Hash::digest(&w.into_bytes())
    }

    /// Digest over the immutable fields; what the creator signs.
    pub fn digest(&self) -> Hash {
        Self::digest_fields(&self.creator, self.order_seq, self.created_at, self.timeout, self.is_offer, &self.pair)
    }

    pub fn id(&self) -> OrderId {
        OrderId { creator: self.creator, seq: self.order_seq }
    }

    pub fn price(&self) -> Price {
        self.pair.price()
    }

    pub fn expires_at(&self) -> SimTime {
        self.created_at + self.timeout
    }

    pub fn is_expired(&self, now: SimTime) -> bool {
        now > self.expires_at()
    }

    /// Base units neither traded nor reserved.
    pub fn remaining(&self) -> u64 {
        self.pair.base_qty.saturating_sub(self.traded_qty + self.reserved_qty)
    }

    pub fn is_fulfilled(&self) -> bool {
        self.traded_qty >= self.pair.base_qty
    }

    pub fn reserve(&mut self, qty: u64) -> Result<(), QuantityError> {
        let remaining = self.remaining();
        if qty > remaining {
            return Err(QuantityError::Overcommit { requested: qty, remaining });
        }
        self.reserved_qty += qty;
        Ok(())
    }

    pub fn release(&mut self, qty: u64) -> Result<(), QuantityError> {
        if qty > self.reserved_qty {
            return Err(QuantityError::NotReserved { requested: qty, reserved: self.reserved_qty });
        }
        self.reserved_qty -= qty;
        Ok(())
    }

    /// Moves `qty` reserved units to traded.
    pub fn settle_reserved(&mut self, qty: u64) -> Result<(), QuantityError> {
        self.release(qty)?;
        self.traded_qty += qty;
        Ok(())
    }

    /// Whether this order and `other` are on opposite sides at compatible
    /// prices (offer price at most request price).
    pub fn crosses(&self, other: &OrderSpec) -> bool {
        if self.is_offer == other.is_offer || self.pair.key() != other.pair.key() {
            return false;
        }
        let (offer, request) = if self.is_offer { (self, other) } else { (other, self) };
        offer.price() <= request.price()
    }
}

impl Encode for OrderSpec {
    fn encode(&self, w: &mut Writer) {
        self.creator.encode(w);
        w.u64(self.order_seq);
        w.u64(self.created_at.0);
        w.u64(self.timeout.0);
        w.bool(self.is_offer);
        self.pair.encode(w);
        w.u64(self.traded_qty);
        w.u64(self.reserved_qty);
        self.signature.encode(w);
    }
}

impl Decode for OrderSpec {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(OrderSpec {
            creator: PeerId::decode(r)?,
            order_seq: r.u64()?,
            created_at: SimTime(r.u64()?),
            timeout: SimDuration(r.u64()?),
            is_offer: r.bool()?,
            pair: AssetPair::decode(r)?,
            traded_qty: r.u64()?,
            reserved_qty: r.u64()?,
            signature: Signature::decode(r)?,
        })
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderRejection {
    #[error("bad signature")]
    BadSignature,
    #[error("non-positive quantity")]
    NonPositiveQuantity,
    #[error("order expired")]
    Expired,
    #[error("base and quote asset are identical")]
    SameAsset,
    #[error("asset pair not in canonical orientation")]
    NotNormalized,
    #[error("quantity bookkeeping exceeds order size")]
    Overcommitted,
}

/// Order validation applied before an order enters a book.
pub fn validate(order: &OrderSpec, now: SimTime) -> Result<(), OrderRejection> {
    if order.signature.signer != order.creator || !order.signature.verify(&order.digest()) {
        return Err(OrderRejection::BadSignature);
    }
    if order.pair.base_qty == 0 || order.pair.quote_qty == 0 {
        return Err(OrderRejection::NonPositiveQuantity);
    }
    if order.pair.base == order.pair.quote {
        return Err(OrderRejection::SameAsset);
    }
    if !order.pair.is_normalized() {
        return Err(OrderRejection::NotNormalized);
    }
    if order.traded_qty + order.reserved_qty > order.pair.base_qty {
        return Err(OrderRejection::Overcommitted);
    }
    if order.is_expired(now) {
        return Err(OrderRejection::Expired);
    }
    Ok(())
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BookError {
    #[error("order {0} already in book")]
    Duplicate(OrderId),
    #[error("order {0} expired")]
    Expired(OrderId),
    #[error("order {0} not in book")]
    UnknownOrder(OrderId),
    #[error("order for pair {found} inserted into book {expected}")]
    WrongPair { expected: PairKey, found: PairKey },
    #[error("unknown matching policy {0:?}")]
    UnknownPolicy(String),
}
