use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::{BookError, OrderId, OrderSpec, PairKey, Price};
use crate::time::SimTime;

/// A price and the ids resting at it, oldest first.
pub type Level = (Price, Vec<OrderId>);

/// Resident orders sharing one price, oldest first. Equal creation times are
/// ordered by order id so the sequence is deterministic.
#[derive(Clone, Debug, Default)]
pub struct PriceLevel {
    entries: Vec<(SimTime, OrderId)>,
}

impl PriceLevel {
    fn insert(&mut self, at: SimTime, id: OrderId) {
        let key = (at, id);
        let pos = self.entries.partition_point(|e| *e < key);
        self.entries.insert(pos, key);
    }

    fn remove(&mut self, at: SimTime, id: OrderId) {
        if let Ok(pos) = self.entries.binary_search(&(at, id)) {
            self.entries.remove(pos);
        }
    }

    pub fn order_ids(&self) -> impl Iterator<Item = OrderId> + '_ {
        self.entries.iter().map(|(_, id)| *id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One prospective counterparty order for an incoming order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchCandidate {
    pub order: OrderSpec,
    /// `min(remaining(incoming), remaining(resident))` in base units.
    pub qty: u64,
}

/// Price-level order book for one asset pair. Offers rest on the ask side,
/// requests on the bid side.
#[derive(Clone, Debug)]
pub struct LimitOrderBook {
    pair: PairKey,
    bids: BTreeMap<Price, PriceLevel>,
    asks: BTreeMap<Price, PriceLevel>,
    orders: HashMap<OrderId, OrderSpec>,
}

impl LimitOrderBook {
    pub fn new(pair: PairKey) -> Self {
        LimitOrderBook { pair, bids: BTreeMap::new(), asks: BTreeMap::new(), orders: HashMap::new() }
    }

    pub fn pair(&self) -> &PairKey {
        &self.pair
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn get(&self, id: &OrderId) -> Option<&OrderSpec> {
        self.orders.get(id)
    }

    pub fn contains(&self, id: &OrderId) -> bool {
        self.orders.contains_key(id)
    }

    fn side_mut(&mut self, is_offer: bool) -> &mut BTreeMap<Price, PriceLevel> {
        if is_offer {
            &mut self.asks
        } else {
            &mut self.bids
        }
    }

    pub fn insert(&mut self, order: OrderSpec, now: SimTime) -> Result<(), BookError> {
        let id = order.id();
        let key = order.pair.key();
        if key != self.pair {
            return Err(BookError::WrongPair { expected: self.pair.clone(), found: key });
        }
        if self.orders.contains_key(&id) {
            return Err(BookError::Duplicate(id));
        }
        if order.is_expired(now) {
            return Err(BookError::Expired(id));
        }
        let price = order.price();
        let at = order.created_at;
        self.side_mut(order.is_offer).entry(price).or_default().insert(at, id);
        self.orders.insert(id, order);
        Ok(())
    }

    pub fn remove(&mut self, id: &OrderId) -> Result<OrderSpec, BookError> {
        let order = self.orders.remove(id).ok_or(BookError::UnknownOrder(*id))?;
        let price = order.price();
        let side = self.side_mut(order.is_offer);
        if let Some(level) = side.get_mut(&price) {
            level.remove(order.created_at, *id);
            if level.is_empty() {
                side.remove(&price);
            }
        }
        Ok(order)
    }

    /// Records `qty` base units traded for a resident order, removing it once
    /// fully traded. Returns whether the order left the book.
    pub fn record_trade(&mut self, id: &OrderId, qty: u64) -> Result<bool, BookError> {
        let order = self.orders.get_mut(id).ok_or(BookError::UnknownOrder(*id))?;
        order.traded_qty = (order.traded_qty + qty).min(order.pair.base_qty);
        order.reserved_qty = order.reserved_qty.min(order.pair.base_qty - order.traded_qty);
        if order.is_fulfilled() {
            self.remove(id)?;
            return Ok(true);
        }
        Ok(false)
    }

    /// Drops every order that is expired at `now`; returns their ids.
    pub fn prune_expired(&mut self, now: SimTime) -> Vec<OrderId> {
        let mut expired: Vec<OrderId> = self.orders.values().filter(|o| o.is_expired(now)).map(|o| o.id()).collect();
        expired.sort();
        for id in &expired {
            let _ = self.remove(id);
        }
        expired
    }

    /// Counter-side residents whose price is compatible with `incoming`,
    /// best price first, then oldest first. Does not modify the book.
    pub fn match_order(&self, incoming: &OrderSpec) -> Vec<MatchCandidate> {
        let want = incoming.remaining();
        if want == 0 || incoming.pair.key() != self.pair {
            return Vec::new();
        }
        let limit = incoming.price();
        let levels: Box<dyn Iterator<Item = (&Price, &PriceLevel)>> = if incoming.is_offer {
            Box::new(self.bids.iter().rev().take_while(move |(p, _)| **p >= limit))
        } else {
            Box::new(self.asks.iter().take_while(move |(p, _)| **p <= limit))
        };
        let mut out = Vec::new();
        for (_, level) in levels {
            for id in level.order_ids() {
                let resident = &self.orders[&id];
                if resident.creator == incoming.creator {
                    continue;
                }
                let have = resident.remaining();
                if have == 0 {
                    continue;
                }
                out.push(MatchCandidate { order: resident.clone(), qty: want.min(have) });
            }
        }
        out
    }

    pub fn best_bid(&self) -> Option<Price> {
        self.bids.keys().next_back().copied()
    }

    pub fn best_ask(&self) -> Option<Price> {
        self.asks.keys().next().copied()
    }

    /// (price, order ids) per level, asks ascending then bids descending.
    pub fn levels(&self) -> (Vec<Level>, Vec<Level>) {
        let asks = self.asks.iter().map(|(p, l)| (*p, l.order_ids().collect())).collect();
        let bids = self.bids.iter().rev().map(|(p, l)| (*p, l.order_ids().collect())).collect();
        (asks, bids)
    }

    /// Debug dump: one line per price level listing `creator:seq(remaining)`.
    pub fn snapshot(&self) -> String {
        let mut out = format!("book {}\n", self.pair);
        let (asks, bids) = self.levels();
        for (side, levels) in [("ask", asks), ("bid", bids)] {
            for (price, ids) in levels {
                let _ = write!(out, "{side} {price}:");
                for id in ids {
                    let _ = write!(out, " {}({})", id, self.orders[&id].remaining());
                }
                out.push('\n');
            }
        }
        out
    }

    /// Panics if any structural invariant is violated.
    pub fn assert_invariants(&self) {
        let mut seen = 0;
        for (is_offer, side) in [(true, &self.asks), (false, &self.bids)] {
            for (price, level) in side {
                assert!(!level.is_empty(), "empty level {price} retained");
                assert!(level.entries.windows(2).all(|w| w[0] < w[1]), "level {price} not in time order");
                for id in level.order_ids() {
                    let o = self.orders.get(&id).expect("level references missing order");
                    assert_eq!(o.price(), *price, "order {id} at wrong level");
                    assert_eq!(o.is_offer, is_offer, "order {id} on wrong side");
                    assert!(o.traded_qty + o.reserved_qty <= o.pair.base_qty);
                    seen += 1;
                }
            }
        }
        assert_eq!(seen, self.orders.len(), "order present on more or fewer than one level");
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use crate::assets::ChainId;

    fn book() -> LimitOrderBook {
        LimitOrderBook::new(PairKey { base: ChainId::new("BTC"), quote: ChainId::new("ETH") })
    }

    #[test]
    fn offer_into_empty_book() {
        let mut b = book();
        b.insert(order(&ident(1), 1, 0, true, 1, 1), SimTime::ZERO).unwrap();
        let (asks, bids) = b.levels();
        assert_eq!(asks.len(), 1);
        assert_eq!(asks[0].1.len(), 1);
        assert!(bids.is_empty());
        b.assert_invariants();
    }

    #[test]
    fn same_price_fifo_by_creation_time() {
        let mut b = book();
        let late = order(&ident(1), 1, 20, true, 1, 1);
        let early = order(&ident(2), 1, 10, true, 1, 1);
        b.insert(late.clone(), SimTime::ZERO).unwrap();
        b.insert(early.clone(), SimTime::ZERO).unwrap();
        let (asks, _) = b.levels();
        assert_eq!(asks[0].1, vec![early.id(), late.id()]);
    }

    #[test]
    fn duplicate_and_expired_rejected() {
        let mut b = book();
        let o = order(&ident(1), 1, 0, true, 1, 1);
        b.insert(o.clone(), SimTime::ZERO).unwrap();
        assert_eq!(b.insert(o.clone(), SimTime::ZERO), Err(BookError::Duplicate(o.id())));
        let o2 = order(&ident(1), 2, 0, true, 1, 1);
        assert_eq!(b.insert(o2.clone(), SimTime::from_secs(7200)), Err(BookError::Expired(o2.id())));
    }

    #[test]
    fn insert_then_remove_restores_empty_book() {
        let mut b = book();
        let o = order(&ident(1), 1, 0, false, 1, 1);
        b.insert(o.clone(), SimTime::ZERO).unwrap();
        b.remove(&o.id()).unwrap();
        assert!(b.is_empty());
        assert_eq!(b.levels(), (vec![], vec![]));
        assert_eq!(b.remove(&o.id()), Err(BookError::UnknownOrder(o.id())));
    }

    #[test]
    fn remove_keeps_fifo_position_of_others() {
        let mut b = book();
        let os: Vec<_> = (0..3).map(|i| order(&ident(i), 1, i * 10, true, 1, 1)).collect();
        for o in &os {
            b.insert(o.clone(), SimTime::ZERO).unwrap();
        }
        b.remove(&os[1].id()).unwrap();
        assert_eq!(b.levels().0[0].1, vec![os[0].id(), os[2].id()]);
    }

    #[test]
    fn fixed_price_workload_single_match() {
        let mut b = book();
        let offer = order(&ident(1), 1, 0, true, 1, 1);
        b.insert(offer.clone(), SimTime::ZERO).unwrap();
        let req = order(&ident(2), 1, 5, false, 1, 1);
        let m = b.match_order(&req);
        assert_eq!(m, vec![MatchCandidate { order: offer, qty: 1 }]);
    }

    #[test]
    fn bid_matches_cheaper_asks_in_price_order() {
        let mut b = book();
        // prices 1.1, 0.9, 1.0 (quote per base)
        let p11 = order(&ident(1), 1, 0, true, 10, 11);
        let p09 = order(&ident(2), 1, 0, true, 10, 9);
        let p10 = order(&ident(3), 1, 0, true, 10, 10);
        for o in [&p11, &p09, &p10] {
            b.insert(o.clone(), SimTime::ZERO).unwrap();
        }
        let bid = order(&ident(4), 1, 1, false, 10, 10);
        let ids: Vec<_> = b.match_order(&bid).into_iter().map(|m| m.order.id()).collect();
        assert_eq!(ids, vec![p09.id(), p10.id()]);
    }

    #[test]
    fn own_orders_and_fully_reserved_residents_skipped() {
        let mut b = book();
        let me = ident(1);
        b.insert(order(&me, 1, 0, true, 1, 1), SimTime::ZERO).unwrap();
        let mut busy = order(&ident(2), 1, 0, true, 1, 1);
        busy.reserve(1).unwrap();
        b.insert(busy, SimTime::ZERO).unwrap();
        assert!(b.match_order(&order(&me, 2, 1, false, 1, 1)).is_empty());
    }

    #[test]
    fn record_trade_removes_filled_orders() {
        let mut b = book();
        let o = order(&ident(1), 1, 0, true, 2, 2);
        b.insert(o.clone(), SimTime::ZERO).unwrap();
        assert_eq!(b.record_trade(&o.id(), 1), Ok(false));
        assert_eq!(b.get(&o.id()).unwrap().remaining(), 1);
        assert_eq!(b.record_trade(&o.id(), 1), Ok(true));
        assert!(b.is_empty());
    }

    #[test]
    fn snapshot_format() {
        let mut b = book();
        let o = order(&ident(1), 4, 0, true, 2, 3);
        b.insert(o.clone(), SimTime::ZERO).unwrap();
        assert_eq!(b.snapshot(), format!("book BTC/ETH\nask 3/2: {}(2)\n", o.id()));
    }
}
