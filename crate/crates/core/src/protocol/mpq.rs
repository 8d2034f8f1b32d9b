use std::cmp::{Ordering, Reverse};
use std::collections::BTreeMap;

use num_rational::Ratio;

use crate::crypto::PeerId;
use crate::orderbook::{OrderId, OrderSpec};
use crate::time::SimTime;

/// Price advantage of `matched` for the owner of `own`, in quote units per
/// base unit. Positive means better than the owner's limit price.
pub fn match_quality(own: &OrderSpec, matched: &OrderSpec) -> Ratio<i128> {
    let own_p = own.price().as_ratio();
    let other_p = matched.price().as_ratio();
    if own.is_offer {
        other_p - own_p
    } else {
        own_p - other_p
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchQueueEntry {
    pub retries: u32,
    pub quality: Ratio<i128>,
    pub matched: OrderSpec,
    /// Matchmakers that nominated this order.
    pub nominated_by: Vec<PeerId>,
    /// Earliest time a retried entry may be selected again.
    pub not_before: SimTime,
}

impl MatchQueueEntry {
    pub fn new(own: &OrderSpec, matched: OrderSpec, matchmaker: PeerId) -> Self {
        MatchQueueEntry {
            retries: 0,
            quality: match_quality(own, &matched),
            matched,
            nominated_by: vec![matchmaker],
            not_before: SimTime::ZERO,
        }
    }

    fn key(&self) -> QueueKey {
        QueueKey {
            retries: self.retries,
            quality: Reverse(self.quality),
            created_at: self.matched.created_at,
            id: self.matched.id(),
        }
    }
}

/// Lower retry count first, then higher quality, then older matched order,
/// then order id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct QueueKey {
    retries: u32,
    quality: Reverse<Ratio<i128>>,
    created_at: SimTime,
    id: OrderId,
}

/// Nominated counterparties for one own order.
#[derive(Clone, Debug)]
pub struct MatchPriorityQueue {
    owner: OrderId,
    entries: BTreeMap<QueueKey, MatchQueueEntry>,
    keys: BTreeMap<OrderId, QueueKey>,
}

impl MatchPriorityQueue {
    pub fn new(owner: OrderId) -> Self {
        MatchPriorityQueue { owner, entries: BTreeMap::new(), keys: BTreeMap::new() }
    }

    pub fn owner(&self) -> OrderId {
        self.owner
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, matched: &OrderId) -> bool {
        self.keys.contains_key(matched)
    }

    /// Adds a nomination. A repeat nomination of the same order only records
    /// the extra matchmaker. Returns whether a new entry was created.
    pub fn push(&mut self, entry: MatchQueueEntry) -> bool {
        let id = entry.matched.id();
        if let Some(k) = self.keys.get(&id) {
            let existing = self.entries.get_mut(k).expect("key index in sync");
            for m in entry.nominated_by {
                if !existing.nominated_by.contains(&m) {
                    existing.nominated_by.push(m);
                }
            }
            return false;
        }
        let k = entry.key();
        self.keys.insert(id, k);
        self.entries.insert(k, entry);
        true
    }

    pub fn peek(&self) -> Option<&MatchQueueEntry> {
        self.entries.values().next()
    }

    pub fn pop(&mut self) -> Option<MatchQueueEntry> {
        let (_, e) = self.entries.pop_first()?;
        self.keys.remove(&e.matched.id());
        Some(e)
    }

    /// Puts a failed entry back with its retry count incremented.
    pub fn requeue(&mut self, mut entry: MatchQueueEntry, not_before: SimTime) {
        entry.retries += 1;
        entry.not_before = not_before;
        self.push(entry);
    }

    pub fn remove(&mut self, matched: &OrderId) -> Option<MatchQueueEntry> {
        let k = self.keys.remove(matched)?;
        self.entries.remove(&k)
    }

    pub fn iter(&self) -> impl Iterator<Item = &MatchQueueEntry> {
        self.entries.values()
    }
}

/// Reference ordering used by tests: sort by the documented priority.
pub fn priority_cmp(a: &MatchQueueEntry, b: &MatchQueueEntry) -> Ordering {
    a.retries
        .cmp(&b.retries)
        .then(b.quality.cmp(&a.quality))
        .then(a.matched.created_at.cmp(&b.matched.created_at))
        .then(a.matched.id().cmp(&b.matched.id()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orderbook::AssetPair;
    use crate::time::SimDuration;
    use crate::Identity;

    fn ord(i: u64, is_offer: bool, base: u64, quote: u64) -> OrderSpec {
        OrderSpec::new_signed(
            &Identity::derive(9, i),
            1,
            SimTime::from_millis(i),
            SimDuration::from_secs(60),
            is_offer,
            AssetPair::new("BTC", base, "ETH", quote),
        )
    }

    #[test]
    fn quality_is_price_advantage() {
        let own_bid = ord(0, false, 1, 10);
        assert_eq!(match_quality(&own_bid, &ord(1, true, 1, 8)), Ratio::from_integer(2));
        let own_ask = ord(0, true, 1, 10);
        assert_eq!(match_quality(&own_ask, &ord(1, false, 1, 12)), Ratio::from_integer(2));
    }

    #[test]
    fn higher_quality_first_at_equal_retries() {
        let own = ord(0, false, 1, 10);
        let mut q = MatchPriorityQueue::new(own.id());
        let mm = PeerId([0; 32]);
        q.push(MatchQueueEntry::new(&own, ord(1, true, 1, 9), mm));
        q.push(MatchQueueEntry::new(&own, ord(2, true, 1, 8), mm));
        assert_eq!(q.pop().unwrap().quality, Ratio::from_integer(2));
    }

    #[test]
    fn fewer_retries_beat_quality() {
        let own = ord(0, false, 1, 10);
        let mut q = MatchPriorityQueue::new(own.id());
        let mm = PeerId([0; 32]);
        let mut best = MatchQueueEntry::new(&own, ord(1, true, 1, 1), mm);
        best.retries = 1;
        q.push(best);
        q.push(MatchQueueEntry::new(&own, ord(2, true, 1, 9), mm));
        assert_eq!(q.pop().unwrap().retries, 0);
    }

    #[test]
    fn duplicate_nomination_collapses() {
        let own = ord(0, false, 1, 10);
        let mut q = MatchPriorityQueue::new(own.id());
        let m = ord(1, true, 1, 9);
        assert!(q.push(MatchQueueEntry::new(&own, m.clone(), PeerId([1; 32]))));
        assert!(!q.push(MatchQueueEntry::new(&own, m, PeerId([2; 32]))));
        assert_eq!(q.len(), 1);
        assert_eq!(q.peek().unwrap().nominated_by.len(), 2);
    }

    #[test]
    fn requeue_increments_retries() {
        let own = ord(0, false, 1, 10);
        let mut q = MatchPriorityQueue::new(own.id());
        q.push(MatchQueueEntry::new(&own, ord(1, true, 1, 9), PeerId([1; 32])));
        let e = q.pop().unwrap();
        q.requeue(e, SimTime::from_secs(1));
        let e = q.peek().unwrap();
        assert_eq!((e.retries, e.not_before), (1, SimTime::from_secs(1)));
    }
}
