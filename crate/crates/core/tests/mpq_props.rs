use proptest::prelude::*;

use xchange_core::orderbook::{AssetPair, OrderSpec};
use xchange_core::protocol::mpq::{priority_cmp, MatchPriorityQueue, MatchQueueEntry};
use xchange_core::{Identity, PeerId, SimDuration, SimTime};

fn spec(i: u64, is_offer: bool, created_ms: u64, quote: u64) -> OrderSpec {
    OrderSpec::new_signed(
        &Identity::derive(41, i),
        1,
        SimTime::from_millis(created_ms),
        SimDuration::from_secs(60),
        is_offer,
        AssetPair::new("BTC", 10, "ETH", quote),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pops_follow_priority_order(
        own_offer in any::<bool>(),
        entries in prop::collection::vec((0u64..5, 1u64..30, 0u32..3), 1..12),
    ) {
        let own = spec(0, own_offer, 0, 10);
        let mut q = MatchPriorityQueue::new(own.id());
        let mut all = Vec::new();
        for (i, (created, quote, retries)) in entries.into_iter().enumerate() {
            let mut e = MatchQueueEntry::new(&own, spec(i as u64 + 1, !own_offer, created, quote), PeerId([9; 32]));
            e.retries = retries;
            prop_assert!(q.push(e.clone()));
            all.push(e);
        }
        all.sort_by(priority_cmp);
        let mut popped = Vec::new();
        while let Some(e) = q.pop() {
            popped.push(e);
        }
        prop_assert_eq!(popped, all);
    }

    #[test]
    fn requeue_sinks_below_fresh_entries(quotes in prop::collection::vec(1u64..30, 2..8)) {
        let own = spec(0, true, 0, 1);
        let mut q = MatchPriorityQueue::new(own.id());
        for (i, quote) in quotes.iter().enumerate() {
            q.push(MatchQueueEntry::new(&own, spec(i as u64 + 1, false, 0, *quote), PeerId([9; 32])));
        }
        let head = q.pop().unwrap();
        let id = head.matched.id();
        q.requeue(head, SimTime::from_secs(1));
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.matched.id()).collect();
        prop_assert_eq!(order.last().copied(), Some(id));
    }
}
