//! Order book against a brute-force reference model.

use proptest::prelude::*;

use xchange_core::orderbook::{AssetPair, LimitOrderBook, OrderId, OrderSpec};
use xchange_core::{Identity, SimDuration, SimTime};

#[derive(Clone, Debug)]
enum Op {
    Insert { who: u64, is_offer: bool, base: u64, quote: u64 },
    Remove(usize),
    Trade(usize, u64),
    Match { who: u64, is_offer: bool, base: u64, quote: u64 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0u64..4, any::<bool>(), 1u64..6, 1u64..6)
            .prop_map(|(who, is_offer, base, quote)| Op::Insert { who, is_offer, base, quote }),
        1 => any::<prop::sample::Index>().prop_map(|i| Op::Remove(i.index(usize::MAX))),
        1 => (any::<prop::sample::Index>(), 1u64..6).prop_map(|(i, q)| Op::Trade(i.index(usize::MAX), q)),
        2 => (0u64..4, any::<bool>(), 1u64..6, 1u64..6)
            .prop_map(|(who, is_offer, base, quote)| Op::Match { who, is_offer, base, quote }),
    ]
}

/// `a` priced strictly better than `b` for a taker on the other side.
/// Asks are better when cheaper, bids when dearer.
fn better(a: &OrderSpec, b: &OrderSpec) -> std::cmp::Ordering {
    let lhs = a.pair.quote_qty as u128 * b.pair.base_qty as u128;
    let rhs = b.pair.quote_qty as u128 * a.pair.base_qty as u128;
    if a.is_offer {
        lhs.cmp(&rhs)
    } else {
        rhs.cmp(&lhs)
    }
}

fn crosses(incoming: &OrderSpec, resident: &OrderSpec) -> bool {
    let inc = incoming.pair.quote_qty as u128 * resident.pair.base_qty as u128;
    let res = resident.pair.quote_qty as u128 * incoming.pair.base_qty as u128;
    if incoming.is_offer {
        res >= inc
    } else {
        res <= inc
    }
}

fn model_match(model: &[OrderSpec], incoming: &OrderSpec) -> Vec<(OrderId, u64)> {
    let mut c: Vec<&OrderSpec> = model
        .iter()
        .filter(|r| r.is_offer != incoming.is_offer)
        .filter(|r| r.creator != incoming.creator && r.remaining() > 0)
        .filter(|r| crosses(incoming, r))
        .collect();
    c.sort_by(|a, b| better(a, b).then(a.created_at.cmp(&b.created_at)).then(a.id().cmp(&b.id())));
    c.into_iter().map(|r| (r.id(), r.remaining().min(incoming.remaining()))).collect()
}

fn run(ops: Vec<Op>) -> Result<(), TestCaseError> {
    let pair = AssetPair::new("BTC", 1, "ETH", 1).key();
    let mut book = LimitOrderBook::new(pair);
    let mut model: Vec<OrderSpec> = Vec::new();
    let mut seq = 0u64;
    let mut clock = 0u64;
    let mut make = |who: u64, is_offer: bool, base: u64, quote: u64| {
        seq += 1;
        clock += (seq * 7) % 3;
        OrderSpec::new_signed(
            &Identity::derive(55, who),
            seq,
            SimTime::from_millis(clock),
            SimDuration::from_secs(3600),
            is_offer,
            AssetPair::new("BTC", base, "ETH", quote),
        )
    };
    let now = SimTime::from_secs(1);
    for op in ops {
        match op {
            Op::Insert { who, is_offer, base, quote } => {
                let o = make(who, is_offer, base, quote);
                book.insert(o.clone(), now).unwrap();
                model.push(o);
            }
            Op::Remove(i) if !model.is_empty() => {
                let o = model.remove(i % model.len());
                prop_assert_eq!(book.remove(&o.id()).unwrap().id(), o.id());
            }
            Op::Trade(i, q) if !model.is_empty() => {
                let i = i % model.len();
                let q = q.min(model[i].remaining());
                if q == 0 {
                    continue;
                }
                model[i].traded_qty += q;
                let gone = book.record_trade(&model[i].id(), q).unwrap();
                prop_assert_eq!(gone, model[i].is_fulfilled());
                if gone {
                    model.remove(i);
                }
            }
            Op::Match { who, is_offer, base, quote } => {
                let incoming = make(who, is_offer, base, quote);
                let got: Vec<(OrderId, u64)> =
                    book.match_order(&incoming).into_iter().map(|c| (c.order.id(), c.qty)).collect();
                prop_assert_eq!(got, model_match(&model, &incoming));
            }
            _ => {}
        }
        book.assert_invariants();
        prop_assert_eq!(book.len(), model.len());
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn book_agrees_with_reference_model(ops in prop::collection::vec(op(), 1..40)) {
        run(ops)?;
    }
}
