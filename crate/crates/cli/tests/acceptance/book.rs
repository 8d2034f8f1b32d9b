//! Limit order book and match priority queue against naive reference
//! models, over random operation sequences.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xchange_core::orderbook::{AssetPair, LimitOrderBook, OrderId, OrderSpec};
use xchange_core::protocol::mpq::{MatchPriorityQueue, MatchQueueEntry};
use xchange_core::{Identity, PeerId, SimDuration, SimTime};

use crate::Outcome;

const SEQUENCES: usize = 1000;
const MAX_OPS: usize = 200;

/// `a.quote/a.base` against `b.quote/b.base`.
fn price_cmp(a: &OrderSpec, b: &OrderSpec) -> Ordering {
    let lhs = a.pair.quote_qty as u128 * b.pair.base_qty as u128;
    let rhs = b.pair.quote_qty as u128 * a.pair.base_qty as u128;
    lhs.cmp(&rhs)
}

/// Resting orders the model would hand to `incoming`, best first.
fn model_match(model: &[OrderSpec], incoming: &OrderSpec) -> Vec<(OrderId, u64)> {
    let mut c: Vec<&OrderSpec> = model
        .iter()
        .filter(|r| r.is_offer != incoming.is_offer && r.creator != incoming.creator && r.remaining() > 0)
        .filter(|r| match incoming.is_offer {
            // A seller takes bids at or above its ask, a buyer asks at or below its bid.
            true => price_cmp(r, incoming) != Ordering::Less,
            false => price_cmp(r, incoming) != Ordering::Greater,
        })
        .collect();
    c.sort_by(|a, b| {
        let price = if a.is_offer { price_cmp(a, b) } else { price_cmp(b, a) };
        price.then(a.created_at.cmp(&b.created_at)).then(a.id().cmp(&b.id()))
    });
    c.into_iter().map(|r| (r.id(), r.remaining().min(incoming.remaining()))).collect()
}

struct Maker {
    seq: u64,
    clock: u64,
}

impl Maker {
    fn order(&mut self, rng: &mut ChaCha8Rng) -> OrderSpec {
        self.seq += 1;
        self.clock += rng.gen_range(0..3);
        OrderSpec::new_signed(
            &Identity::derive(55, rng.gen_range(0..4)),
            self.seq,
            SimTime::from_millis(self.clock),
            SimDuration::from_secs(3600),
            rng.gen(),
            AssetPair::new("BTC", rng.gen_range(1..6), "ETH", rng.gen_range(1..6)),
        )
    }
}

fn book_sequence(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let mut book = LimitOrderBook::new(AssetPair::new("BTC", 1, "ETH", 1).key());
    let mut model: Vec<OrderSpec> = Vec::new();
    let mut maker = Maker { seq: 0, clock: 0 };
    let now = SimTime::from_secs(1);
    let ops = rng.gen_range(1..=MAX_OPS);
    for step in 0..ops {
        match rng.gen_range(0..8) {
            0..=3 => {
                let o = maker.order(rng);
                book.insert(o.clone(), now).map_err(|e| format!("step {step}: insert: {e}"))?;
                model.push(o);
            }
            4 if !model.is_empty() => {
                let o = model.remove(rng.gen_range(0..model.len()));
                let got = book.remove(&o.id()).map(|r| r.id()).ok();
                if got != Some(o.id()) {
                    return Err(format!("step {step}: remove returned {got:?}"));
                }
            }
            5 if !model.is_empty() => {
                let i = rng.gen_range(0..model.len());
                let q = rng.gen_range(1..6).min(model[i].remaining());
                model[i].traded_qty += q;
                let gone = book.record_trade(&model[i].id(), q).map_err(|e| format!("step {step}: trade: {e}"))?;
                if gone != model[i].is_fulfilled() {
                    return Err(format!("step {step}: fulfilment mismatch"));
                }
                if gone {
                    model.remove(i);
                }
            }
            _ => {
                let incoming = maker.order(rng);
                let got: Vec<(OrderId, u64)> =
                    book.match_order(&incoming).into_iter().map(|c| (c.order.id(), c.qty)).collect();
                let want = model_match(&model, &incoming);
                if got != want {
                    return Err(format!("step {step}: matched {got:?}, model {want:?}"));
                }
            }
        }
        if book.len() != model.len() {
            return Err(format!("step {step}: book holds {}, model {}", book.len(), model.len()));
        }
    }
    Ok(ops)
}

/// Reference order: fewer retries, then the better price for the owner,
/// then the older order, then the order id.
fn reference_cmp(own_offer: bool, a: &(u32, OrderSpec), b: &(u32, OrderSpec)) -> Ordering {
    let price = if own_offer { price_cmp(&b.1, &a.1) } else { price_cmp(&a.1, &b.1) };
    a.0.cmp(&b.0).then(price).then(a.1.created_at.cmp(&b.1.created_at)).then(a.1.id().cmp(&b.1.id()))
}

fn mpq_sequence(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let own_offer: bool = rng.gen();
    let own = OrderSpec::new_signed(
        &Identity::derive(41, 0),
        1,
        SimTime::ZERO,
        SimDuration::from_secs(60),
        own_offer,
        AssetPair::new("BTC", 10, "ETH", 10),
    );
    let mm = PeerId([9; 32]);
    let mut q = MatchPriorityQueue::new(own.id());
    let mut model: Vec<(u32, OrderSpec)> = Vec::new();
    let candidates: Vec<OrderSpec> = (1..=rng.gen_range(1..40u64))
        .map(|i| {
            OrderSpec::new_signed(
                &Identity::derive(41, i),
                1,
                SimTime::from_millis(rng.gen_range(0..5)),
                SimDuration::from_secs(60),
                !own_offer,
                AssetPair::new("BTC", rng.gen_range(1..12), "ETH", rng.gen_range(1..30)),
            )
        })
        .collect();
    let ops = rng.gen_range(1..=MAX_OPS);
    for step in 0..ops {
        match rng.gen_range(0..6) {
            0..=2 => {
                let c = candidates[rng.gen_range(0..candidates.len())].clone();
                let fresh = !model.iter().any(|(_, m)| m.id() == c.id());
                if q.push(MatchQueueEntry::new(&own, c.clone(), mm)) != fresh {
                    return Err(format!("step {step}: push freshness"));
                }
                if fresh {
                    model.push((0, c));
                }
            }
            3 => {
                model.sort_by(|a, b| reference_cmp(own_offer, a, b));
                let want = (!model.is_empty()).then(|| model.remove(0));
                let got = q.pop();
                if got.as_ref().map(|e| e.matched.id()) != want.as_ref().map(|w| w.1.id()) {
                    return Err(format!("step {step}: pop order"));
                }
                // Requeue half of what was popped.
                if let (Some(e), Some((r, spec))) = (got, want) {
                    if rng.gen() {
                        q.requeue(e, SimTime::from_secs(1));
                        model.push((r + 1, spec));
                    }
                }
            }
            4 if !model.is_empty() => {
                let (_, spec) = model.remove(rng.gen_range(0..model.len()));
                if q.remove(&spec.id()).is_none() {
                    return Err(format!("step {step}: remove missed"));
                }
            }
            _ => {}
        }
    }
    // Drain: pops must follow the reference sort exactly.
    model.sort_by(|a, b| reference_cmp(own_offer, a, b));
    let drained: Vec<OrderId> = std::iter::from_fn(|| q.pop()).map(|e| e.matched.id()).collect();
    let want: Vec<OrderId> = model.iter().map(|(_, s)| s.id()).collect();
    if drained != want {
        return Err("drain order differs from reference sort".into());
    }
    Ok(ops)
}

pub fn check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB00C);
    let (mut book_ops, mut mpq_ops) = (0, 0);
    for i in 0..SEQUENCES {
        match book_sequence(&mut rng) {
            Ok(n) => book_ops += n,
            Err(e) => return Outcome::new(false, format!("book sequence {i}: {e}")),
        }
        match mpq_sequence(&mut rng) {
            Ok(n) => mpq_ops += n,
            Err(e) => return Outcome::new(false, format!("mpq sequence {i}: {e}")),
        }
    }
    Outcome::new(
        true,
        format!("{SEQUENCES} book sequences ({book_ops} ops) and {SEQUENCES} queue sequences ({mpq_ops} ops) agree"),
    )
}
