use std::collections::{BTreeMap, HashMap, HashSet};

use super::config::{Behavior, ProtocolConfig};
use super::events::Context;
use super::messages::{trade_done_digest, Envelope, Message, RejectReason};
use super::peer::Messenger;
use crate::crypto::{Hash, Identity, PeerId};
use crate::ledger::{LedgerStore, TxPayload};
use crate::orderbook::{validate, LimitOrderBook, MatchCandidate, MatchPolicyRegistry, OrderId, OrderSpec, PairKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Nomination {
    Live,
    /// The resident left the book before the creator answered.
    Vanished,
    Rejected,
}

/// Keeps order books and nominates counterparties to order creators.
#[derive(Debug)]
pub struct Matchmaker {
    msg: Messenger,
    config: ProtocolConfig,
    behavior: Behavior,
    books: BTreeMap<PairKey, LimitOrderBook>,
    policies: MatchPolicyRegistry,
    /// Order blocks received with orders.
    witnesses: LedgerStore,
    /// Couples already reported to the order creator, never reported again.
    nominated: HashMap<(OrderId, OrderId), Nomination>,
    /// Live nominations per resident order. Residents with fewer come
    /// first so that orders arriving together spread over the book.
    outstanding: HashMap<OrderId, u32>,
    done: HashSet<Hash>,
}

impl Matchmaker {
    pub fn new(identity: Identity, config: ProtocolConfig, behavior: Behavior) -> Self {
        Matchmaker {
            msg: Messenger::new(identity),
            config,
            behavior,
            books: BTreeMap::new(),
            policies: MatchPolicyRegistry::default(),
            witnesses: LedgerStore::new(),
            nominated: HashMap::new(),
            outstanding: HashMap::new(),
            done: HashSet::new(),
        }
    }

    pub fn id(&self) -> PeerId {
        self.msg.id
    }

    pub fn behavior(&self) -> Behavior {
        self.behavior
    }

    pub fn policies_mut(&mut self) -> &mut MatchPolicyRegistry {
        &mut self.policies
    }

    pub fn book(&self, pair: &PairKey) -> Option<&LimitOrderBook> {
        self.books.get(pair)
    }

    pub fn books(&self) -> impl Iterator<Item = &LimitOrderBook> {
        self.books.values()
    }

    pub fn witnesses(&self) -> &LedgerStore {
        &self.witnesses
    }

    pub(crate) fn on_message(&mut self, ctx: &mut dyn Context, env: Envelope) {
        let sender = env.sender;
        match env.body {
            Message::Order { order, block } => self.on_order(ctx, sender, order, block),
            Message::CancelOrder { order } => {
                if order.creator == sender {
                    self.remove(&order);
                }
            }
            Message::RejectMatch { order, matched, reason } => self.on_reject(ctx, sender, order, matched, reason),
            Message::TradeDone { done, agreement, signature } => {
                if !agreement.involves(&sender)
                    || signature.signer != agreement.counterparty
                    || done.trade_ref.creator != agreement.initiator
                    || !signature.verify(&trade_done_digest(&done))
                {
                    return;
                }
                if !self.done.insert(done.trade_ref.hash) {
                    return;
                }
                let mut gone = Vec::new();
                if let Some(book) = self.books.get_mut(&agreement.pair.key()) {
                    for id in [agreement.initiator_order, agreement.counterparty_order] {
                        if let Ok(true) = book.record_trade(&id, agreement.pair.base_qty) {
                            gone.push(id);
                        }
                    }
                }
                for id in gone {
                    self.forget(&id);
                }
            }
            _ => {}
        }
    }

    fn on_order(
        &mut self,
        ctx: &mut dyn Context,
        sender: PeerId,
        order: OrderSpec,
        block: Option<crate::ledger::BlockPartition>,
    ) {
        let now = ctx.now();
        if order.creator != sender || validate(&order, now).is_err() {
            return;
        }
        if let Some(b) = block {
            let recorded = match &b.payload {
                TxPayload::Offer { order: o } | TxPayload::Request { order: o } => *o == order,
                _ => false,
            };
            if b.creator == sender && recorded {
                let _ = self.witnesses.insert(b);
            }
        }
        let key = order.pair.key();
        let book = self.books.entry(key.clone()).or_insert_with(|| LimitOrderBook::new(key));
        book.prune_expired(now);
        if book.contains(&order.id()) {
            return;
        }
        let candidates = self.policies.apply(book, &order);
        if book.insert(order.clone(), now).is_err() {
            return;
        }
        self.nominate(ctx, &order, candidates, self.config.max_matches);
    }

    /// Reports up to `limit` candidates not yet reported for `order`.
    fn nominate(&mut self, ctx: &mut dyn Context, order: &OrderSpec, candidates: Vec<MatchCandidate>, limit: usize) {
        let id = order.id();
        let mut picks: Vec<MatchCandidate> =
            candidates.into_iter().filter(|c| !self.nominated.contains_key(&(id, c.order.id()))).collect();
        if self.behavior == Behavior::BiasedMatchmaker {
            picks = picks.pop().into_iter().collect();
        } else {
            picks.sort_by_key(|c| self.outstanding.get(&c.order.id()).copied().unwrap_or(0));
        }
        for c in picks.into_iter().take(limit) {
            let m = c.order.id();
            self.nominated.insert((id, m), Nomination::Live);
            *self.outstanding.entry(m).or_default() += 1;
            self.msg.notify(ctx, order.creator, Message::Match { order: id, matched: c.order });
        }
    }

    fn on_reject(
        &mut self,
        ctx: &mut dyn Context,
        sender: PeerId,
        order: OrderId,
        matched: OrderId,
        reason: RejectReason,
    ) {
        if order.creator != sender {
            return;
        }
        match reason {
            RejectReason::Expired | RejectReason::Cancelled | RejectReason::Fulfilled => self.remove(&order),
            _ => {
                let Some(state) = self.nominated.get_mut(&(order, matched)) else { return };
                match std::mem::replace(state, Nomination::Rejected) {
                    Nomination::Live => self.release(&matched),
                    Nomination::Vanished => {}
                    Nomination::Rejected => return,
                }
                let Some(book) = self.books.values().find(|b| b.contains(&order)) else { return };
                let spec = book.get(&order).expect("contains").clone();
                let candidates = self.policies.apply(book, &spec);
                // one replacement per rejected nomination
                self.nominate(ctx, &spec, candidates, 1);
            }
        }
    }

    fn remove(&mut self, order: &OrderId) {
        for book in self.books.values_mut() {
            if book.remove(order).is_ok() {
                break;
            }
        }
        self.forget(order);
    }

    fn forget(&mut self, order: &OrderId) {
        let mut released = Vec::new();
        self.nominated.retain(|(o, m), state| {
            if o == order {
                if *state == Nomination::Live {
                    released.push(*m);
                }
                return false;
            }
            if m == order && *state == Nomination::Live {
                *state = Nomination::Vanished;
            }
            true
        });
        for m in released {
            self.release(&m);
        }
        self.outstanding.remove(order);
    }

    fn release(&mut self, order: &OrderId) {
        if let Some(n) = self.outstanding.get_mut(order) {
            *n -= 1;
            if *n == 0 {
                self.outstanding.remove(order);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets::{AssetError, ChainRegistry, ExternalTxId, WalletAddress};
    use crate::orderbook::testutil::{ident, order};
    use crate::protocol::events::{Observation, Timer, TimerId};
    use crate::time::{SimDuration, SimTime};

    #[derive(Default)]
    struct Sink {
        sent: Vec<Envelope>,
        chains: ChainRegistry,
    }

    impl Context for Sink {
        fn now(&self) -> SimTime {
            SimTime::from_millis(100)
        }
        fn send(&mut self, envelope: Envelope) {
            self.sent.push(envelope);
        }
        fn set_timer(&mut self, _: SimDuration, _: Timer) -> TimerId {
            0
        }
        fn cancel_timer(&mut self, _: TimerId) {}
        fn chains(&self) -> &ChainRegistry {
            &self.chains
        }
        fn transfer(&mut self, _: &WalletAddress, _: &WalletAddress, _: u64) -> Result<ExternalTxId, AssetError> {
            unreachable!()
        }
        fn ledger_oracle(&self) -> Option<&LedgerStore> {
            None
        }
        fn publish(&mut self, _: &crate::ledger::BlockPartition) {}
        fn observe(&mut self, _: Observation) {}
    }

    fn setup(max_matches: usize) -> (Matchmaker, Identity) {
        let mm = ident(100);
        let config = ProtocolConfig { max_matches, ..ProtocolConfig::default() };
        (Matchmaker::new(mm.clone(), config, Behavior::Honest), mm)
    }

    fn deliver(m: &mut Matchmaker, ctx: &mut Sink, from: &Identity, body: Message) {
        m.on_message(ctx, Envelope::new_signed(from, m.id(), 1, None, body));
    }

    fn matches(ctx: &mut Sink) -> Vec<(OrderId, OrderId)> {
        ctx.sent
            .drain(..)
            .filter_map(|e| match e.body {
                Message::Match { order, matched } => Some((order, matched.id())),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn nominations_spread_over_residents() {
        let (mut m, _) = setup(1);
        let mut ctx = Sink::default();
        let (b1, b2, a1, a2) = (ident(1), ident(2), ident(3), ident(4));
        let r1 = order(&b1, 1, 0, false, 10, 10);
        let r2 = order(&b2, 1, 1, false, 10, 10);
        for (who, o) in [(&b1, &r1), (&b2, &r2)] {
            deliver(&mut m, &mut ctx, who, Message::Order { order: o.clone(), block: None });
        }
        let x1 = order(&a1, 1, 2, true, 10, 10);
        let x2 = order(&a2, 1, 3, true, 10, 10);
        deliver(&mut m, &mut ctx, &a1, Message::Order { order: x1.clone(), block: None });
        deliver(&mut m, &mut ctx, &a2, Message::Order { order: x2.clone(), block: None });
        assert_eq!(matches(&mut ctx), vec![(x1.id(), r1.id()), (x2.id(), r2.id())]);
    }

    #[test]
    fn rejection_brings_one_replacement_even_after_resident_left() {
        let (mut m, _) = setup(1);
        let mut ctx = Sink::default();
        let (b1, b2, a) = (ident(1), ident(2), ident(3));
        let r1 = order(&b1, 1, 0, false, 10, 10);
        let r2 = order(&b2, 1, 1, false, 10, 10);
        for (who, o) in [(&b1, &r1), (&b2, &r2)] {
            deliver(&mut m, &mut ctx, who, Message::Order { order: o.clone(), block: None });
        }
        let x = order(&a, 1, 2, true, 10, 10);
        deliver(&mut m, &mut ctx, &a, Message::Order { order: x.clone(), block: None });
        assert_eq!(matches(&mut ctx), vec![(x.id(), r1.id())]);

        deliver(&mut m, &mut ctx, &b1, Message::CancelOrder { order: r1.id() });
        let reject = Message::RejectMatch { order: x.id(), matched: r1.id(), reason: RejectReason::NegotiationFailed };
        deliver(&mut m, &mut ctx, &a, reject.clone());
        assert_eq!(matches(&mut ctx), vec![(x.id(), r2.id())]);

        // A repeated rejection is not a new one.
        deliver(&mut m, &mut ctx, &a, reject);
        assert!(matches(&mut ctx).is_empty());
    }

    #[test]
    fn rejections_from_others_ignored() {
        let (mut m, _) = setup(4);
        let mut ctx = Sink::default();
        let (b, a) = (ident(1), ident(2));
        let r = order(&b, 1, 0, false, 10, 10);
        let x = order(&a, 1, 1, true, 10, 10);
        deliver(&mut m, &mut ctx, &b, Message::Order { order: r.clone(), block: None });
        deliver(&mut m, &mut ctx, &a, Message::Order { order: x.clone(), block: None });
        matches(&mut ctx);
        let body = Message::RejectMatch { order: x.id(), matched: r.id(), reason: RejectReason::Expired };
        deliver(&mut m, &mut ctx, &b, body);
        assert!(m.books().any(|bk| bk.contains(&x.id())));
    }
}
