use std::collections::{BTreeMap, HashMap};

use super::config::{Behavior, ProtocolConfig};
use super::events::{Context, Observation, Timer, TimerId};
use super::messages::{trade_done_digest, Envelope, Message, Proposal, RejectReason};
use super::mpq::{MatchPriorityQueue, MatchQueueEntry};
use super::peer::Messenger;
use super::requests::{RequestKind, RequestTag};
use super::trade::{Negotiation, PendingProposal, Phase, Role, TradeState};
use crate::assets::{ExternalChainQuery, TxStatus, WalletAddress, ADDRESS_LEN};
use crate::crypto::{Hash, Identity, PeerId, Signature};
use crate::ledger::{
    audit_responsibilities, open_obligations, AgreementTx, BlockPartition, BlockRef, LedgerStore, PaymentTx,
    TradeDoneTx, TxPayload,
};
use crate::orderbook::{validate, AssetPair, OrderId, OrderRejection, OrderSpec};
use crate::time::SimDuration;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderStatus {
    Open,
    Fulfilled,
    Closed(RejectReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Window {
    NotStarted,
    Open,
    Closed,
}

/// An order created by this trader and its match priority queue.
#[derive(Clone, Debug)]
pub struct OwnOrder {
    pub spec: OrderSpec,
    pub status: OrderStatus,
    pub mpq: MatchPriorityQueue,
    window: Window,
    negotiation: Option<u64>,
    retry_timer: Option<TimerId>,
}

/// Whether `pair` is at least as good as `order`'s limit price for its
/// creator.
fn price_acceptable(order: &OrderSpec, pair: &AssetPair) -> bool {
    let lhs = pair.quote_qty as u128 * order.pair.base_qty as u128;
    let rhs = order.pair.quote_qty as u128 * pair.base_qty as u128;
    if order.is_offer {
        lhs >= rhs
    } else {
        lhs <= rhs
    }
}

/// Quote owed for `qty` base units at the resident order's price, rounded in
/// the resident's favour.
fn quote_at(resident: &OrderSpec, qty: u64) -> u64 {
    let num = qty as u128 * resident.pair.quote_qty as u128;
    let den = resident.pair.base_qty as u128;
    let q = if resident.is_offer { num.div_ceil(den) } else { num / den };
    q as u64
}

/// A trading peer: creates orders, negotiates and executes trades.
#[derive(Debug)]
pub struct Trader {
    msg: Messenger,
    config: ProtocolConfig,
    behavior: Behavior,
    matchmakers: Vec<PeerId>,
    ledger: LedgerStore,
    next_order_seq: u64,
    orders: BTreeMap<OrderId, OwnOrder>,
    next_negotiation: u64,
    negotiations: BTreeMap<u64, Negotiation>,
    /// Counterparty reservations keyed by the initiator's order.
    pending: BTreeMap<OrderId, PendingProposal>,
    trades: BTreeMap<Hash, TradeState>,
    /// Initiator Agreement partition hash to trade id.
    by_block: HashMap<Hash, Hash>,
    /// Counterparty trades waiting for publication, by initiator order.
    awaiting: HashMap<OrderId, Hash>,
}

impl Trader {
    pub fn new(identity: Identity, config: ProtocolConfig, behavior: Behavior, matchmakers: Vec<PeerId>) -> Self {
        Trader {
            msg: Messenger::new(identity),
            config,
            behavior,
            matchmakers,
            ledger: LedgerStore::new(),
            next_order_seq: 0,
            orders: BTreeMap::new(),
            next_negotiation: 0,
            negotiations: BTreeMap::new(),
            pending: BTreeMap::new(),
            trades: BTreeMap::new(),
            by_block: HashMap::new(),
            awaiting: HashMap::new(),
        }
    }

    pub fn id(&self) -> PeerId {
        self.msg.id
    }

    pub fn behavior(&self) -> Behavior {
        self.behavior
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn matchmakers(&self) -> &[PeerId] {
        &self.matchmakers
    }

    pub fn ledger(&self) -> &LedgerStore {
        &self.ledger
    }

    pub fn orders(&self) -> impl Iterator<Item = &OwnOrder> {
        self.orders.values()
    }

    pub fn order(&self, id: &OrderId) -> Option<&OwnOrder> {
        self.orders.get(id)
    }

    pub fn trades(&self) -> impl Iterator<Item = &TradeState> {
        self.trades.values()
    }

    pub fn live_requests(&self) -> usize {
        self.msg.requests.len()
    }

    /// Trades not yet done or aborted.
    pub fn open_trades(&self) -> usize {
        self.trades.values().filter(|t| t.phase.is_open()).count()
    }

    /// Signs a new order, records it on the own chain and sends it to the
    /// matchmakers.
    pub fn create_order(
        &mut self,
        ctx: &mut dyn Context,
        pair: AssetPair,
        is_offer: bool,
        timeout: SimDuration,
    ) -> Result<OrderSpec, OrderRejection> {
        let now = ctx.now();
        let spec = OrderSpec::new_signed(&self.msg.identity, self.next_order_seq + 1, now, timeout, is_offer, pair);
        validate(&spec, now)?;
        self.next_order_seq += 1;
        let payload = if spec.is_offer {
            TxPayload::Offer { order: spec.clone() }
        } else {
            TxPayload::Request { order: spec.clone() }
        };
        let block = self.ledger.append_unilateral(&self.msg.identity, payload).expect("unilateral order block");
        ctx.publish(&block);
        let id = spec.id();
        ctx.observe(Observation::OrderCreated {
            order: id,
            pair: spec.pair.key(),
            is_offer: spec.is_offer,
            base_qty: spec.pair.base_qty,
            quote_qty: spec.pair.quote_qty,
        });
        for mm in self.matchmakers.clone() {
            let body = Message::Order { order: spec.clone(), block: Some(block.clone()) };
            self.msg.notify(ctx, mm, body);
        }
        self.orders.insert(
            id,
            OwnOrder {
                spec: spec.clone(),
                status: OrderStatus::Open,
                mpq: MatchPriorityQueue::new(id),
                window: Window::NotStarted,
                negotiation: None,
                retry_timer: None,
            },
        );
        Ok(spec)
    }

    /// Withdraws an unfulfilled order. Returns false for unknown or closed
    /// orders.
    pub fn cancel_order(&mut self, ctx: &mut dyn Context, id: &OrderId) -> bool {
        match self.orders.get(id) {
            Some(o) if o.status == OrderStatus::Open => {}
            _ => return false,
        }
        for mm in self.matchmakers.clone() {
            self.msg.notify(ctx, mm, Message::CancelOrder { order: *id });
        }
        self.close_order(ctx, id, OrderStatus::Closed(RejectReason::Cancelled));
        true
    }

    fn close_order(&mut self, ctx: &mut dyn Context, id: &OrderId, status: OrderStatus) {
        let Some(o) = self.orders.get_mut(id) else { return };
        o.status = status;
        if let Some(t) = o.retry_timer.take() {
            ctx.cancel_timer(t);
        }
        o.mpq = MatchPriorityQueue::new(*id);
        match status {
            OrderStatus::Fulfilled => ctx.observe(Observation::OrderFulfilled { order: *id }),
            OrderStatus::Closed(reason) => ctx.observe(Observation::OrderClosed { order: *id, reason }),
            OrderStatus::Open => {}
        }
    }

    /// Why the order cannot trade, closing it first if it just expired.
    fn unavailable(&mut self, ctx: &mut dyn Context, id: &OrderId) -> Option<RejectReason> {
        let now = ctx.now();
        let o = self.orders.get(id)?;
        match o.status {
            OrderStatus::Fulfilled => return Some(RejectReason::Fulfilled),
            OrderStatus::Closed(r) => return Some(r),
            OrderStatus::Open => {}
        }
        if o.spec.is_expired(now) {
            self.close_order(ctx, id, OrderStatus::Closed(RejectReason::Expired));
            return Some(RejectReason::Expired);
        }
        None
    }

    fn unavailable_or_unknown(&mut self, ctx: &mut dyn Context, id: &OrderId) -> Option<RejectReason> {
        if !self.orders.contains_key(id) {
            return Some(RejectReason::Cancelled);
        }
        self.unavailable(ctx, id)
    }

    /// RESTRICT(t): whether `peer` holds fewer than `t` responsibilities.
    /// Without an audit view the peer is refused.
    fn responsibility_ok(&self, ctx: &dyn Context, peer: &PeerId) -> bool {
        let Some(t) = self.config.restrict else { return true };
        if self.config.at_own_risk {
            return true;
        }
        let Some(store) = ctx.ledger_oracle() else { return false };
        let ext = ctx.chains().at(ctx.now());
        audit_responsibilities(peer, store, &ext) < t as usize
    }

    /// Publication-time guard under RESTRICT(t).
    fn exposure_ok(&self, ctx: &dyn Context, peer: &PeerId) -> bool {
        let Some(t) = self.config.restrict else { return true };
        if self.config.at_own_risk {
            return true;
        }
        let Some(store) = ctx.ledger_oracle() else { return false };
        let ext = ctx.chains().at(ctx.now());
        open_obligations(peer, store, &ext, ctx.now(), self.config.stale_after()) < t as usize
    }

    pub(crate) fn on_message(&mut self, ctx: &mut dyn Context, env: Envelope) {
        let Envelope { sender, request_id, reply_to, body, .. } = env;
        match body {
            Message::Match { order, matched } => self.on_match(ctx, sender, order, matched),
            Message::TradeProposal(p) => self.on_proposal(ctx, sender, request_id, p),
            Message::TradeAccept(p) => self.on_accept(ctx, sender, reply_to, p),
            Message::Negotiate(p) => self.on_negotiate(ctx, sender, request_id, reply_to, p),
            Message::TradeReject { proposal, reason } => self.on_trade_reject(ctx, sender, reply_to, proposal, reason),
            Message::PartialAgreement(a) => self.on_partial_agreement(ctx, sender, request_id, a),
            Message::Agreement { agreement, signature } => {
                self.on_agreement(ctx, sender, reply_to, agreement, signature)
            }
            Message::Block { block } => self.on_block(ctx, sender, request_id, block),
            Message::Payment { block } => self.on_payment(ctx, sender, request_id, block),
            Message::BlockAck { of, response, signature } => {
                self.on_block_ack(ctx, sender, reply_to, of, response, signature)
            }
            Message::PartialTradeDone { done } => self.on_partial_done(ctx, sender, request_id, done),
            Message::TradeDone { done, agreement, signature } => {
                self.on_trade_done(ctx, sender, reply_to, done, agreement, signature)
            }
            Message::Order { .. } | Message::CancelOrder { .. } | Message::RejectMatch { .. } => {}
        }
    }

    pub(crate) fn on_timer(&mut self, ctx: &mut dyn Context, id: TimerId, timer: Timer) {
        match timer {
            Timer::MatchWindow { order } => {
                if let Some(o) = self.orders.get_mut(&order) {
                    o.window = Window::Closed;
                }
                self.select(ctx, order);
            }
            Timer::MatchRetry { order } => {
                match self.orders.get_mut(&order) {
                    Some(o) if o.retry_timer == Some(id) => o.retry_timer = None,
                    _ => return,
                }
                self.select(ctx, order);
            }
            Timer::RequestTimeout { request } => self.on_request_timeout(ctx, request, id),
            Timer::ProposalExpiry { initiator_order } => {
                if self.pending.get(&initiator_order).map(|p| p.timer) == Some(id) {
                    let p = self.pending.remove(&initiator_order).expect("present");
                    self.release(ctx, p.proposal.counterparty_order, p.reserved);
                }
            }
            Timer::PublicationDeadline { trade } => {
                let due = matches!(self.trades.get(&trade), Some(t) if t.timer == Some(id) && t.phase == Phase::Agreed);
                if due {
                    self.abort_trade(ctx, trade, "publication deadline passed");
                }
            }
            Timer::PaymentPoll { trade } => {
                let held = self.trades.get_mut(&trade).and_then(|t| t.incoming.take());
                if let Some((block, rid)) = held {
                    self.check_incoming(ctx, trade, block, rid);
                }
            }
            Timer::PaymentWait { trade } => {
                let stalled = matches!(self.trades.get(&trade),
                    Some(t) if t.timer == Some(id) && t.phase == Phase::Executing && !t.my_turn() && !t.payments_complete());
                if stalled {
                    self.abort_trade(ctx, trade, "payment not received");
                }
            }
            Timer::TransferRetry { trade } => self.send_payment(ctx, trade),
        }
    }

    fn on_request_timeout(&mut self, ctx: &mut dyn Context, request: u64, timer: TimerId) {
        let retransmit = self.config.retransmit_timeout;
        let attempts = self.config.retransmit_attempts;
        let Some(req) = self.msg.on_timeout(ctx, request, timer, retransmit, attempts) else { return };
        match req.tag {
            RequestTag::Negotiation(nid) => {
                if let Some(n) = self.negotiations.get(&nid) {
                    let body =
                        Message::TradeReject { proposal: n.proposal.clone(), reason: RejectReason::NegotiationFailed };
                    let to = n.counterparty();
                    self.msg.notify(ctx, to, body);
                }
                self.fail_negotiation(ctx, nid, false);
            }
            RequestTag::Trade(tid) => {
                let Some(t) = self.trades.get_mut(&tid) else { return };
                match (req.kind, &t.phase) {
                    (RequestKind::Ledger, Phase::Agreed) => self.abort_trade(ctx, tid, "agreement not countersigned"),
                    (RequestKind::Done, Phase::Finalizing) => {
                        // Both sides paid in full; the Payment blocks show it.
                        t.phase = Phase::Done;
                        self.complete(ctx, tid);
                    }
                    _ => {}
                }
            }
        }
    }

    // Phase I: matches and counterparty selection.

    fn on_match(&mut self, ctx: &mut dyn Context, mm: PeerId, order: OrderId, matched: OrderSpec) {
        if !self.matchmakers.contains(&mm) {
            return;
        }
        let now = ctx.now();
        if let Some(reason) = self.unavailable_or_unknown(ctx, &order) {
            let body = Message::RejectMatch { order, matched: matched.id(), reason };
            self.msg.notify(ctx, mm, body);
            return;
        }
        let o = self.orders.get_mut(&order).expect("available");
        let sound = matched.creator != self.msg.id
            && matched.crosses(&o.spec)
            && !matched.is_expired(now)
            && matched.signature.signer == matched.creator
            && matched.signature.verify(&matched.digest());
        if !sound {
            let body = Message::RejectMatch { order, matched: matched.id(), reason: RejectReason::NegotiationFailed };
            self.msg.notify(ctx, mm, body);
            return;
        }
        let entry = MatchQueueEntry::new(&o.spec, matched, mm);
        o.mpq.push(entry);
        match o.window {
            Window::NotStarted => {
                o.window = Window::Open;
                ctx.set_timer(self.config.match_window, Timer::MatchWindow { order });
            }
            Window::Open => {}
            Window::Closed => self.select(ctx, order),
        }
    }

    fn reject_match(&mut self, ctx: &mut dyn Context, order: OrderId, entry: &MatchQueueEntry, reason: RejectReason) {
        for mm in &entry.nominated_by {
            let body = Message::RejectMatch { order, matched: entry.matched.id(), reason };
            self.msg.notify(ctx, *mm, body);
        }
    }

    /// Picks the next counterparty for `order` and proposes a trade, unless
    /// a negotiation is running or nothing is eligible yet.
    fn select(&mut self, ctx: &mut dyn Context, oid: OrderId) {
        loop {
            if self.unavailable(ctx, &oid).is_some() {
                return;
            }
            let now = ctx.now();
            let w_m = self.config.match_window;
            let o = self.orders.get_mut(&oid).expect("available");
            if o.negotiation.is_some() || o.retry_timer.is_some() || o.window != Window::Closed {
                return;
            }
            let Some(head) = o.mpq.peek() else { return };
            if head.not_before > now {
                let after = head.not_before - now;
                o.retry_timer = Some(ctx.set_timer(after, Timer::MatchRetry { order: oid }));
                return;
            }
            let remaining = o.spec.remaining();
            if remaining == 0 {
                // Everything is reserved by trades in progress.
                o.retry_timer = Some(ctx.set_timer(w_m, Timer::MatchRetry { order: oid }));
                return;
            }
            let entry = o.mpq.pop().expect("peeked");
            if entry.retries > self.config.max_match_retries || entry.matched.is_expired(now) {
                self.reject_match(ctx, oid, &entry, RejectReason::NegotiationFailed);
                continue;
            }
            let counterparty = entry.matched.creator;
            if !self.responsibility_ok(ctx, &counterparty) {
                let o = self.orders.get_mut(&oid).expect("available");
                o.mpq.requeue(entry, now + w_m);
                continue;
            }
            let qty = remaining.min(entry.matched.remaining());
            let pair = AssetPair {
                base: entry.matched.pair.base.clone(),
                quote: entry.matched.pair.quote.clone(),
                base_qty: qty,
                quote_qty: quote_at(&entry.matched, qty),
            };
            let o = self.orders.get_mut(&oid).expect("available");
            let n = self.config.payments_per_side as u64;
            // Every increment must move at least one unit.
            if qty < n
                || pair.quote_qty < n
                || !price_acceptable(&o.spec, &pair)
                || !price_acceptable(&entry.matched, &pair)
            {
                self.reject_match(ctx, oid, &entry, RejectReason::NegotiationFailed);
                continue;
            }
            o.spec.reserve(qty).expect("qty within remaining");
            let proposal = Proposal {
                initiator_order: oid,
                counterparty_order: entry.matched.id(),
                pair,
                initiator_is_offer: o.spec.is_offer,
            };
            self.next_negotiation += 1;
            let nid = self.next_negotiation;
            o.negotiation = Some(nid);
            ctx.observe(Observation::TradeProposed {
                initiator_order: oid,
                counterparty_order: proposal.counterparty_order,
                qty,
            });
            self.negotiations.insert(
                nid,
                Negotiation { order: oid, entry, proposal: proposal.clone(), reserved: qty, partial: None },
            );
            let timeout = self.config.negotiation_timeout;
            self.msg.request(
                ctx,
                counterparty,
                Message::TradeProposal(proposal),
                RequestKind::Proposal,
                RequestTag::Negotiation(nid),
                timeout,
            );
            return;
        }
    }

    /// Ends a negotiation without a trade: releases the reservation, then
    /// requeues or drops the nomination and moves on.
    fn fail_negotiation(&mut self, ctx: &mut dyn Context, nid: u64, requeue: bool) {
        let Some(n) = self.negotiations.remove(&nid) else { return };
        self.msg.cancel_tag(ctx, RequestTag::Negotiation(nid));
        let now = ctx.now();
        let w_m = self.config.match_window;
        if let Some(o) = self.orders.get_mut(&n.order) {
            o.negotiation = None;
            let _ = o.spec.release(n.reserved);
            if requeue && o.status == OrderStatus::Open {
                o.mpq.requeue(n.entry, now + w_m);
            } else {
                self.reject_match(ctx, n.order, &n.entry, RejectReason::NegotiationFailed);
            }
        }
        self.select(ctx, n.order);
    }

    fn release(&mut self, ctx: &mut dyn Context, order: OrderId, qty: u64) {
        if let Some(o) = self.orders.get_mut(&order) {
            let _ = o.spec.release(qty);
        }
        self.select(ctx, order);
    }

    // Phase II: negotiation.

    fn evaluate(&mut self, ctx: &mut dyn Context, sender: PeerId, p: &Proposal) -> Result<Proposal, RejectReason> {
        if p.initiator_order.creator != sender || p.counterparty_order.creator != self.msg.id {
            return Err(RejectReason::NegotiationFailed);
        }
        if let Some(r) = self.unavailable_or_unknown(ctx, &p.counterparty_order) {
            return Err(r);
        }
        if !self.responsibility_ok(ctx, &sender) {
            return Err(RejectReason::ResponsibilityHeld);
        }
        if let Some(old) = self.pending.remove(&p.initiator_order) {
            ctx.cancel_timer(old.timer);
            if let Some(o) = self.orders.get_mut(&old.proposal.counterparty_order) {
                let _ = o.spec.release(old.reserved);
            }
        }
        let o = &self.orders[&p.counterparty_order];
        let spec = &o.spec;
        if p.initiator_is_offer == spec.is_offer || p.pair.key() != spec.pair.key() || p.pair.base_qty == 0 {
            return Err(RejectReason::NegotiationFailed);
        }
        if !price_acceptable(spec, &p.pair) {
            return Err(RejectReason::NegotiationFailed);
        }
        let remaining = spec.remaining();
        if remaining == 0 {
            return Err(if spec.reserved_qty > 0 { RejectReason::AssetsReserved } else { RejectReason::Fulfilled });
        }
        if p.pair.base_qty <= remaining {
            return Ok(p.clone());
        }
        let mut counter = p.clone();
        counter.pair.base_qty = remaining;
        counter.pair.quote_qty = p.pair.quote_for(remaining);
        if counter.pair.quote_qty == 0 || !price_acceptable(spec, &counter.pair) {
            return Err(RejectReason::NegotiationFailed);
        }
        Ok(counter)
    }

    fn on_proposal(&mut self, ctx: &mut dyn Context, sender: PeerId, rid: u64, p: Proposal) {
        if self.behavior == Behavior::NegotiationStaller || self.msg.resend_reply(ctx, sender, rid) {
            return;
        }
        match self.evaluate(ctx, sender, &p) {
            Err(reason) => self.msg.reply(ctx, sender, rid, Message::TradeReject { proposal: p, reason }),
            Ok(accepted) => {
                let qty = accepted.pair.base_qty;
                let o = self.orders.get_mut(&accepted.counterparty_order).expect("evaluated");
                o.spec.reserve(qty).expect("qty within remaining");
                let timer = ctx.set_timer(
                    self.config.negotiation_timeout.saturating_mul(2),
                    Timer::ProposalExpiry { initiator_order: accepted.initiator_order },
                );
                self.pending.insert(
                    accepted.initiator_order,
                    PendingProposal { proposal: accepted.clone(), reserved: qty, timer },
                );
                let body = if accepted == p { Message::TradeAccept(accepted) } else { Message::Negotiate(accepted) };
                self.msg.reply(ctx, sender, rid, body);
            }
        }
    }

    fn negotiation_for(&mut self, ctx: &mut dyn Context, sender: PeerId, reply_to: Option<u64>) -> Option<u64> {
        match self.msg.answer(ctx, sender, reply_to)?.tag {
            RequestTag::Negotiation(nid) if self.negotiations.contains_key(&nid) => Some(nid),
            _ => None,
        }
    }

    fn on_accept(&mut self, ctx: &mut dyn Context, sender: PeerId, reply_to: Option<u64>, p: Proposal) {
        let Some(nid) = self.negotiation_for(ctx, sender, reply_to) else { return };
        if self.negotiations[&nid].proposal != p {
            self.fail_negotiation(ctx, nid, false);
            return;
        }
        self.send_partial_agreement(ctx, nid);
    }

    fn on_negotiate(&mut self, ctx: &mut dyn Context, sender: PeerId, rid: u64, reply_to: Option<u64>, p: Proposal) {
        let Some(nid) = self.negotiation_for(ctx, sender, reply_to) else { return };
        let n = &self.negotiations[&nid];
        let own = &self.orders[&n.order].spec;
        let sound = p.initiator_order == n.proposal.initiator_order
            && p.counterparty_order == n.proposal.counterparty_order
            && p.initiator_is_offer == n.proposal.initiator_is_offer
            && p.pair.key() == n.proposal.pair.key()
            && p.pair.base_qty >= self.config.payments_per_side as u64
            && p.pair.quote_qty >= self.config.payments_per_side as u64
            && p.pair.base_qty <= n.reserved
            && price_acceptable(own, &p.pair);
        if !sound {
            let body = Message::TradeReject { proposal: p, reason: RejectReason::NegotiationFailed };
            self.msg.reply(ctx, sender, rid, body);
            self.fail_negotiation(ctx, nid, false);
            return;
        }
        let n = self.negotiations.get_mut(&nid).expect("present");
        let surplus = n.reserved - p.pair.base_qty;
        n.reserved = p.pair.base_qty;
        n.proposal = p.clone();
        let order = n.order;
        if let Some(o) = self.orders.get_mut(&order) {
            let _ = o.spec.release(surplus);
        }
        self.msg.reply(ctx, sender, rid, Message::TradeAccept(p));
        self.send_partial_agreement(ctx, nid);
    }

    fn on_trade_reject(
        &mut self,
        ctx: &mut dyn Context,
        sender: PeerId,
        reply_to: Option<u64>,
        proposal: Proposal,
        reason: RejectReason,
    ) {
        if let Some(nid) = self.negotiation_for(ctx, sender, reply_to) {
            let requeue = matches!(reason, RejectReason::AssetsReserved | RejectReason::ResponsibilityHeld);
            self.fail_negotiation(ctx, nid, requeue);
            return;
        }
        // An initiator calling off a proposal or agreement we hold.
        if proposal.initiator_order.creator != sender {
            return;
        }
        if let Some(p) = self.pending.remove(&proposal.initiator_order) {
            ctx.cancel_timer(p.timer);
            self.release(ctx, p.proposal.counterparty_order, p.reserved);
        }
        if let Some(tid) = self.awaiting.remove(&proposal.initiator_order) {
            if matches!(self.trades.get(&tid), Some(t) if t.phase == Phase::Agreed) {
                self.abort_trade(ctx, tid, "initiator withdrew");
            }
        }
    }

    // Phase III: agreement.

    fn send_partial_agreement(&mut self, ctx: &mut dyn Context, nid: u64) {
        let now = ctx.now();
        let me = self.msg.id;
        let n = self.negotiations.get_mut(&nid).expect("present");
        let p = &n.proposal;
        let counterparty = p.counterparty_order.creator;
        let (i_receives, c_receives) =
            if p.initiator_is_offer { (&p.pair.quote, &p.pair.base) } else { (&p.pair.base, &p.pair.quote) };
        let partial = AgreementTx {
            initiator: me,
            counterparty,
            initiator_order: p.initiator_order,
            counterparty_order: p.counterparty_order,
            pair: p.pair.clone(),
            initiator_is_offer: p.initiator_is_offer,
            payments_per_side: self.config.payments_per_side,
            publication_deadline: now + self.config.publication_deadline,
            initiator_wallet: WalletAddress::for_peer(i_receives, &me),
            counterparty_wallet: WalletAddress { chain: c_receives.clone(), address: [0; ADDRESS_LEN] },
            created_at: now,
        };
        n.partial = Some(partial.clone());
        let timeout = self.config.negotiation_timeout;
        self.msg.request(
            ctx,
            counterparty,
            Message::PartialAgreement(partial),
            RequestKind::Agreement,
            RequestTag::Negotiation(nid),
            timeout,
        );
    }

    fn on_partial_agreement(&mut self, ctx: &mut dyn Context, sender: PeerId, rid: u64, mut a: AgreementTx) {
        if self.behavior == Behavior::NegotiationStaller || self.msg.resend_reply(ctx, sender, rid) {
            return;
        }
        let Some(pp) = self.pending.remove(&a.initiator_order) else { return };
        ctx.cancel_timer(pp.timer);
        let me = self.msg.id;
        let p = &pp.proposal;
        let sound = a.initiator == sender
            && a.counterparty == me
            && a.initiator_order == p.initiator_order
            && a.counterparty_order == p.counterparty_order
            && a.pair == p.pair
            && a.initiator_is_offer == p.initiator_is_offer
            && a.payments_per_side >= 1
            && a.pair.base_qty >= a.payments_per_side as u64
            && a.pair.quote_qty >= a.payments_per_side as u64
            && a.publication_deadline > ctx.now()
            && a.initiator_wallet.chain == *a.pay_asset(&me)
            && a.counterparty_wallet.chain == *a.pay_asset(&sender);
        if !sound {
            let body = Message::TradeReject { proposal: pp.proposal.clone(), reason: RejectReason::NegotiationFailed };
            self.msg.reply(ctx, sender, rid, body);
            self.release(ctx, pp.proposal.counterparty_order, pp.reserved);
            return;
        }
        a.counterparty_wallet = WalletAddress::for_peer(&a.counterparty_wallet.chain, &me);
        let signature = self.msg.identity.sign(&a.digest());
        let mut t = TradeState::new(Role::Counterparty, me, a.clone());
        let until = a.publication_deadline - ctx.now();
        t.timer = Some(ctx.set_timer(until, Timer::PublicationDeadline { trade: t.id }));
        self.awaiting.insert(a.initiator_order, t.id);
        self.trades.insert(t.id, t);
        self.msg.reply(ctx, sender, rid, Message::Agreement { agreement: a, signature });
    }

    fn on_agreement(
        &mut self,
        ctx: &mut dyn Context,
        sender: PeerId,
        reply_to: Option<u64>,
        a: AgreementTx,
        signature: Signature,
    ) {
        let Some(nid) = self.negotiation_for(ctx, sender, reply_to) else { return };
        let n = self.negotiations.remove(&nid).expect("present");
        let now = ctx.now();
        let w_m = self.config.match_window;
        let order = n.order;
        if let Some(o) = self.orders.get_mut(&order) {
            o.negotiation = None;
        }
        let refuse = |this: &mut Self, ctx: &mut dyn Context, n: Negotiation, reason: RejectReason| {
            if let Some(o) = this.orders.get_mut(&n.order) {
                let _ = o.spec.release(n.reserved);
                if reason == RejectReason::ResponsibilityHeld {
                    o.mpq.requeue(n.entry.clone(), now + w_m);
                }
            }
            if reason != RejectReason::ResponsibilityHeld {
                this.reject_match(ctx, n.order, &n.entry, reason);
            }
            let body = Message::TradeReject { proposal: n.proposal.clone(), reason };
            this.msg.notify(ctx, n.counterparty(), body);
            this.select(ctx, n.order);
        };
        if self.behavior == Behavior::AgreementWithholder {
            // Keeps the signed terms and never publishes them.
            if let Some(o) = self.orders.get_mut(&order) {
                let _ = o.spec.release(n.reserved);
            }
            self.select(ctx, order);
            return;
        }
        let Some(partial) = &n.partial else { return };
        let mut expected = partial.clone();
        expected.counterparty_wallet = a.counterparty_wallet.clone();
        let sound = a == expected
            && a.counterparty_wallet.chain == partial.counterparty_wallet.chain
            && signature.signer == sender
            && signature.verify(&a.digest());
        if !sound || now > a.publication_deadline {
            refuse(self, ctx, n, RejectReason::NegotiationFailed);
            return;
        }
        if !self.exposure_ok(ctx, &sender) {
            refuse(self, ctx, n, RejectReason::ResponsibilityHeld);
            return;
        }
        let block = self
            .ledger
            .initiate_bilateral(&self.msg.identity, sender, TxPayload::Agreement(a.clone()))
            .expect("agreement terms checked");
        ctx.publish(&block);
        let mut t = TradeState::new(Role::Initiator, self.msg.id, a);
        t.agreement_block = Some(block.block_ref());
        let tid = t.id;
        self.by_block.insert(block.hash(), tid);
        self.trades.insert(tid, t);
        let timeout = self.config.retransmit_timeout;
        self.msg.request(ctx, sender, Message::Block { block }, RequestKind::Ledger, RequestTag::Trade(tid), timeout);
        self.select(ctx, order);
    }

    // Ledger plumbing.

    fn on_block(&mut self, ctx: &mut dyn Context, sender: PeerId, rid: u64, block: BlockPartition) {
        if block.creator != sender || self.msg.resend_reply(ctx, sender, rid) {
            return;
        }
        match &block.payload {
            TxPayload::Agreement(a) => {
                let tid = a.digest();
                let ok = matches!(self.trades.get(&tid),
                    Some(t) if t.role == Role::Counterparty && t.phase == Phase::Agreed && a.initiator == sender);
                if !ok || self.behavior == Behavior::AgreementWithholder || ctx.now() > a.publication_deadline {
                    return;
                }
                let Ok((response, signature)) = self.ledger.countersign(&self.msg.identity, &block, |_| Ok(())) else {
                    return;
                };
                ctx.publish(&response);
                let initiator_order = a.initiator_order;
                let t = self.trades.get_mut(&tid).expect("present");
                t.agreement_block = Some(block.block_ref());
                t.phase = Phase::Executing;
                if let Some(old) = t.timer.take() {
                    ctx.cancel_timer(old);
                }
                t.timer = Some(ctx.set_timer(self.config.payment_wait_timeout, Timer::PaymentWait { trade: tid }));
                self.by_block.insert(block.hash(), tid);
                self.awaiting.remove(&initiator_order);
                let body = Message::BlockAck { of: block.block_ref(), response, signature };
                self.msg.reply(ctx, sender, rid, body);
            }
            TxPayload::TradeDone(d) => {
                let Some(&tid) = self.by_block.get(&d.trade_ref.hash) else { return };
                let t = &self.trades[&tid];
                let ok = t.role == Role::Counterparty
                    && t.phase == Phase::Done
                    && t.other() == sender
                    && t.agreement_block == Some(d.trade_ref)
                    && t.payment_refs == d.payment_refs;
                if !ok {
                    return;
                }
                let Ok((response, signature)) = self.ledger.countersign(&self.msg.identity, &block, |_| Ok(())) else {
                    return;
                };
                ctx.publish(&response);
                let body = Message::BlockAck { of: block.block_ref(), response, signature };
                self.msg.reply(ctx, sender, rid, body);
            }
            _ => {}
        }
    }

    fn on_block_ack(
        &mut self,
        ctx: &mut dyn Context,
        sender: PeerId,
        reply_to: Option<u64>,
        of: BlockRef,
        response: BlockPartition,
        signature: Signature,
    ) {
        let Some(req) = self.msg.answer(ctx, sender, reply_to) else { return };
        let RequestTag::Trade(tid) = req.tag else { return };
        if of.creator != self.msg.id || self.ledger.complete_bilateral(&of, &response, signature).is_err() {
            return;
        }
        let own = self.ledger.get(&of.creator, of.seq).expect("own partition").clone();
        ctx.publish(&own);
        ctx.publish(&response);
        if let TxPayload::Agreement(a) = &own.payload {
            let Some(t) = self.trades.get_mut(&tid) else { return };
            if t.phase != Phase::Agreed {
                return;
            }
            t.phase = Phase::Executing;
            ctx.observe(Observation::TradeEstablished {
                trade: tid,
                initiator: a.initiator,
                counterparty: a.counterparty,
            });
            self.send_payment(ctx, tid);
        }
    }

    // Phase IV: payments.

    fn arm_wait(&mut self, ctx: &mut dyn Context, tid: Hash) {
        let wait = self.config.payment_wait_timeout;
        let t = self.trades.get_mut(&tid).expect("present");
        if let Some(old) = t.timer.take() {
            ctx.cancel_timer(old);
        }
        if !t.payments_complete() && !t.my_turn() {
            t.timer = Some(ctx.set_timer(wait, Timer::PaymentWait { trade: tid }));
        }
    }

    fn send_payment(&mut self, ctx: &mut dyn Context, tid: Hash) {
        let me = self.msg.id;
        let Some(t) = self.trades.get_mut(&tid) else { return };
        if !t.my_turn() || self.behavior == Behavior::PaymentWithholder {
            return;
        }
        let (_, index) = t.next_payment().expect("my turn");
        let a = &t.agreement;
        let amount = a.increment(&me, index);
        let asset = a.pay_asset(&me).clone();
        let from = WalletAddress::for_peer(&asset, &me);
        let to = a.destination(&me).clone();
        let other = t.other();
        let txid = match ctx.transfer(&from, &to, amount) {
            Ok(txid) => txid,
            Err(e) => {
                t.transfer_attempts += 1;
                if t.transfer_attempts >= self.config.transfer_attempts {
                    self.abort_trade(ctx, tid, &format!("transfer failed: {e}"));
                } else {
                    let backoff = self.config.transfer_backoff.saturating_mul(1 << (t.transfer_attempts - 1));
                    ctx.set_timer(backoff, Timer::TransferRetry { trade: tid });
                }
                return;
            }
        };
        t.transfer_attempts = 0;
        let payment = PaymentTx {
            trade_ref: t.agreement_block.expect("established"),
            payer: me,
            amount,
            external_txid: txid.clone(),
            payment_index: index,
        };
        let block = self
            .ledger
            .initiate_bilateral(&self.msg.identity, other, TxPayload::Payment(payment))
            .expect("payment block");
        ctx.publish(&block);
        t.payment_refs.push(block.block_ref());
        t.txids.push(txid.clone());
        t.step += 1;
        ctx.observe(Observation::PaymentSent {
            trade: tid,
            payer: me,
            receiver: other,
            index,
            amount,
            asset,
            txid: txid.txid,
        });
        let timeout = self.config.retransmit_timeout;
        self.msg.request(ctx, other, Message::Payment { block }, RequestKind::Payment, RequestTag::Trade(tid), timeout);
        self.arm_wait(ctx, tid);
    }

    fn on_payment(&mut self, ctx: &mut dyn Context, sender: PeerId, rid: u64, block: BlockPartition) {
        if self.msg.resend_reply(ctx, sender, rid) {
            return;
        }
        let TxPayload::Payment(p) = &block.payload else { return };
        if block.creator != sender || p.payer != sender {
            return;
        }
        let Some(&tid) = self.by_block.get(&p.trade_ref.hash) else { return };
        let t = &self.trades[&tid];
        if t.phase != Phase::Executing || t.agreement_block != Some(p.trade_ref) {
            return;
        }
        if matches!(&t.incoming, Some((held, _)) if held.hash() == block.hash()) {
            return;
        }
        if t.next_payment() != Some((sender, p.payment_index)) {
            return;
        }
        self.check_incoming(ctx, tid, block, rid);
    }

    /// Verifies an incoming payment against the agreement and the external
    /// chain. Unconfirmed transfers are polled again; a mismatch ends the
    /// trade without further payments.
    fn check_incoming(&mut self, ctx: &mut dyn Context, tid: Hash, block: BlockPartition, rid: u64) {
        let TxPayload::Payment(p) = &block.payload else { return };
        let Some(t) = self.trades.get_mut(&tid) else { return };
        if t.phase != Phase::Executing {
            return;
        }
        let a = &t.agreement;
        let payer = p.payer;
        if p.amount != a.increment(&payer, p.payment_index) || p.external_txid.chain != *a.pay_asset(&payer) {
            self.abort_trade(ctx, tid, "invalid payment claim");
            return;
        }
        let status = ctx.chains().at(ctx.now()).lookup(&p.external_txid);
        match status {
            TxStatus::Confirmed(tx) => {
                if tx.amount != p.amount || tx.to != *a.destination(&payer) {
                    self.abort_trade(ctx, tid, "payment does not match agreement");
                    return;
                }
            }
            TxStatus::Pending(_) | TxStatus::Unknown => {
                t.incoming = Some((block, rid));
                ctx.set_timer(self.config.payment_poll_interval, Timer::PaymentPoll { trade: tid });
                return;
            }
        }
        let Ok((response, signature)) = self.ledger.countersign(&self.msg.identity, &block, |_| Ok(())) else {
            return;
        };
        ctx.publish(&response);
        let t = self.trades.get_mut(&tid).expect("present");
        t.payment_refs.push(block.block_ref());
        t.txids.push(p.external_txid.clone());
        t.step += 1;
        t.incoming = None;
        ctx.observe(Observation::PaymentVerified { trade: tid, payer, index: p.payment_index });
        let body = Message::BlockAck { of: block.block_ref(), response, signature };
        self.msg.reply(ctx, payer, rid, body);
        let t = &self.trades[&tid];
        let (complete, mine, role) = (t.payments_complete(), t.my_turn(), t.role);
        if complete {
            if let Some(old) = self.trades.get_mut(&tid).and_then(|t| t.timer.take()) {
                ctx.cancel_timer(old);
            }
            if role == Role::Initiator {
                self.construct_trade_done(ctx, tid);
            }
        } else if mine {
            self.send_payment(ctx, tid);
        } else {
            self.arm_wait(ctx, tid);
        }
    }

    // Phase V: finalization.

    fn construct_trade_done(&mut self, ctx: &mut dyn Context, tid: Hash) {
        let t = self.trades.get_mut(&tid).expect("present");
        t.phase = Phase::Finalizing;
        let done =
            TradeDoneTx { trade_ref: t.agreement_block.expect("established"), payment_refs: t.payment_refs.clone() };
        let other = t.other();
        let timeout = self.config.retransmit_timeout;
        self.msg.request(
            ctx,
            other,
            Message::PartialTradeDone { done },
            RequestKind::Done,
            RequestTag::Trade(tid),
            timeout,
        );
    }

    fn on_partial_done(&mut self, ctx: &mut dyn Context, sender: PeerId, rid: u64, done: TradeDoneTx) {
        if self.msg.resend_reply(ctx, sender, rid) {
            return;
        }
        let Some(&tid) = self.by_block.get(&done.trade_ref.hash) else { return };
        let t = &self.trades[&tid];
        let ok = t.role == Role::Counterparty
            && t.phase == Phase::Executing
            && t.payments_complete()
            && t.other() == sender
            && t.agreement_block == Some(done.trade_ref)
            && t.payment_refs == done.payment_refs;
        if !ok {
            return;
        }
        let signature = self.msg.identity.sign(&trade_done_digest(&done));
        let agreement = t.agreement.clone();
        self.trades.get_mut(&tid).expect("present").phase = Phase::Done;
        for mm in self.matchmakers.clone() {
            let body = Message::TradeDone { done: done.clone(), agreement: agreement.clone(), signature };
            self.msg.notify(ctx, mm, body);
        }
        self.msg.reply(ctx, sender, rid, Message::TradeDone { done, agreement, signature });
        self.settle(ctx, tid);
    }

    fn on_trade_done(
        &mut self,
        ctx: &mut dyn Context,
        sender: PeerId,
        reply_to: Option<u64>,
        done: TradeDoneTx,
        agreement: AgreementTx,
        signature: Signature,
    ) {
        let Some(req) = self.msg.answer(ctx, sender, reply_to) else { return };
        let RequestTag::Trade(tid) = req.tag else { return };
        let Some(t) = self.trades.get(&tid) else { return };
        let ok = t.phase == Phase::Finalizing
            && agreement == t.agreement
            && t.agreement_block == Some(done.trade_ref)
            && t.payment_refs == done.payment_refs
            && signature.signer == sender
            && signature.verify(&trade_done_digest(&done));
        if !ok {
            return;
        }
        for mm in self.matchmakers.clone() {
            let body = Message::TradeDone { done: done.clone(), agreement: agreement.clone(), signature };
            self.msg.notify(ctx, mm, body);
        }
        let block = self
            .ledger
            .initiate_bilateral(&self.msg.identity, sender, TxPayload::TradeDone(done))
            .expect("trade done block");
        ctx.publish(&block);
        let timeout = self.config.retransmit_timeout;
        self.msg.request(ctx, sender, Message::Block { block }, RequestKind::Ledger, RequestTag::Trade(tid), timeout);
        self.trades.get_mut(&tid).expect("present").phase = Phase::Done;
        self.complete(ctx, tid);
    }

    /// Initiator-side completion: settles the order and reports the trade.
    fn complete(&mut self, ctx: &mut dyn Context, tid: Hash) {
        let t = &self.trades[&tid];
        ctx.observe(Observation::TradeCompleted {
            trade: tid,
            initiator: t.agreement.initiator,
            counterparty: t.agreement.counterparty,
            initiator_order: t.agreement.initiator_order,
            counterparty_order: t.agreement.counterparty_order,
            qty: t.qty(),
        });
        self.settle(ctx, tid);
    }

    /// Moves the trade's reservation to traded quantity.
    fn settle(&mut self, ctx: &mut dyn Context, tid: Hash) {
        let t = self.trades.get_mut(&tid).expect("present");
        if t.reservation_closed {
            return;
        }
        t.reservation_closed = true;
        if let Some(old) = t.timer.take() {
            ctx.cancel_timer(old);
        }
        let (order, qty) = (t.own_order(), t.qty());
        let Some(o) = self.orders.get_mut(&order) else { return };
        let _ = o.spec.settle_reserved(qty);
        if o.spec.is_fulfilled() && o.status == OrderStatus::Open {
            self.close_order(ctx, &order, OrderStatus::Fulfilled);
        }
    }

    fn abort_trade(&mut self, ctx: &mut dyn Context, tid: Hash, reason: &str) {
        let Some(t) = self.trades.get_mut(&tid) else { return };
        if !t.phase.is_open() {
            return;
        }
        t.phase = Phase::Aborted(reason.to_string());
        t.incoming = None;
        if let Some(old) = t.timer.take() {
            ctx.cancel_timer(old);
        }
        ctx.observe(Observation::TradeAborted { trade: tid, peer: self.msg.id, reason: reason.to_string() });
        self.msg.cancel_tag(ctx, RequestTag::Trade(tid));
        let t = &self.trades[&tid];
        self.awaiting.remove(&t.agreement.initiator_order);
        if !t.reservation_closed {
            let (order, qty) = (t.own_order(), t.qty());
            self.trades.get_mut(&tid).expect("present").reservation_closed = true;
            self.release(ctx, order, qty);
        }
    }
}
