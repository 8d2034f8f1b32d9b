use std::collections::HashMap;

use super::events::{Context, Observation, Timer, TimerId};
use super::matchmaker::Matchmaker;
use super::messages::{Envelope, Message};
use super::requests::{PendingRequest, RequestKind, RequestStore, RequestTag, TimeoutAction};
use super::trader::Trader;
use crate::crypto::{Identity, PeerId};
use crate::time::SimDuration;

/// Outgoing side shared by all peer roles: request ids, request stores and
/// the cache of sent responses used to answer duplicate requests.
#[derive(Debug)]
pub(crate) struct Messenger {
    pub identity: Identity,
    pub id: PeerId,
    next_request: u64,
    pub requests: RequestStore,
    replies: HashMap<(PeerId, u64), Envelope>,
}

impl Messenger {
    pub fn new(identity: Identity) -> Self {
        Messenger {
            id: identity.peer_id(),
            identity,
            next_request: 0,
            requests: RequestStore::new(),
            replies: HashMap::new(),
        }
    }

    fn next_id(&mut self) -> u64 {
        self.next_request += 1;
        self.next_request
    }

    /// Sends a message that expects no response.
    pub fn notify(&mut self, ctx: &mut dyn Context, to: PeerId, body: Message) {
        let id = self.next_id();
        ctx.send(Envelope::new_signed(&self.identity, to, id, None, body));
    }

    pub fn request(
        &mut self,
        ctx: &mut dyn Context,
        to: PeerId,
        body: Message,
        kind: RequestKind,
        tag: RequestTag,
        timeout: SimDuration,
    ) -> u64 {
        let id = self.next_id();
        let envelope = Envelope::new_signed(&self.identity, to, id, None, body);
        ctx.send(envelope.clone());
        let timer = ctx.set_timer(timeout, Timer::RequestTimeout { request: id });
        self.requests.insert(id, PendingRequest { kind, tag, envelope, attempts: 1, timer });
        id
    }

    /// Answers request `request_id` of `to` and remembers the answer.
    pub fn reply(&mut self, ctx: &mut dyn Context, to: PeerId, request_id: u64, body: Message) {
        let id = self.next_id();
        let envelope = Envelope::new_signed(&self.identity, to, id, Some(request_id), body);
        self.replies.insert((to, request_id), envelope.clone());
        ctx.send(envelope);
    }

    /// Resends the cached answer to a repeated request.
    pub fn resend_reply(&self, ctx: &mut dyn Context, from: PeerId, request_id: u64) -> bool {
        match self.replies.get(&(from, request_id)) {
            Some(env) => {
                ctx.send(env.clone());
                true
            }
            None => false,
        }
    }

    /// Consumes the request a response from `from` answers.
    pub fn answer(&mut self, ctx: &mut dyn Context, from: PeerId, reply_to: Option<u64>) -> Option<PendingRequest> {
        let id = reply_to?;
        if self.requests.get(id)?.envelope.recipient != from {
            return None;
        }
        let req = self.requests.take(id)?;
        ctx.cancel_timer(req.timer);
        Some(req)
    }

    /// Retransmits or gives up on a timed-out request. Returns the request
    /// when it was abandoned.
    pub fn on_timeout(
        &mut self,
        ctx: &mut dyn Context,
        id: u64,
        timer: TimerId,
        retransmit_after: SimDuration,
        max_attempts: u32,
    ) -> Option<PendingRequest> {
        match self.requests.on_timeout(id, timer, max_attempts) {
            TimeoutAction::Ignore => None,
            TimeoutAction::Resend(env) => {
                ctx.send(env);
                let t = ctx.set_timer(retransmit_after, Timer::RequestTimeout { request: id });
                self.requests.rearm(id, t);
                None
            }
            TimeoutAction::GiveUp(req) => {
                ctx.observe(Observation::RequestTimedOut {
                    peer: self.id,
                    kind: req.kind.as_str().to_string(),
                    to: req.envelope.recipient,
                });
                Some(req)
            }
        }
    }

    pub fn cancel_tag(&mut self, ctx: &mut dyn Context, tag: RequestTag) {
        for t in self.requests.drop_tag(tag) {
            ctx.cancel_timer(t);
        }
    }
}

/// A network participant.
#[derive(Debug)]
pub enum Peer {
    Trader(Box<Trader>),
    Matchmaker(Box<Matchmaker>),
}

impl Peer {
    pub fn id(&self) -> PeerId {
        match self {
            Peer::Trader(t) => t.id(),
            Peer::Matchmaker(m) => m.id(),
        }
    }

    /// Handles one delivered message. Envelopes with a bad signature or
    /// addressed to someone else are dropped.
    pub fn on_message(&mut self, ctx: &mut dyn Context, env: Envelope) {
        if env.recipient != self.id() || !env.verify() {
            log::debug!("{} dropped invalid {} envelope", self.id(), env.body.kind());
            return;
        }
        match self {
            Peer::Trader(t) => t.on_message(ctx, env),
            Peer::Matchmaker(m) => m.on_message(ctx, env),
        }
    }

    pub fn on_timer(&mut self, ctx: &mut dyn Context, id: TimerId, timer: Timer) {
        match self {
            Peer::Trader(t) => t.on_timer(ctx, id, timer),
            Peer::Matchmaker(_) => {}
        }
    }

    /// Requests still waiting for a response or timeout.
    pub fn live_requests(&self) -> usize {
        match self {
            Peer::Trader(t) => t.live_requests(),
            Peer::Matchmaker(_) => 0,
        }
    }

    pub fn as_trader(&self) -> Option<&Trader> {
        match self {
            Peer::Trader(t) => Some(t),
            Peer::Matchmaker(_) => None,
        }
    }

    pub fn as_trader_mut(&mut self) -> Option<&mut Trader> {
        match self {
            Peer::Trader(t) => Some(t),
            Peer::Matchmaker(_) => None,
        }
    }

    pub fn as_matchmaker(&self) -> Option<&Matchmaker> {
        match self {
            Peer::Matchmaker(m) => Some(m),
            Peer::Trader(_) => None,
        }
    }
}
