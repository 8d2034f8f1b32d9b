//! Request stores: outstanding requests keyed by their correlation id.
//!
//! A response is matched to its request through `reply_to`; responses whose
//! id is not in the store are discarded. Each entry has one timeout.

use std::collections::BTreeMap;

use super::events::TimerId;
use super::messages::Envelope;
use crate::crypto::Hash;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RequestKind {
    Proposal,
    Agreement,
    /// An initiator partition sent for countersigning.
    Ledger,
    Payment,
    Done,
}

impl RequestKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RequestKind::Proposal => "proposal",
            RequestKind::Agreement => "agreement",
            RequestKind::Ledger => "ledger",
            RequestKind::Payment => "payment",
            RequestKind::Done => "done",
        }
    }

    /// Negotiation requests are abandoned on timeout; ledger and payment
    /// requests are resent.
    pub fn retransmits(&self) -> bool {
        matches!(self, RequestKind::Ledger | RequestKind::Payment | RequestKind::Done)
    }
}

/// What a request belongs to on the sender's side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequestTag {
    Negotiation(u64),
    Trade(Hash),
}

#[derive(Clone, Debug)]
pub struct PendingRequest {
    pub kind: RequestKind,
    pub tag: RequestTag,
    pub envelope: Envelope,
    pub attempts: u32,
    pub timer: TimerId,
}

/// What to do after a request timer fired.
#[derive(Debug)]
pub enum TimeoutAction {
    /// Unknown or already answered.
    Ignore,
    Resend(Envelope),
    GiveUp(PendingRequest),
}

#[derive(Clone, Debug, Default)]
pub struct RequestStore {
    live: BTreeMap<u64, PendingRequest>,
}

impl RequestStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn insert(&mut self, id: u64, request: PendingRequest) {
        let old = self.live.insert(id, request);
        debug_assert!(old.is_none(), "request id {id} reused");
    }

    pub fn get(&self, id: u64) -> Option<&PendingRequest> {
        self.live.get(&id)
    }

    /// Removes the request a response answers.
    pub fn take(&mut self, id: u64) -> Option<PendingRequest> {
        self.live.remove(&id)
    }

    /// Handles the timer of request `id`. Retransmitting kinds are resent
    /// until `max_attempts` sends were made; the caller re-arms the timer
    /// through [`rearm`](Self::rearm).
    pub fn on_timeout(&mut self, id: u64, timer: TimerId, max_attempts: u32) -> TimeoutAction {
        let Some(req) = self.live.get_mut(&id) else { return TimeoutAction::Ignore };
        if req.timer != timer {
            return TimeoutAction::Ignore;
        }
        if req.kind.retransmits() && req.attempts < max_attempts {
            req.attempts += 1;
            return TimeoutAction::Resend(req.envelope.clone());
        }
        TimeoutAction::GiveUp(self.live.remove(&id).expect("present"))
    }

    pub fn rearm(&mut self, id: u64, timer: TimerId) {
        if let Some(req) = self.live.get_mut(&id) {
            req.timer = timer;
        }
    }

    /// Drops every request tagged `tag`, returning their timers.
    pub fn drop_tag(&mut self, tag: RequestTag) -> Vec<TimerId> {
        let ids: Vec<u64> = self.live.iter().filter(|(_, r)| r.tag == tag).map(|(id, _)| *id).collect();
        ids.into_iter().filter_map(|id| self.live.remove(&id)).map(|r| r.timer).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&u64, &PendingRequest)> {
        self.live.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Identity;
    use crate::orderbook::OrderId;
    use crate::protocol::messages::Message;

    fn pending(kind: RequestKind, timer: TimerId) -> PendingRequest {
        let a = Identity::derive(5, 1);
        let b = Identity::derive(5, 2);
        let env = Envelope::new_signed(
            &a,
            b.peer_id(),
            1,
            None,
            Message::CancelOrder { order: OrderId { creator: a.peer_id(), seq: 1 } },
        );
        PendingRequest { kind, tag: RequestTag::Negotiation(1), envelope: env, attempts: 1, timer }
    }

    #[test]
    fn response_consumes_request_once() {
        let mut s = RequestStore::new();
        s.insert(1, pending(RequestKind::Proposal, 10));
        assert!(s.take(1).is_some());
        assert!(s.take(1).is_none());
        assert!(s.is_empty());
    }

    #[test]
    fn negotiation_timeout_gives_up_once() {
        let mut s = RequestStore::new();
        s.insert(1, pending(RequestKind::Proposal, 10));
        assert!(matches!(s.on_timeout(1, 10, 5), TimeoutAction::GiveUp(_)));
        assert!(matches!(s.on_timeout(1, 10, 5), TimeoutAction::Ignore));
    }

    #[test]
    fn ledger_requests_resend_until_exhausted() {
        let mut s = RequestStore::new();
        s.insert(1, pending(RequestKind::Ledger, 10));
        assert!(matches!(s.on_timeout(1, 10, 3), TimeoutAction::Resend(_)));
        s.rearm(1, 11);
        // The old timer no longer counts.
        assert!(matches!(s.on_timeout(1, 10, 3), TimeoutAction::Ignore));
        assert!(matches!(s.on_timeout(1, 11, 3), TimeoutAction::Resend(_)));
        s.rearm(1, 12);
        assert!(matches!(s.on_timeout(1, 12, 3), TimeoutAction::GiveUp(_)));
        assert!(s.is_empty());
    }

    #[test]
    fn drop_tag_removes_matching_requests() {
        let mut s = RequestStore::new();
        s.insert(1, pending(RequestKind::Proposal, 10));
        let mut other = pending(RequestKind::Ledger, 11);
        other.tag = RequestTag::Trade(Hash::ZERO);
        s.insert(2, other);
        assert_eq!(s.drop_tag(RequestTag::Negotiation(1)), vec![10]);
        assert_eq!(s.len(), 1);
    }
}
