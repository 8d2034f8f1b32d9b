//! The five-phase trading protocol: order dissemination, counterparty
//! selection, negotiation, agreement and payment execution, finalization.
//!
//! Peers are event-driven state machines. They react to delivered envelopes
//! and fired timers through [`Peer::on_message`] and [`Peer::on_timer`] and
//! reach the outside world only through a [`Context`].

pub mod config;
pub mod events;
pub mod matchmaker;
pub mod messages;
pub mod mpq;
pub mod peer;
pub mod requests;
pub mod trade;
pub mod trader;

pub use config::{Behavior, ProtocolConfig};
pub use events::{Context, Observation, Timer, TimerId};
pub use matchmaker::Matchmaker;
pub use messages::{Envelope, Message, Proposal, RejectReason};
pub use mpq::{MatchPriorityQueue, MatchQueueEntry};
pub use peer::Peer;
pub use trade::{Phase, Role, TradeState};
pub use trader::{OrderStatus, OwnOrder, Trader};
