use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::time::SimDuration;

/// Per-peer protocol parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProtocolConfig {
    /// RESTRICT(t): refuse counterparties with `t` or more open
    /// responsibilities. `None` disables the policy.
    pub restrict: Option<u32>,
    /// INC_SET(n): payments per side. 1 means a single payment.
    pub payments_per_side: u32,
    /// Trade with responsible counterparties anyway.
    pub at_own_risk: bool,
    /// Match window: how long nominations are collected before selecting.
    pub match_window: SimDuration,
    /// Publication deadline relative to agreement creation.
    pub publication_deadline: SimDuration,
    pub order_timeout: SimDuration,
    /// Request-store timeout for negotiation and agreement messages.
    pub negotiation_timeout: SimDuration,
    /// Re-poll interval while an incoming payment is unconfirmed.
    pub payment_poll_interval: SimDuration,
    /// A party waiting for the other side's payment gives up after this.
    pub payment_wait_timeout: SimDuration,
    /// External transfer attempts before the trade is marked stalled.
    pub transfer_attempts: u32,
    /// Backoff before the first transfer retry; doubles per retry.
    pub transfer_backoff: SimDuration,
    /// Request-store timeout for ledger and payment messages, which are
    /// retransmitted on expiry.
    pub retransmit_timeout: SimDuration,
    pub retransmit_attempts: u32,
    /// A nomination is dropped after this many failed attempts.
    pub max_match_retries: u32,
    /// Matchmakers nominate at most this many counterparties per incoming
    /// order.
    pub max_matches: usize,
}

impl ProtocolConfig {
    /// How long an established trade may go without the other side paying
    /// before it no longer counts as exposure.
    pub fn stale_after(&self) -> SimDuration {
        self.publication_deadline + self.payment_wait_timeout
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            restrict: Some(1),
            payments_per_side: 1,
            at_own_risk: false,
            match_window: SimDuration::from_secs(1),
            publication_deadline: SimDuration::from_secs(10),
            order_timeout: SimDuration::from_secs(3600),
            negotiation_timeout: SimDuration::from_secs(2),
            payment_poll_interval: SimDuration::from_millis(50),
            payment_wait_timeout: SimDuration::from_secs(30),
            transfer_attempts: 3,
            transfer_backoff: SimDuration::from_secs(1),
            retransmit_timeout: SimDuration::from_secs(1),
            retransmit_attempts: 5,
            max_match_retries: 10,
            max_matches: 4,
        }
    }
}

/// Behavioural override applied to a peer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    #[default]
    Honest,
    /// Accepts incoming payments but never pays.
    PaymentWithholder,
    /// Never publishes an agreement as initiator and never countersigns one
    /// as counterparty.
    AgreementWithholder,
    /// Matchmaker that reports only the worst match for each order.
    BiasedMatchmaker,
    /// Ignores proposals and agreement messages.
    NegotiationStaller,
}

impl Behavior {
    pub fn as_str(&self) -> &'static str {
        match self {
            Behavior::Honest => "honest",
            Behavior::PaymentWithholder => "payment-withholder",
            Behavior::AgreementWithholder => "agreement-withholder",
            Behavior::BiasedMatchmaker => "biased-matchmaker",
            Behavior::NegotiationStaller => "negotiation-staller",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Behavior::Honest,
            Behavior::PaymentWithholder,
            Behavior::AgreementWithholder,
            Behavior::BiasedMatchmaker,
            Behavior::NegotiationStaller,
        ]
        .into_iter()
        .find(|b| b.as_str() == s)
        .ok_or_else(|| format!("unknown adversary profile {s:?}"))
    }
}
