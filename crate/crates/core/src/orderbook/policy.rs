use std::collections::BTreeMap;
use std::sync::Arc;

use super::{BookError, LimitOrderBook, MatchCandidate, OrderSpec, PairKey};

pub const PRICE_TIME: &str = "price-time";

/// A matching strategy over one order book.
pub trait MatchPolicy: Send + Sync {
    fn name(&self) -> &str;
    fn matches(&self, book: &LimitOrderBook, incoming: &OrderSpec) -> Vec<MatchCandidate>;
}

/// Best price first, then oldest first.
#[derive(Clone, Copy, Debug, Default)]
pub struct PriceTimePolicy;

impl MatchPolicy for PriceTimePolicy {
    fn name(&self) -> &str {
        PRICE_TIME
    }

    fn matches(&self, book: &LimitOrderBook, incoming: &OrderSpec) -> Vec<MatchCandidate> {
        book.match_order(incoming)
    }
}

/// Named policies plus a per-pair assignment. Pairs without an explicit
/// assignment use price-time.
#[derive(Clone)]
pub struct MatchPolicyRegistry {
    policies: BTreeMap<String, Arc<dyn MatchPolicy>>,
    assigned: BTreeMap<PairKey, String>,
}

impl Default for MatchPolicyRegistry {
    fn default() -> Self {
        let mut r = MatchPolicyRegistry { policies: BTreeMap::new(), assigned: BTreeMap::new() };
        r.register(Arc::new(PriceTimePolicy));
        r
    }
}

impl std::fmt::Debug for MatchPolicyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MatchPolicyRegistry")
            .field("policies", &self.policies.keys().collect::<Vec<_>>())
            .field("assigned", &self.assigned)
            .finish()
    }
}

impl MatchPolicyRegistry {
    pub fn register(&mut self, policy: Arc<dyn MatchPolicy>) {
        self.policies.insert(policy.name().to_string(), policy);
    }

    /// Binds `pair` to a registered policy. Unknown names are a configuration
    /// error reported here, before any order is processed.
    pub fn assign(&mut self, pair: PairKey, policy: &str) -> Result<(), BookError> {
        if !self.policies.contains_key(policy) {
            return Err(BookError::UnknownPolicy(policy.to_string()));
        }
        self.assigned.insert(pair, policy.to_string());
        Ok(())
    }

    pub fn policy_for(&self, pair: &PairKey) -> &Arc<dyn MatchPolicy> {
        let name = self.assigned.get(pair).map(String::as_str).unwrap_or(PRICE_TIME);
        &self.policies[name]
    }

    pub fn apply(&self, book: &LimitOrderBook, incoming: &OrderSpec) -> Vec<MatchCandidate> {
        self.policy_for(book.pair()).matches(book, incoming)
    }
}
