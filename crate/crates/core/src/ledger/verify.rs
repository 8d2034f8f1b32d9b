use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::block::{BlockPartition, LinkRole, TxPayload};
use crate::crypto::{Hash, PeerId};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// A dump line that does not decode.
    Decode {
        line: usize,
        error: String,
    },
    WrongCreator {
        creator: PeerId,
        seq: u64,
        expected: PeerId,
    },
    SeqGap {
        creator: PeerId,
        expected: u64,
        found: u64,
    },
    DuplicateSeq {
        creator: PeerId,
        seq: u64,
    },
    BrokenSelfLink {
        creator: PeerId,
        seq: u64,
    },
    BadSignature {
        creator: PeerId,
        seq: u64,
    },
    BadCounterpartySignature {
        creator: PeerId,
        seq: u64,
    },
    PayloadInvalid {
        creator: PeerId,
        seq: u64,
        reason: String,
    },
    /// Two different validly signed partitions at one position: the chain
    /// copy and a copy held by a counterparty.
    ConflictingPair {
        creator: PeerId,
        seq: u64,
        chain: Hash,
        witness: Hash,
    },
    /// A counterparty holds a partition the chain no longer contains.
    WitnessedMissing {
        creator: PeerId,
        seq: u64,
    },
    /// A countersigned partition whose counterparty chain lacks the
    /// matching half.
    MissingResponder {
        creator: PeerId,
        seq: u64,
        counterparty: PeerId,
    },
    /// A responder half linking a hash its counterparty's chain lacks.
    DanglingCounterpartyRef {
        creator: PeerId,
        seq: u64,
    },
    /// The two halves of a block carry different payloads.
    PayloadMismatch {
        creator: PeerId,
        seq: u64,
    },
    PaymentOrder {
        creator: PeerId,
        seq: u64,
        reason: String,
    },
}

impl Violation {
    /// `(creator, seq)` the violation is localized to, if any.
    pub fn location(&self) -> Option<(PeerId, u64)> {
        use Violation::*;
        match self {
            Decode { .. } => None,
            SeqGap { creator, found, .. } => Some((*creator, *found)),
            WrongCreator { creator, seq, .. }
            | DuplicateSeq { creator, seq }
            | BrokenSelfLink { creator, seq }
            | BadSignature { creator, seq }
            | BadCounterpartySignature { creator, seq }
            | PayloadInvalid { creator, seq, .. }
            | ConflictingPair { creator, seq, .. }
            | WitnessedMissing { creator, seq }
            | MissingResponder { creator, seq, .. }
            | DanglingCounterpartyRef { creator, seq }
            | PayloadMismatch { creator, seq }
            | PaymentOrder { creator, seq, .. } => Some((*creator, *seq)),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            Decode { line, error } => write!(f, "line {line}: undecodable partition: {error}"),
            WrongCreator { creator, seq, expected } => {
                write!(f, "{creator}#{seq}: partition in chain of {expected}")
            }
            SeqGap { creator, expected, found } => {
                write!(f, "{creator}: sequence gap, expected #{expected}, found #{found}")
            }
            DuplicateSeq { creator, seq } => write!(f, "{creator}#{seq}: duplicate or out-of-order sequence number"),
            BrokenSelfLink { creator, seq } => write!(f, "{creator}#{seq}: previous-hash link broken"),
            BadSignature { creator, seq } => write!(f, "{creator}#{seq}: creator signature invalid"),
            BadCounterpartySignature { creator, seq } => {
                write!(f, "{creator}#{seq}: counterparty signature invalid")
            }
            PayloadInvalid { creator, seq, reason } => write!(f, "{creator}#{seq}: invalid payload: {reason}"),
            ConflictingPair { creator, seq, chain, witness } => {
                write!(f, "{creator}#{seq}: fraud proof, chain has {chain} but counterparty holds {witness}")
            }
            WitnessedMissing { creator, seq } => {
                write!(f, "{creator}#{seq}: held by a counterparty but missing from chain")
            }
            MissingResponder { creator, seq, counterparty } => {
                write!(f, "{creator}#{seq}: countersigned by {counterparty} but its half is missing")
            }
            DanglingCounterpartyRef { creator, seq } => {
                write!(f, "{creator}#{seq}: links a counterparty partition that does not exist")
            }
            PayloadMismatch { creator, seq } => write!(f, "{creator}#{seq}: halves disagree on payload"),
            PaymentOrder { creator, seq, reason } => write!(f, "{creator}#{seq}: payment order: {reason}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub partitions: usize,
    pub chains: usize,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }
}

fn check_partition(p: &BlockPartition, report: &mut ValidationReport) {
    let (creator, seq) = (p.creator, p.seq);
    if !p.signature_valid() {
        report.push(Violation::BadSignature { creator, seq });
    }
    let h = p.hash();
    let bad_cosig = p.counterparty_signatures.iter().any(|s| !p.counterparties.contains(&s.signer) || !s.verify(&h));
    if bad_cosig {
        report.push(Violation::BadCounterpartySignature { creator, seq });
    }
    let role_ok = match p.role {
        LinkRole::Unilateral => {
            p.payload.is_unilateral()
                && p.counterparties.is_empty()
                && p.prev_hash_counterparty.is_none()
                && p.counterparty_signatures.is_empty()
        }
        LinkRole::Initiator => !p.payload.is_unilateral() && p.prev_hash_counterparty.is_some(),
        LinkRole::Responder => {
            !p.payload.is_unilateral() && p.prev_hash_counterparty.is_some() && p.counterparties.len() == 1
        }
    };
    if !role_ok {
        report.push(Violation::PayloadInvalid { creator, seq, reason: format!("{:?} partition shape", p.role) });
    }
    if let Err(reason) = p.payload.check(&p.creator, &p.counterparties) {
        report.push(Violation::PayloadInvalid { creator, seq, reason });
    }
}

/// Checks one creator's chain in isolation: contiguous sequence numbers from
/// 1, intact previous-hash links, signatures and payload invariants.
pub fn verify_chain(chain: &[BlockPartition]) -> ValidationReport {
    let mut report = ValidationReport { partitions: chain.len(), chains: 1, ..Default::default() };
    let Some(first) = chain.first() else {
        report.chains = 0;
        return report;
    };
    let owner = first.creator;
    let mut expected = 1u64;
    let mut prev: Option<&BlockPartition> = None;
    for p in chain {
        if p.creator != owner {
            report.push(Violation::WrongCreator { creator: p.creator, seq: p.seq, expected: owner });
        }
        if p.seq < expected {
            report.push(Violation::DuplicateSeq { creator: owner, seq: p.seq });
        } else if p.seq > expected {
            report.push(Violation::SeqGap { creator: owner, expected, found: p.seq });
        }
        let link_ok = match prev {
            _ if p.seq == 1 => p.prev_hash_self == Hash::ZERO,
            Some(q) if q.seq + 1 == p.seq => p.prev_hash_self == q.hash(),
            // Predecessor absent: the gap is already reported.
            _ => true,
        };
        if !link_ok {
            report.push(Violation::BrokenSelfLink { creator: owner, seq: p.seq });
        }
        check_partition(p, &mut report);
        expected = expected.max(p.seq + 1);
        prev = Some(p);
    }
    report
}

/// Verifies a set of chains together: each chain on its own, the
/// entanglement between counterparty halves, payment ordering, and every
/// witness copy (partitions counterparties hold of others' chains) against
/// the chain it claims to come from.
///
/// Partitions are grouped by creator in input order. Links into chains that
/// are absent from the input are not checked.
pub fn verify_ledger(partitions: &[BlockPartition], witnesses: &[BlockPartition]) -> ValidationReport {
    let mut chains: BTreeMap<PeerId, Vec<BlockPartition>> = BTreeMap::new();
    for p in partitions {
        chains.entry(p.creator).or_default().push(p.clone());
    }
    let mut report = ValidationReport { partitions: partitions.len(), chains: chains.len(), ..Default::default() };
    for chain in chains.values() {
        report.violations.extend(verify_chain(chain).violations);
    }

    let mut by_hash: HashMap<Hash, &BlockPartition> = HashMap::new();
    let mut at: HashMap<(PeerId, u64), &BlockPartition> = HashMap::new();
    for p in partitions {
        by_hash.insert(p.hash(), p);
        at.entry((p.creator, p.seq)).or_insert(p);
    }
    // Responder halves by the initiator hash they link, per creator.
    let mut responders: HashMap<(PeerId, Hash), &BlockPartition> = HashMap::new();
    for p in partitions.iter().filter(|p| p.role == LinkRole::Responder) {
        if let Some(h) = p.prev_hash_counterparty {
            responders.insert((p.creator, h), p);
        }
    }

    for p in partitions {
        let (creator, seq) = (p.creator, p.seq);
        match p.role {
            LinkRole::Responder => {
                let Some(link) = p.prev_hash_counterparty else { continue };
                match by_hash.get(&link) {
                    Some(init) => {
                        let ok = init.role == LinkRole::Initiator
                            && init.counterparties.contains(&creator)
                            && p.counterparties == [init.creator]
                            && init.payload == p.payload;
                        if !ok {
                            report.push(Violation::PayloadMismatch { creator, seq });
                        }
                    }
                    None => {
                        let other_present = p.counterparties.first().is_some_and(|c| chains.contains_key(c));
                        if other_present {
                            report.push(Violation::DanglingCounterpartyRef { creator, seq });
                        }
                    }
                }
            }
            LinkRole::Initiator => {
                let h = p.hash();
                for signer in p.valid_countersigners() {
                    if chains.contains_key(&signer) && !responders.contains_key(&(signer, h)) {
                        report.push(Violation::MissingResponder { creator, seq, counterparty: signer });
                    }
                }
            }
            LinkRole::Unilateral => {}
        }
    }

    // Each payer's payments per trade run 1, 2, ... in chain order.
    for chain in chains.values() {
        let mut next: HashMap<Hash, u32> = HashMap::new();
        for p in chain.iter().filter(|p| p.role == LinkRole::Initiator) {
            if let TxPayload::Payment(pay) = &p.payload {
                if pay.payer != p.creator {
                    report.push(Violation::PaymentOrder {
                        creator: p.creator,
                        seq: p.seq,
                        reason: "payment initiated by non-payer".into(),
                    });
                    continue;
                }
                let want = next.entry(pay.trade_ref.hash).or_insert(1);
                if pay.payment_index != *want {
                    report.push(Violation::PaymentOrder {
                        creator: p.creator,
                        seq: p.seq,
                        reason: format!("index {} where {} expected", pay.payment_index, want),
                    });
                }
                *want = pay.payment_index.max(*want) + 1;
            }
        }
    }

    for w in witnesses {
        if !chains.contains_key(&w.creator) || !w.signature_valid() {
            continue;
        }
        match at.get(&(w.creator, w.seq)) {
            None => report.push(Violation::WitnessedMissing { creator: w.creator, seq: w.seq }),
            Some(p) if p.hash() != w.hash() => report.push(Violation::ConflictingPair {
                creator: w.creator,
                seq: w.seq,
                chain: p.hash(),
                witness: w.hash(),
            }),
            Some(_) => {}
        }
    }
    report
}
