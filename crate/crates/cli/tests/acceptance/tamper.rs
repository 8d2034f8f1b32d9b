//! Every single deletion, swap and byte mutation of a chain from an honest
//! run is caught by the verifier when the copies held by the chain owner's
//! counterparties are supplied. Untouched dumps verify clean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xchange_cli::verify::verify_texts;
use xchange_core::codec::{Decode, Encode};
use xchange_core::ledger::{dump, BlockPartition};
use xchange_core::PeerId;
use xchange_sim::{run, PolicySpec, Scenario};

use crate::Outcome;

const MAX_CHAIN: usize = 20;
/// Random byte positions flipped per partition, besides the first and last.
const FLIPS: usize = 24;

enum Tamper {
    Delete(usize),
    Swap(usize),
    Flip(usize, usize),
}

fn apply(chain: &[BlockPartition], t: &Tamper) -> Vec<String> {
    let mut lines: Vec<String> = chain.iter().map(|b| hex::encode(b.to_bytes())).collect();
    match *t {
        Tamper::Delete(i) => {
            lines.remove(i);
        }
        Tamper::Swap(i) => {
            let (mut a, mut b) = (chain[i].clone(), chain[i + 1].clone());
            std::mem::swap(&mut a.seq, &mut b.seq);
            lines[i] = hex::encode(b.to_bytes());
            lines[i + 1] = hex::encode(a.to_bytes());
        }
        Tamper::Flip(i, byte) => {
            let mut bytes = chain[i].to_bytes();
            bytes[byte] ^= 0x01;
            lines[i] = hex::encode(bytes);
        }
    }
    lines
}

pub fn check() -> Outcome {
    let policy = PolicySpec { restrict: Some(1), payments_per_side: 2, ..PolicySpec::default() };
    let out = match run(&Scenario::synthetic(12, 1.0, policy, 21)) {
        Ok(o) => o,
        Err(e) => return Outcome::new(false, e.to_string()),
    };
    let peers: Vec<PeerId> = out.ledger.peers().copied().collect();
    let chains: Vec<(PeerId, Vec<BlockPartition>)> =
        peers.iter().map(|p| (*p, out.ledger.chain(p).into_iter().cloned().collect())).collect();
    let held = out.held_copies();

    let mut rng = ChaCha8Rng::seed_from_u64(0x7A3F);
    let mut cases = 0usize;
    let mut misses = Vec::new();
    let mut false_positives = Vec::new();
    let mut fuzzed = 0;
    for (subject, chain) in &chains {
        let witness = dump::dump(held.iter().filter(|(h, b)| h != subject && b.creator == *subject).map(|(_, b)| *b));
        let witnesses = vec![witness];
        let others: String = chains.iter().filter(|(p, _)| p != subject).map(|(_, c)| dump::dump(c)).collect();
        let text = |lines: &[String]| {
            let mut t = others.clone();
            for l in lines {
                t.push_str(l);
                t.push('\n');
            }
            t
        };
        let clean: Vec<String> = chain.iter().map(|b| hex::encode(b.to_bytes())).collect();
        let report = verify_texts(&text(&clean), &witnesses);
        if !report.is_valid() {
            false_positives.push(format!("clean chain {subject} flagged: {}", report.violations[0]));
        }
        if chain.len() > MAX_CHAIN {
            continue;
        }
        fuzzed += 1;
        let mut tampers = Vec::new();
        for i in 0..chain.len() {
            tampers.push(Tamper::Delete(i));
            if i + 1 < chain.len() {
                tampers.push(Tamper::Swap(i));
            }
            let len = chain[i].to_bytes().len();
            tampers.push(Tamper::Flip(i, 0));
            tampers.push(Tamper::Flip(i, len - 1));
            for _ in 0..FLIPS {
                tampers.push(Tamper::Flip(i, rng.gen_range(0..len)));
            }
        }
        for t in &tampers {
            cases += 1;
            if verify_texts(&text(&apply(chain, t)), &witnesses).is_valid() {
                let what = match t {
                    Tamper::Delete(i) => format!("delete {i}"),
                    Tamper::Swap(i) => format!("swap {i}"),
                    Tamper::Flip(i, b) => format!("flip {i}@{b}"),
                };
                misses.push(format!("{subject}: {what} undetected"));
            }
        }
    }
    // Sanity: re-decoding the encoded chains is lossless.
    let lossless =
        chains.iter().all(|(_, c)| c.iter().all(|b| BlockPartition::from_bytes(&b.to_bytes()).as_ref() == Ok(b)));

    let detail = format!(
        "{fuzzed} chains of at most {MAX_CHAIN} blocks, {cases} tampered dumps, {} undetected, {} false positives",
        misses.len(),
        false_positives.len()
    );
    if fuzzed == 0 || !lossless {
        return Outcome::new(false, format!("nothing fuzzed or codec lossy; {detail}"));
    }
    match misses.iter().chain(&false_positives).next() {
        None => Outcome::new(true, detail),
        Some(first) => Outcome::new(false, format!("{detail}; first: {first}")),
    }
}
