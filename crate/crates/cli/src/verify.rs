use xchange_core::ledger::{dump, verify_ledger, BlockPartition, ValidationReport, Violation};

/// Decodes a dump; undecodable lines become violations.
pub fn decode(text: &str) -> (Vec<BlockPartition>, Vec<Violation>) {
    let mut parts = Vec::new();
    let mut bad = Vec::new();
    for r in dump::parse(text) {
        match r {
            Ok(p) => parts.push(p),
            Err((line, e)) => bad.push(Violation::Decode { line, error: e.to_string() }),
        }
    }
    (parts, bad)
}

/// Verifies a ledger dump against witness dumps held by other peers.
pub fn verify_texts(ledger: &str, witnesses: &[String]) -> ValidationReport {
    let (parts, mut bad) = decode(ledger);
    let mut held = Vec::new();
    for w in witnesses {
        let (p, b) = decode(w);
        held.extend(p);
        bad.extend(b);
    }
    let mut report = verify_ledger(&parts, &held);
    bad.extend(report.violations);
    report.violations = bad;
    report
}
