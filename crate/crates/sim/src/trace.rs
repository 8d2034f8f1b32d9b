//! Line-delimited JSON event trace. The trace alone is enough to recompute
//! every metric of a run.

use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use xchange_core::protocol::{Behavior, Observation};
use xchange_core::PeerId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Trader,
    Matchmaker,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerInfo {
    pub id: PeerId,
    pub role: Role,
    pub behavior: Behavior,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Simulated time in microseconds.
    pub t: u64,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "kebab-case")]
pub enum TraceKind {
    Run {
        scenario: String,
        seed: u64,
        duration_us: u64,
        peers: Vec<PeerInfo>,
    },
    Send {
        from: PeerId,
        to: PeerId,
        msg: String,
        id: u64,
    },
    Deliver {
        from: PeerId,
        to: PeerId,
        msg: String,
        id: u64,
    },
    Drop {
        from: PeerId,
        to: PeerId,
        msg: String,
        id: u64,
    },
    /// First time a partition reached the global ledger view.
    Block {
        creator: PeerId,
        seq: u64,
        tx: String,
    },
    Obs(Observation),
    End {
        live_events: usize,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("trace line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("trace is empty")]
    Empty,
    #[error("trace does not start with a run header")]
    NoHeader,
    #[error("trace is truncated: no end record")]
    Truncated,
}

/// Collects events and hashes their serialized form as they arrive.
pub struct TraceSink {
    events: Vec<TraceEvent>,
    hasher: Sha256,
    out: Option<Box<dyn Write>>,
}

impl TraceSink {
    pub fn new(out: Option<Box<dyn Write>>) -> Self {
        TraceSink { events: Vec::new(), hasher: Sha256::new(), out }
    }

    pub fn push(&mut self, t: u64, kind: TraceKind) {
        let ev = TraceEvent { t, kind };
        let mut line = serde_json::to_string(&ev).expect("trace event serializes");
        line.push('\n');
        self.hasher.update(line.as_bytes());
        if let Some(w) = &mut self.out {
            if let Err(e) = w.write_all(line.as_bytes()) {
                log::warn!("trace write failed: {e}");
                self.out = None;
            }
        }
        self.events.push(ev);
    }

    pub fn finish(mut self) -> (Vec<TraceEvent>, String) {
        if let Some(w) = &mut self.out {
            let _ = w.flush();
        }
        (self.events, hex::encode(self.hasher.finalize()))
    }
}

pub fn to_jsonl(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("trace event serializes"));
        out.push('\n');
    }
    out
}

pub fn hash_jsonl(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Parses a complete trace. A trace must open with a run header and close
/// with an end record.
pub fn parse(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: TraceEvent =
            serde_json::from_str(line).map_err(|e| TraceError::Malformed { line: i + 1, msg: e.to_string() })?;
        events.push(ev);
    }
    match events.first() {
        None => return Err(TraceError::Empty),
        Some(TraceEvent { kind: TraceKind::Run { .. }, .. }) => {}
        Some(_) => return Err(TraceError::NoHeader),
    }
    if !matches!(events.last(), Some(TraceEvent { kind: TraceKind::End { .. }, .. })) {
        return Err(TraceError::Truncated);
    }
    Ok(events)
}
