//! Line-delimited ledger dumps: one hex-encoded canonical partition per line.

use super::block::BlockPartition;
use crate::codec::{Decode, DecodeError, Encode};

pub fn dump<'a>(partitions: impl IntoIterator<Item = &'a BlockPartition>) -> String {
    let mut out = String::new();
    for p in partitions {
        out.push_str(&hex::encode(p.to_bytes()));
        out.push('\n');
    }
    out
}

/// Parses every non-empty line; failures carry their 1-based line number.
pub fn parse(text: &str) -> Vec<Result<BlockPartition, (usize, DecodeError)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bytes = hex::decode(l.trim()).map_err(|e| (i + 1, DecodeError::Invalid(e.to_string())))?;
            BlockPartition::from_bytes(&bytes).map_err(|e| (i + 1, e))
        })
        .collect()
}
