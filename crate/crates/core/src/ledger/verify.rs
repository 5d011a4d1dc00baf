use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::Hash32;

use super::block::Block;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    /// `prev_hash` does not match the recomputed hash of the preceding block
    /// (or is non-zero on the genesis block).
    LinkageMismatch,
    IndexMismatch,
    TimestampRegression,
    MerkleMismatch,
    TxIdMismatch,
    /// An event's block index, transaction id or timestamp disagrees with its
    /// enclosing block.
    EventMismatch,
    HashMismatch,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub ok: bool,
    pub blocks_checked: u64,
    pub first_bad_block: Option<u64>,
    pub failure: Option<FailureKind>,
}

impl VerificationReport {
    fn pass(blocks_checked: u64) -> Self {
        Self {
            ok: true,
            blocks_checked,
            first_bad_block: None,
            failure: None,
        }
    }

    fn fail(position: u64, kind: FailureKind) -> Self {
        Self {
            ok: false,
            blocks_checked: position + 1,
            first_bad_block: Some(position),
            failure: Some(kind),
        }
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.first_bad_block, self.failure) {
            (Some(i), Some(kind)) => write!(f, "FAILED at block {i}: {kind}"),
            _ => write!(f, "OK ({} blocks)", self.blocks_checked),
        }
    }
}

/// Checks a block sequence in order and reports the earliest violation.
///
/// Per block the checks run as: linkage, index, timestamp, Merkle root,
/// transaction ids, event locations, block hash.
pub fn verify_blocks(blocks: &[Block]) -> VerificationReport {
    let mut prev: Option<(Hash32, u64)> = None;
    for (pos, block) in blocks.iter().enumerate() {
        let pos = pos as u64;
        if let Some(kind) = check_block(block, pos, prev) {
            return VerificationReport::fail(pos, kind);
        }
        prev = Some((block.compute_hash(), block.timestamp));
    }
    VerificationReport::pass(blocks.len() as u64)
}

fn check_block(block: &Block, pos: u64, prev: Option<(Hash32, u64)>) -> Option<FailureKind> {
    let expected_prev = prev.map(|(h, _)| h).unwrap_or(Hash32::ZERO);
    if block.prev_hash != expected_prev {
        return Some(FailureKind::LinkageMismatch);
    }
    if block.index != pos {
        return Some(FailureKind::IndexMismatch);
    }
    if let Some((_, prev_ts)) = prev {
        if block.timestamp < prev_ts {
            return Some(FailureKind::TimestampRegression);
        }
    }
    let ids: Vec<Hash32> = block.transactions.iter().map(|t| t.compute_id()).collect();
    if super::merkle::merkle_root(&ids) != block.merkle_root {
        return Some(FailureKind::MerkleMismatch);
    }
    if block.transactions.iter().zip(&ids).any(|(t, id)| t.tx_id != *id) {
        return Some(FailureKind::TxIdMismatch);
    }
    let misplaced = block.transactions.iter().any(|tx| {
        tx.events
            .iter()
            .any(|ev| ev.block_index != block.index || ev.tx_id != tx.tx_id || ev.timestamp != block.timestamp)
    });
    if misplaced {
        return Some(FailureKind::EventMismatch);
    }
    if block.compute_hash() != block.block_hash {
        return Some(FailureKind::HashMismatch);
    }
    None
}
