//! Append-only hash-chained block store.

mod block;
pub mod jsonl;
mod merkle;
mod verify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Address, Hash32};

pub use block::{header_hash, Block, EventRecord, Transaction, TxStatus};
pub use merkle::merkle_root;
pub use verify::{verify_blocks, FailureKind, VerificationReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("genesis block already exists")]
    AlreadyInitialized,
    #[error("chain has no genesis block")]
    NotInitialized,
    #[error("clock regression: {now} is earlier than head timestamp {head}")]
    ClockRegression { now: u64, head: u64 },
}

/// Selects events by contract, name and inclusive block range. Empty filter matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventFilter {
    pub contract: Option<Address>,
    pub name: Option<String>,
    pub from_block: Option<u64>,
    pub to_block: Option<u64>,
}

impl EventFilter {
    pub fn contract(mut self, contract: Address) -> Self {
        self.contract = Some(contract);
        self
    }

    pub fn name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn blocks(mut self, from: u64, to: u64) -> Self {
        self.from_block = Some(from);
        self.to_block = Some(to);
        self
    }

    pub fn matches(&self, ev: &EventRecord) -> bool {
        self.contract.is_none_or(|c| c == ev.contract)
            && self.name.as_deref().is_none_or(|n| n == ev.name)
            && self.from_block.is_none_or(|f| ev.block_index >= f)
            && self.to_block.is_none_or(|t| ev.block_index <= t)
    }
}

/// Single-writer chain. Blocks are only ever appended.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    blocks: Vec<Block>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps blocks read from storage. No verification is performed.
    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn init_genesis(&mut self, now: u64) -> Result<&Block, LedgerError> {
        if !self.blocks.is_empty() {
            return Err(LedgerError::AlreadyInitialized);
        }
        self.blocks.push(Block::seal(0, now, Hash32::ZERO, Vec::new()));
        Ok(&self.blocks[0])
    }

    pub fn append_block(&mut self, transactions: Vec<Transaction>, now: u64) -> Result<&Block, LedgerError> {
        let head = self.head().ok_or(LedgerError::NotInitialized)?;
        if now < head.timestamp {
            return Err(LedgerError::ClockRegression {
                now,
                head: head.timestamp,
            });
        }
        let block = Block::seal(head.index + 1, now, head.block_hash, transactions);
        self.blocks.push(block);
        Ok(self.blocks.last().unwrap())
    }

    pub fn head(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn verify_chain(&self) -> VerificationReport {
        verify_blocks(&self.blocks)
    }

    pub fn query_events(&self, filter: &EventFilter) -> Vec<EventRecord> {
        query_events(&self.blocks, filter)
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.blocks.iter().flat_map(|b| b.transactions.iter())
    }

    pub fn to_jsonl(&self) -> String {
        jsonl::to_jsonl(&self.blocks)
    }
}

/// Events in chain order (block, transaction, position) that match `filter`.
pub fn query_events(blocks: &[Block], filter: &EventFilter) -> Vec<EventRecord> {
    blocks
        .iter()
        .flat_map(|b| b.events())
        .filter(|ev| filter.matches(ev))
        .cloned()
        .collect()
}
