use serde::{Deserialize, Serialize};

use crate::codec::{CanonicalEncoder, Payload};
use crate::ids::{Address, Hash32};

use super::merkle::merkle_root;

/// Outcome recorded for a transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxStatus {
    Ok,
    Unauthorized,
    Reverted(String),
}

impl TxStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, TxStatus::Ok)
    }

    fn encode(&self, enc: &mut CanonicalEncoder) {
        match self {
            TxStatus::Ok => {
                enc.u8(0);
            }
            TxStatus::Unauthorized => {
                enc.u8(1);
            }
            TxStatus::Reverted(reason) => {
                enc.u8(2).str(reason);
            }
        }
    }
}

/// An event emitted by a contract and logged with its enclosing transaction.
///
/// `block_index`, `tx_id` and `timestamp` locate the event on the chain; they are
/// filled in when the transaction is sealed and are checked against the enclosing
/// block during verification rather than hashed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub name: String,
    pub contract: Address,
    pub payload: Payload,
    pub block_index: u64,
    pub tx_id: Hash32,
    pub timestamp: u64,
}

impl EventRecord {
    pub fn new(name: impl Into<String>, contract: Address, payload: Payload) -> Self {
        Self {
            name: name.into(),
            contract,
            payload,
            block_index: 0,
            tx_id: Hash32::ZERO,
            timestamp: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub tx_id: Hash32,
    /// Position of the transaction in the global submission order.
    pub nonce: u64,
    pub caller: Address,
    pub contract: Address,
    pub operation: String,
    pub args: Payload,
    pub status: TxStatus,
    pub gas_transaction: u64,
    pub gas_execution: u64,
    pub events: Vec<EventRecord>,
}

impl Transaction {
    /// Digest over every field except `tx_id` and the events' location fields.
    pub fn compute_id(&self) -> Hash32 {
        let mut enc = CanonicalEncoder::new();
        enc.u64(self.nonce)
            .address(&self.caller)
            .address(&self.contract)
            .str(&self.operation)
            .payload(&self.args);
        self.status.encode(&mut enc);
        enc.u64(self.gas_transaction)
            .u64(self.gas_execution)
            .len_prefix(self.events.len());
        for ev in &self.events {
            enc.str(&ev.name).address(&ev.contract).payload(&ev.payload);
        }
        enc.digest()
    }

    /// Fixes `tx_id` and stamps every event with its chain location.
    pub fn seal(&mut self, block_index: u64, timestamp: u64) {
        self.tx_id = self.compute_id();
        for ev in &mut self.events {
            ev.block_index = block_index;
            ev.tx_id = self.tx_id;
            ev.timestamp = timestamp;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub index: u64,
    pub timestamp: u64,
    pub prev_hash: Hash32,
    pub merkle_root: Hash32,
    pub transactions: Vec<Transaction>,
    pub block_hash: Hash32,
}

impl Block {
    /// Builds a sealed block: transaction ids, event locations, Merkle root and hash
    /// are all derived here.
    pub fn seal(index: u64, timestamp: u64, prev_hash: Hash32, mut transactions: Vec<Transaction>) -> Self {
        for tx in &mut transactions {
            tx.seal(index, timestamp);
        }
        let merkle_root = merkle_root(&transactions.iter().map(|t| t.tx_id).collect::<Vec<_>>());
        let block_hash = header_hash(index, timestamp, &prev_hash, &merkle_root);
        Self {
            index,
            timestamp,
            prev_hash,
            merkle_root,
            transactions,
            block_hash,
        }
    }

    pub fn compute_hash(&self) -> Hash32 {
        header_hash(self.index, self.timestamp, &self.prev_hash, &self.merkle_root)
    }

    /// Merkle root recomputed from transaction contents (not from stored ids).
    pub fn compute_merkle_root(&self) -> Hash32 {
        merkle_root(
            &self
                .transactions
                .iter()
                .map(Transaction::compute_id)
                .collect::<Vec<_>>(),
        )
    }

    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.transactions.iter().flat_map(|tx| tx.events.iter())
    }
}

pub fn header_hash(index: u64, timestamp: u64, prev_hash: &Hash32, merkle_root: &Hash32) -> Hash32 {
    let mut enc = CanonicalEncoder::new();
    enc.u64(index).u64(timestamp).hash(prev_hash).hash(merkle_root);
    enc.digest()
}
