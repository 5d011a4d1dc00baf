//! Contract state machines hosted by the runtime.
//!
//! Contracts see only already-authorized calls; modifier enforcement lives in
//! [`crate::runtime`]. Every operation validates its inputs and the current state
//! before mutating anything, so an `Err` leaves the contract untouched.

pub mod distribution;
pub mod storage;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{Payload, Value};
use crate::ids::Address;
use crate::runtime::Role;

pub use distribution::{DistributionContract, DistributionState, StageRow, TraceReport, TraceStage};
pub use storage::{ConditionState, Factor, SeedBatchState, SeedEntry, StorageContract, ViolationType};

/// Operation names as they appear on the ledger and in the gas schedule.
pub mod ops {
    pub const ADD_SEED: &str = "addSeed";
    pub const TEMPERATURE_SELF_CHECK: &str = "temperatureSelfCheck";
    pub const HUMIDITY_SELF_CHECK: &str = "humiditySelfCheck";
    pub const LIGHT_EXPO_SELF_CHECK: &str = "lightExpoSelfCheck";
    pub const VIOLATION_TRIGGER: &str = "violationTrigger";
    pub const INITIATE_DISTRIBUTION: &str = "initiateDistribution";
    pub const START_DISTRIBUTION: &str = "startDistribution";
    pub const START_WHOLESALE: &str = "startWholesale";
    pub const RETAIL_SELL: &str = "retailSell";

    /// All contract operations, in gas-table order.
    pub const ALL: [&str; 9] = [
        ADD_SEED,
        TEMPERATURE_SELF_CHECK,
        HUMIDITY_SELF_CHECK,
        LIGHT_EXPO_SELF_CHECK,
        VIOLATION_TRIGGER,
        INITIATE_DISTRIBUTION,
        START_DISTRIBUTION,
        START_WHOLESALE,
        RETAIL_SELL,
    ];
}

/// Access guard attached to a contract operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modifier {
    OnlyOwner,
    OnlyRole(Role),
    /// Any registered address.
    Public,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContractKind {
    StorageContract,
    DistributionContract,
}

impl ContractKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContractKind::StorageContract => "StorageContract",
            ContractKind::DistributionContract => "DistributionContract",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "StorageContract" => Some(ContractKind::StorageContract),
            "DistributionContract" => Some(ContractKind::DistributionContract),
            _ => None,
        }
    }
}

impl fmt::Display for ContractKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallContext {
    pub caller: Address,
    pub contract: Address,
    /// Timestamp of the block the call lands in.
    pub timestamp: u64,
}

/// An event as produced by contract code, before the ledger stamps its location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub name: String,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Outcome {
    pub events: Vec<Emitted>,
    pub returns: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContractError {
    #[error("missing argument `{0}`")]
    MissingArgument(String),
    #[error("argument `{name}`: {reason}")]
    InvalidArgument { name: String, reason: String },
    #[error("unexpected init argument `{0}`")]
    UnexpectedInitArg(String),
    #[error("seed batch already added")]
    AlreadyAdded,
    #[error("seed quantity must be positive")]
    ZeroQuantity,
    #[error("no seed batch added yet")]
    NoSeed,
    #[error("bad violation category {0}: expected 0, 1 or 2")]
    BadCategory(u64),
    #[error("wrong stage: expected {expected:?}, found {found:?}")]
    WrongStage { expected: TraceStage, found: TraceStage },
    #[error("product id mismatch: contract is for `{expected}`, got `{found}`")]
    ProductMismatch { expected: String, found: String },
}

pub(crate) fn arg_u64(args: &Payload, name: &str) -> Result<u64, ContractError> {
    match args.get(name) {
        Some(Value::Uint(v)) => Ok(*v),
        Some(Value::Text(_)) => Err(ContractError::InvalidArgument {
            name: name.into(),
            reason: "expected an unsigned integer".into(),
        }),
        None => Err(ContractError::MissingArgument(name.into())),
    }
}

pub(crate) fn arg_str<'a>(args: &'a Payload, name: &str) -> Result<&'a str, ContractError> {
    match args.get(name) {
        Some(Value::Text(s)) => Ok(s),
        Some(Value::Uint(_)) => Err(ContractError::InvalidArgument {
            name: name.into(),
            reason: "expected a string".into(),
        }),
        None => Err(ContractError::MissingArgument(name.into())),
    }
}

/// A deployed contract instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ContractInstance {
    Storage(StorageContract),
    Distribution(DistributionContract),
}

impl ContractInstance {
    pub fn deploy(kind: ContractKind, owner: Address, init_args: &Payload) -> Result<Self, ContractError> {
        Ok(match kind {
            ContractKind::StorageContract => ContractInstance::Storage(StorageContract::deploy(owner, init_args)?),
            ContractKind::DistributionContract => {
                ContractInstance::Distribution(DistributionContract::deploy(owner, init_args)?)
            }
        })
    }

    pub fn kind(&self) -> ContractKind {
        match self {
            ContractInstance::Storage(_) => ContractKind::StorageContract,
            ContractInstance::Distribution(_) => ContractKind::DistributionContract,
        }
    }

    pub fn owner(&self) -> Address {
        match self {
            ContractInstance::Storage(c) => c.state().owner_address,
            ContractInstance::Distribution(c) => c.state().owner_address,
        }
    }

    /// `None` when the contract has no such operation.
    pub fn modifier(&self, op: &str) -> Option<Modifier> {
        match self {
            ContractInstance::Storage(_) => StorageContract::modifier(op),
            ContractInstance::Distribution(_) => DistributionContract::modifier(op),
        }
    }

    pub fn execute(&mut self, ctx: &CallContext, op: &str, args: &Payload) -> Result<Outcome, ContractError> {
        match self {
            ContractInstance::Storage(c) => c.execute(ctx, op, args),
            ContractInstance::Distribution(c) => c.execute(ctx, op, args),
        }
    }

    pub fn as_storage(&self) -> Option<&StorageContract> {
        match self {
            ContractInstance::Storage(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_distribution(&self) -> Option<&DistributionContract> {
        match self {
            ContractInstance::Distribution(c) => Some(c),
            _ => None,
        }
    }
}
