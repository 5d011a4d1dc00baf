//! Deterministic contract host.
//!
//! The runtime owns the ledger, the actor registry, per-contract role bindings
//! and the deployed contract instances. Every state change goes through
//! [`Runtime::invoke`] or one of the administrative calls and is recorded as a
//! transaction, so the whole world can be rebuilt with [`Runtime::replay`].

mod gas;
mod role;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{payload, CanonicalEncoder, Payload};
use crate::contracts::{
    CallContext, ContractError, ContractInstance, ContractKind, DistributionState, Modifier, SeedBatchState,
    TraceReport,
};
use crate::ids::{Address, Hash32};
use crate::ledger::{Block, EventRecord, Ledger, LedgerError, Transaction, TxStatus};

pub use gas::{gas_report, GasConfigError, GasCost, GasReport, GasRow, GasSchedule, DEFAULT_COSTS};
pub use role::Role;

/// Administrative operations recorded alongside contract calls. They carry no gas.
pub mod admin_ops {
    pub const REGISTER: &str = "register";
    pub const DEPLOY: &str = "deploy";
    pub const BIND_ROLE: &str = "bindRole";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuntimeError {
    #[error("owner {0} is not registered")]
    UnknownOwner(Address),
    #[error("actor {0} is not registered")]
    UnknownActor(Address),
    #[error("address {0} is already registered")]
    AlreadyRegistered(Address),
    #[error("no contract at {0}")]
    UnknownContract(Address),
    #[error("contract {contract} has no operation `{operation}`")]
    UnknownOperation { contract: Address, operation: String },
    #[error("{caller} is not the owner of {contract}")]
    NotOwner { contract: Address, caller: Address },
    #[error("the Owner role is fixed at deployment and cannot be bound")]
    OwnerRoleReserved,
    #[error("contract {0} is not a {1}")]
    WrongKind(Address, ContractKind),
    #[error("invalid init arguments: {0}")]
    InvalidInitArgs(ContractError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("ledger has no genesis block")]
    EmptyChain,
    #[error("replay diverged at block {block}: {reason}")]
    Divergence { block: u64, reason: String },
}

/// What a caller gets back from [`Runtime::invoke`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvokeResult {
    pub status: TxStatus,
    pub return_payload: Payload,
    pub gas_transaction: u64,
    pub gas_execution: u64,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone)]
pub struct Runtime {
    ledger: Ledger,
    schedule: GasSchedule,
    registry: BTreeSet<Address>,
    contracts: BTreeMap<Address, ContractInstance>,
    roles: BTreeMap<(Address, Address), Role>,
    next_nonce: u64,
    batch_size: usize,
    pending: Vec<Transaction>,
    pending_time: Option<u64>,
}

impl Runtime {
    /// Starts a fresh chain whose genesis block is stamped `genesis_time`.
    pub fn new(schedule: GasSchedule, genesis_time: u64) -> Self {
        let mut ledger = Ledger::new();
        ledger.init_genesis(genesis_time).expect("fresh ledger has no genesis");
        Self {
            ledger,
            schedule,
            registry: BTreeSet::new(),
            contracts: BTreeMap::new(),
            roles: BTreeMap::new(),
            next_nonce: 0,
            batch_size: 1,
            pending: Vec::new(),
            pending_time: None,
        }
    }

    /// Number of transactions per block. Pending transactions are also committed
    /// whenever the clock moves, so a block never mixes timestamps.
    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    /// Committed blocks only; see [`Runtime::flush`].
    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn schedule(&self) -> &GasSchedule {
        &self.schedule
    }

    pub fn is_registered(&self, address: &Address) -> bool {
        self.registry.contains(address)
    }

    pub fn contract(&self, address: &Address) -> Option<&ContractInstance> {
        self.contracts.get(address)
    }

    pub fn contracts(&self) -> impl Iterator<Item = (&Address, &ContractInstance)> {
        self.contracts.iter()
    }

    pub fn role_of(&self, contract: &Address, actor: &Address) -> Option<Role> {
        self.roles.get(&(*contract, *actor)).copied()
    }

    pub fn storage_state(&self, contract: &Address) -> Option<&SeedBatchState> {
        self.contracts.get(contract)?.as_storage().map(|c| c.state())
    }

    pub fn distribution_state(&self, contract: &Address) -> Option<&DistributionState> {
        self.contracts.get(contract)?.as_distribution().map(|c| c.state())
    }

    /// Distribution contract whose lot carries `product_id`.
    pub fn find_lot(&self, product_id: &str) -> Option<Address> {
        self.contracts.iter().find_map(|(addr, c)| {
            c.as_distribution()
                .filter(|d| d.state().product_id == product_id)
                .map(|_| *addr)
        })
    }

    pub fn register(&mut self, address: Address, now: u64) -> Result<(), RuntimeError> {
        if self.registry.contains(&address) {
            return Err(RuntimeError::AlreadyRegistered(address));
        }
        self.check_clock(now)?;
        let args = payload([("address", address)]);
        let event = EventRecord::new("ActorRegistered", Address::ZERO, args.clone());
        self.registry.insert(address);
        self.record(
            address,
            Address::ZERO,
            admin_ops::REGISTER,
            args,
            TxStatus::Ok,
            None,
            vec![event],
            now,
        )?;
        Ok(())
    }

    pub fn deploy(
        &mut self,
        kind: ContractKind,
        owner: Address,
        init_args: Payload,
        now: u64,
    ) -> Result<Address, RuntimeError> {
        if !self.registry.contains(&owner) {
            return Err(RuntimeError::UnknownOwner(owner));
        }
        self.check_clock(now)?;
        let instance = ContractInstance::deploy(kind, owner, &init_args).map_err(RuntimeError::InvalidInitArgs)?;
        let address = self.allocate_address(&owner);

        let mut args = init_args;
        args.insert("kind".into(), kind.as_str().into());
        let mut event_payload = args.clone();
        event_payload.insert("owner".into(), owner.into());
        let event = EventRecord::new(crate::contracts::distribution::DEPLOY_EVENT, address, event_payload);

        self.contracts.insert(address, instance);
        self.record(
            owner,
            address,
            admin_ops::DEPLOY,
            args,
            TxStatus::Ok,
            None,
            vec![event],
            now,
        )?;
        Ok(address)
    }

    /// Binds `actor` to `role` on `contract`, replacing any earlier binding.
    /// Only the contract owner may call this.
    pub fn bind_role(
        &mut self,
        caller: Address,
        contract: Address,
        actor: Address,
        role: Role,
        now: u64,
    ) -> Result<(), RuntimeError> {
        let instance = self
            .contracts
            .get(&contract)
            .ok_or(RuntimeError::UnknownContract(contract))?;
        if instance.owner() != caller {
            return Err(RuntimeError::NotOwner { contract, caller });
        }
        if role == Role::Owner {
            return Err(RuntimeError::OwnerRoleReserved);
        }
        if !self.registry.contains(&actor) {
            return Err(RuntimeError::UnknownActor(actor));
        }
        self.check_clock(now)?;
        let mut args = payload([("actor", actor)]);
        args.insert("role".into(), role.as_str().into());
        let event = EventRecord::new("RoleBound", contract, args.clone());
        self.roles.insert((contract, actor), role);
        self.record(
            caller,
            contract,
            admin_ops::BIND_ROLE,
            args,
            TxStatus::Ok,
            None,
            vec![event],
            now,
        )?;
        Ok(())
    }

    /// Runs a contract operation.
    ///
    /// The operation's modifier is checked first. Calls that fail authorization or
    /// revert are still recorded on the ledger, with zero gas and no events, and
    /// leave contract state unchanged.
    pub fn invoke(
        &mut self,
        caller: Address,
        contract: Address,
        operation: &str,
        args: Payload,
        now: u64,
    ) -> Result<InvokeResult, RuntimeError> {
        let instance = self
            .contracts
            .get(&contract)
            .ok_or(RuntimeError::UnknownContract(contract))?;
        let modifier = instance
            .modifier(operation)
            .ok_or_else(|| RuntimeError::UnknownOperation {
                contract,
                operation: operation.into(),
            })?;
        self.check_clock(now)?;

        if !self.authorized(&contract, instance.owner(), modifier, &caller) {
            return self.record(
                caller,
                contract,
                operation,
                args,
                TxStatus::Unauthorized,
                None,
                vec![],
                now,
            );
        }

        let ctx = CallContext {
            caller,
            contract,
            timestamp: now,
        };
        let instance = self.contracts.get_mut(&contract).expect("checked above");
        match instance.execute(&ctx, operation, &args) {
            Ok(outcome) => {
                let events = outcome
                    .events
                    .into_iter()
                    .map(|e| EventRecord::new(e.name, contract, e.payload))
                    .collect();
                let gas = self.schedule.get(operation).unwrap_or(GasCost::new(0, 0));
                let mut result =
                    self.record(caller, contract, operation, args, TxStatus::Ok, Some(gas), events, now)?;
                result.return_payload = outcome.returns;
                Ok(result)
            }
            Err(e) => self.record(
                caller,
                contract,
                operation,
                args,
                TxStatus::Reverted(e.to_string()),
                None,
                vec![],
                now,
            ),
        }
    }

    pub fn gas_report(&self) -> GasReport {
        gas_report(self.ledger.blocks())
    }

    pub fn trace(&self, contract: &Address) -> Result<TraceReport, RuntimeError> {
        let instance = self
            .contracts
            .get(contract)
            .ok_or(RuntimeError::UnknownContract(*contract))?;
        let lot = instance
            .as_distribution()
            .ok_or(RuntimeError::WrongKind(*contract, ContractKind::DistributionContract))?;
        Ok(TraceReport::from_state(*contract, lot.state()))
    }

    /// Commits any pending transactions as a block.
    pub fn flush(&mut self) -> Result<(), RuntimeError> {
        if let Some(time) = self.pending_time {
            self.commit_block(time)?;
        }
        Ok(())
    }

    /// Re-executes every recorded transaction against a fresh runtime and checks
    /// that each rebuilt block is identical to the recorded one.
    pub fn replay(blocks: &[Block], schedule: GasSchedule) -> Result<Runtime, ReplayError> {
        let genesis = blocks.first().ok_or(ReplayError::EmptyChain)?;
        let mut rt = Runtime::new(schedule, genesis.timestamp);
        rt.batch_size = usize::MAX;
        let diverged = |block: u64, reason: String| ReplayError::Divergence { block, reason };
        if rt.ledger.blocks()[0] != *genesis {
            return Err(diverged(0, "genesis block differs".into()));
        }
        for block in &blocks[1..] {
            for tx in &block.transactions {
                rt.apply_recorded(tx, block.timestamp)
                    .map_err(|e| diverged(block.index, format!("transaction {}: {e}", tx.nonce)))?;
            }
            rt.commit_block(block.timestamp)
                .map_err(|e| diverged(block.index, e.to_string()))?;
            if rt.ledger.head() != Some(block) {
                return Err(diverged(block.index, "rebuilt block differs".into()));
            }
        }
        rt.batch_size = 1;
        Ok(rt)
    }

    fn apply_recorded(&mut self, tx: &Transaction, now: u64) -> Result<(), RuntimeError> {
        match tx.operation.as_str() {
            admin_ops::REGISTER => self.register(tx.caller, now),
            admin_ops::DEPLOY => {
                let mut init = tx.args.clone();
                let kind = init
                    .remove("kind")
                    .and_then(|v| v.as_str().and_then(ContractKind::parse))
                    .ok_or(RuntimeError::InvalidInitArgs(ContractError::MissingArgument(
                        "kind".into(),
                    )))?;
                let address = self.deploy(kind, tx.caller, init, now)?;
                if address != tx.contract {
                    return Err(RuntimeError::UnknownContract(tx.contract));
                }
                Ok(())
            }
            admin_ops::BIND_ROLE => {
                let actor = tx
                    .args
                    .get("actor")
                    .and_then(|v| v.as_str())
                    .and_then(|s| s.parse().ok())
                    .ok_or(RuntimeError::InvalidInitArgs(ContractError::MissingArgument(
                        "actor".into(),
                    )))?;
                let role = tx
                    .args
                    .get("role")
                    .and_then(|v| v.as_str())
                    .and_then(Role::parse)
                    .ok_or(RuntimeError::InvalidInitArgs(ContractError::MissingArgument(
                        "role".into(),
                    )))?;
                self.bind_role(tx.caller, tx.contract, actor, role, now)
            }
            op => self
                .invoke(tx.caller, tx.contract, op, tx.args.clone(), now)
                .map(|_| ()),
        }
    }

    fn authorized(&self, contract: &Address, owner: Address, modifier: Modifier, caller: &Address) -> bool {
        match modifier {
            Modifier::OnlyOwner => *caller == owner,
            Modifier::OnlyRole(role) => {
                self.registry.contains(caller) && self.roles.get(&(*contract, *caller)) == Some(&role)
            }
            Modifier::Public => self.registry.contains(caller),
        }
    }

    fn allocate_address(&self, owner: &Address) -> Address {
        let mut enc = CanonicalEncoder::new();
        enc.str("contract").address(owner).u64(self.next_nonce);
        let digest = enc.digest();
        let mut bytes = [0u8; 20];
        bytes.copy_from_slice(&digest.as_bytes()[..20]);
        Address::from_bytes(bytes)
    }

    fn check_clock(&self, now: u64) -> Result<(), RuntimeError> {
        let head = self
            .pending_time
            .or_else(|| self.ledger.head().map(|b| b.timestamp))
            .unwrap_or(0);
        if now < head {
            return Err(LedgerError::ClockRegression { now, head }.into());
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &mut self,
        caller: Address,
        contract: Address,
        operation: &str,
        args: Payload,
        status: TxStatus,
        gas: Option<GasCost>,
        events: Vec<EventRecord>,
        now: u64,
    ) -> Result<InvokeResult, RuntimeError> {
        if self.pending_time.is_some_and(|t| t != now) {
            self.flush()?;
        }
        self.pending_time = Some(now);
        let gas = gas.unwrap_or(GasCost::new(0, 0));
        let mut tx = Transaction {
            tx_id: Hash32::ZERO,
            nonce: self.next_nonce,
            caller,
            contract,
            operation: operation.into(),
            args,
            status,
            gas_transaction: gas.transaction_cost,
            gas_execution: gas.execution_cost,
            events,
        };
        let block_index = self.ledger.head().map_or(0, |b| b.index + 1);
        tx.seal(block_index, now);
        self.next_nonce += 1;
        let result = InvokeResult {
            status: tx.status.clone(),
            return_payload: Payload::new(),
            gas_transaction: tx.gas_transaction,
            gas_execution: tx.gas_execution,
            events: tx.events.clone(),
        };
        self.pending.push(tx);
        if self.pending.len() >= self.batch_size {
            self.flush()?;
        }
        Ok(result)
    }

    fn commit_block(&mut self, now: u64) -> Result<(), RuntimeError> {
        let txs = std::mem::take(&mut self.pending);
        self.pending_time = None;
        self.ledger.append_block(txs, now)?;
        Ok(())
    }
}
