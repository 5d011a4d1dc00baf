//! Flat per-operation gas accounting.
//!
//! Transaction and execution cost are separate quantities and are never summed.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::ops;
use crate::ledger::Block;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasCost {
    pub transaction_cost: u64,
    pub execution_cost: u64,
}

impl GasCost {
    pub const fn new(transaction_cost: u64, execution_cost: u64) -> Self {
        Self {
            transaction_cost,
            execution_cost,
        }
    }
}

/// Reference per-operation costs: (transaction, execution).
pub const DEFAULT_COSTS: [(&str, GasCost); 9] = [
    (ops::ADD_SEED, GasCost::new(168_402, 144_314)),
    (ops::TEMPERATURE_SELF_CHECK, GasCost::new(50_681, 29_217)),
    (ops::HUMIDITY_SELF_CHECK, GasCost::new(50_812, 29_348)),
    (ops::LIGHT_EXPO_SELF_CHECK, GasCost::new(35_503, 14_039)),
    (ops::VIOLATION_TRIGGER, GasCost::new(48_625, 26_969)),
    (ops::INITIATE_DISTRIBUTION, GasCost::new(132_122, 108_610)),
    (ops::START_DISTRIBUTION, GasCost::new(106_442, 84_786)),
    (ops::START_WHOLESALE, GasCost::new(91_530, 69_874)),
    (ops::RETAIL_SELL, GasCost::new(91_464, 69_808)),
];

#[derive(Debug, Error)]
pub enum GasConfigError {
    #[error("gas schedule: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("gas schedule: unknown operation `{0}`")]
    UnknownOperation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GasSchedule {
    costs: BTreeMap<String, GasCost>,
}

impl Default for GasSchedule {
    fn default() -> Self {
        Self {
            costs: DEFAULT_COSTS.iter().map(|(op, cost)| (op.to_string(), *cost)).collect(),
        }
    }
}

impl GasSchedule {
    pub fn get(&self, operation: &str) -> Option<GasCost> {
        self.costs.get(operation).copied()
    }

    pub fn set(&mut self, operation: &str, cost: GasCost) -> Result<(), GasConfigError> {
        if !ops::ALL.contains(&operation) {
            return Err(GasConfigError::UnknownOperation(operation.into()));
        }
        self.costs.insert(operation.into(), cost);
        Ok(())
    }

    pub fn with_overrides(overrides: &BTreeMap<String, GasCost>) -> Result<Self, GasConfigError> {
        let mut schedule = Self::default();
        for (op, cost) in overrides {
            schedule.set(op, *cost)?;
        }
        Ok(schedule)
    }

    /// Parses one `[operation]` table per override; omitted operations keep their defaults.
    ///
    /// ```toml
    /// [addSeed]
    /// transaction_cost = 168402
    /// execution_cost = 144314
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self, GasConfigError> {
        let overrides: BTreeMap<String, GasCost> = toml::from_str(text)?;
        Self::with_overrides(&overrides)
    }

    /// Defaults overlaid with the costs charged by successful transactions on `blocks`.
    pub fn observed(blocks: &[Block]) -> Self {
        let mut schedule = Self::default();
        for tx in blocks.iter().flat_map(|b| &b.transactions) {
            if tx.status.is_ok() && ops::ALL.contains(&tx.operation.as_str()) {
                schedule
                    .costs
                    .insert(tx.operation.clone(), GasCost::new(tx.gas_transaction, tx.gas_execution));
            }
        }
        schedule
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, GasCost)> {
        self.costs.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GasRow {
    pub operation: String,
    pub calls: u64,
    pub total_transaction_gas: u64,
    pub total_execution_gas: u64,
}

/// Per-operation totals over successful contract calls, in gas-table order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GasReport {
    pub rows: Vec<GasRow>,
}

impl GasReport {
    pub fn row(&self, operation: &str) -> Option<&GasRow> {
        self.rows.iter().find(|r| r.operation == operation)
    }

    pub fn total_transaction_gas(&self) -> u64 {
        self.rows.iter().map(|r| r.total_transaction_gas).sum()
    }

    pub fn total_execution_gas(&self) -> u64 {
        self.rows.iter().map(|r| r.total_execution_gas).sum()
    }
}

pub fn gas_report(blocks: &[Block]) -> GasReport {
    let mut rows: Vec<GasRow> = ops::ALL
        .iter()
        .map(|op| GasRow {
            operation: op.to_string(),
            calls: 0,
            total_transaction_gas: 0,
            total_execution_gas: 0,
        })
        .collect();
    for tx in blocks.iter().flat_map(|b| &b.transactions) {
        if !tx.status.is_ok() {
            continue;
        }
        if let Some(row) = rows.iter_mut().find(|r| r.operation == tx.operation) {
            row.calls += 1;
            row.total_transaction_gas += tx.gas_transaction;
            row.total_execution_gas += tx.gas_execution;
        }
    }
    rows.retain(|r| r.calls > 0);
    GasReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_operation() {
        let s = GasSchedule::default();
        for op in ops::ALL {
            assert!(s.get(op).is_some(), "{op}");
        }
        assert_eq!(s.get(ops::ADD_SEED), Some(GasCost::new(168_402, 144_314)));
        assert_eq!(s.get(ops::RETAIL_SELL), Some(GasCost::new(91_464, 69_808)));
    }

    #[test]
    fn toml_overrides_fall_back_to_defaults() {
        let s = GasSchedule::from_toml_str("[retailSell]\ntransaction_cost = 1\nexecution_cost = 2\n").unwrap();
        assert_eq!(s.get(ops::RETAIL_SELL), Some(GasCost::new(1, 2)));
        assert_eq!(s.get(ops::START_WHOLESALE), Some(GasCost::new(91_530, 69_874)));
    }

    #[test]
    fn toml_rejects_unknown_operation_and_fields() {
        assert!(matches!(
            GasSchedule::from_toml_str("[mint]\ntransaction_cost = 1\nexecution_cost = 2\n"),
            Err(GasConfigError::UnknownOperation(_))
        ));
        assert!(GasSchedule::from_toml_str("[addSeed]\ntransaction_cost = 1\n").is_err());
        assert!(GasSchedule::from_toml_str("[addSeed]\ntransaction_cost = -1\nexecution_cost = 2\n").is_err());
    }

    #[test]
    fn empty_chain_has_empty_report() {
        assert!(gas_report(&[]).rows.is_empty());
    }
}
