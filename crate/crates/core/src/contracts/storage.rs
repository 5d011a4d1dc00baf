//! Seed storage contract: registers one seed batch and checks sensor readings
//! against its optimum temperature, humidity and light exposure.

use serde::{Deserialize, Serialize};

use crate::codec::{payload, Payload, Value};
use crate::ids::Address;
use crate::runtime::Role;

use super::{arg_str, arg_u64, ops, CallContext, ContractError, Emitted, Modifier, Outcome};

/// Result of comparing a reading against its optimum. Wire values are fixed:
/// 0 under, 1 over, 2 optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionState {
    Under,
    Over,
    Optimum,
}

impl ConditionState {
    pub const fn wire(self) -> u64 {
        match self {
            ConditionState::Under => 0,
            ConditionState::Over => 1,
            ConditionState::Optimum => 2,
        }
    }

    pub const fn from_wire(category: u64) -> Option<Self> {
        match category {
            0 => Some(ConditionState::Under),
            1 => Some(ConditionState::Over),
            2 => Some(ConditionState::Optimum),
            _ => None,
        }
    }

    /// Strict comparison: equality is optimum.
    pub fn compare(value: u64, optimum: u64) -> Self {
        if value > optimum {
            ConditionState::Over
        } else if value < optimum {
            ConditionState::Under
        } else {
            ConditionState::Optimum
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            ConditionState::Under => "under",
            ConditionState::Over => "over",
            ConditionState::Optimum => "optimum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationType {
    Temperature,
    Humidity,
    LightExposure,
    Non,
}

/// A monitored storage condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Factor {
    Temperature,
    Humidity,
    LightExposure,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Temperature, Factor::Humidity, Factor::LightExposure];

    /// Name used in `violationTrigger` arguments and event payloads.
    pub fn as_str(self) -> &'static str {
        match self {
            Factor::Temperature => "Temperature",
            Factor::Humidity => "Humidity",
            Factor::LightExposure => "LightExposure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Factor::ALL.into_iter().find(|f| f.as_str() == s)
    }

    /// Event names keep the historical "Hummidity" spelling.
    pub fn event_name(self) -> &'static str {
        match self {
            Factor::Temperature => "TemperatureViolation",
            Factor::Humidity => "HummidityViolation",
            Factor::LightExposure => "LightExposureViolation",
        }
    }

    pub fn check_operation(self) -> &'static str {
        match self {
            Factor::Temperature => ops::TEMPERATURE_SELF_CHECK,
            Factor::Humidity => ops::HUMIDITY_SELF_CHECK,
            Factor::LightExposure => ops::LIGHT_EXPO_SELF_CHECK,
        }
    }

    pub fn violation_type(self) -> ViolationType {
        match self {
            Factor::Temperature => ViolationType::Temperature,
            Factor::Humidity => ViolationType::Humidity,
            Factor::LightExposure => ViolationType::LightExposure,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Factor::Temperature => "TEMPERATURE",
            Factor::Humidity => "HUMIDITY",
            Factor::LightExposure => "LIGHT_EXPOSURE",
        }
    }

    fn noun(self) -> &'static str {
        match self {
            Factor::Temperature => "temperature",
            Factor::Humidity => "humidity",
            Factor::LightExposure => "light exposure",
        }
    }
}

/// Text returned by a self-check.
pub fn describe(factor: Factor, condition: ConditionState, value: u64, optimum: u64) -> String {
    let label = factor.label();
    match condition {
        ConditionState::Over => format!("{label} OVER THRESHOLD: {value} > {optimum}"),
        ConditionState::Under => format!("{label} UNDER THRESHOLD: {value} < {optimum}"),
        ConditionState::Optimum => format!("{label} OPTIMUM: {value}"),
    }
}

/// Contract attributes. `temp_cond`/`hum_cond`/`light_cond` hold the latest check result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedBatchState {
    pub owner_address: Address,
    pub storage_address: Address,
    pub seed_name: String,
    pub batch_id: String,
    pub quantity: u64,
    pub unit_price: u64,
    pub optimum_temp: u64,
    pub optimum_hum: u64,
    pub optimum_light_expo: u64,
    pub storage_date: u64,
    pub temp_cond: ConditionState,
    pub hum_cond: ConditionState,
    pub light_cond: ConditionState,
    pub violation_type: ViolationType,
}

impl SeedBatchState {
    fn new(owner: Address) -> Self {
        Self {
            owner_address: owner,
            storage_address: Address::ZERO,
            seed_name: String::new(),
            batch_id: String::new(),
            quantity: 0,
            unit_price: 0,
            optimum_temp: 0,
            optimum_hum: 0,
            optimum_light_expo: 0,
            storage_date: 0,
            temp_cond: ConditionState::Optimum,
            hum_cond: ConditionState::Optimum,
            light_cond: ConditionState::Optimum,
            violation_type: ViolationType::Non,
        }
    }

    pub fn is_seeded(&self) -> bool {
        self.quantity > 0
    }

    pub fn optimum(&self, factor: Factor) -> u64 {
        match factor {
            Factor::Temperature => self.optimum_temp,
            Factor::Humidity => self.optimum_hum,
            Factor::LightExposure => self.optimum_light_expo,
        }
    }

    pub fn condition(&self, factor: Factor) -> ConditionState {
        match factor {
            Factor::Temperature => self.temp_cond,
            Factor::Humidity => self.hum_cond,
            Factor::LightExposure => self.light_cond,
        }
    }

    fn condition_mut(&mut self, factor: Factor) -> &mut ConditionState {
        match factor {
            Factor::Temperature => &mut self.temp_cond,
            Factor::Humidity => &mut self.hum_cond,
            Factor::LightExposure => &mut self.light_cond,
        }
    }
}

/// Arguments of `addSeed`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedEntry {
    pub seed_name: String,
    pub batch_id: String,
    pub quantity: u64,
    pub unit_price: u64,
    pub optimum_temp: u64,
    pub optimum_hum: u64,
    pub optimum_light_expo: u64,
}

impl SeedEntry {
    pub fn from_args(args: &Payload) -> Result<Self, ContractError> {
        Ok(Self {
            seed_name: arg_str(args, "seed_name")?.to_owned(),
            batch_id: arg_str(args, "batch_id")?.to_owned(),
            quantity: arg_u64(args, "quantity")?,
            unit_price: arg_u64(args, "unit_price")?,
            optimum_temp: arg_u64(args, "optimum_temp")?,
            optimum_hum: arg_u64(args, "optimum_hum")?,
            optimum_light_expo: arg_u64(args, "optimum_light_expo")?,
        })
    }

    pub fn to_args(&self) -> Payload {
        let mut p = payload([
            ("quantity", self.quantity),
            ("unit_price", self.unit_price),
            ("optimum_temp", self.optimum_temp),
            ("optimum_hum", self.optimum_hum),
            ("optimum_light_expo", self.optimum_light_expo),
        ]);
        p.insert("seed_name".into(), self.seed_name.clone().into());
        p.insert("batch_id".into(), self.batch_id.clone().into());
        p
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StorageContract {
    state: SeedBatchState,
}

impl StorageContract {
    pub fn new(owner: Address) -> Self {
        Self {
            state: SeedBatchState::new(owner),
        }
    }

    pub fn deploy(owner: Address, init_args: &Payload) -> Result<Self, ContractError> {
        if let Some(key) = init_args.keys().next() {
            return Err(ContractError::UnexpectedInitArg(key.clone()));
        }
        Ok(Self::new(owner))
    }

    pub fn state(&self) -> &SeedBatchState {
        &self.state
    }

    pub fn modifier(op: &str) -> Option<Modifier> {
        match op {
            ops::ADD_SEED
            | ops::TEMPERATURE_SELF_CHECK
            | ops::HUMIDITY_SELF_CHECK
            | ops::LIGHT_EXPO_SELF_CHECK
            | ops::VIOLATION_TRIGGER => Some(Modifier::OnlyRole(Role::Storage)),
            _ => None,
        }
    }

    pub fn execute(&mut self, ctx: &CallContext, op: &str, args: &Payload) -> Result<Outcome, ContractError> {
        match op {
            ops::ADD_SEED => {
                let entry = SeedEntry::from_args(args)?;
                Ok(Outcome {
                    events: self.add_seed(ctx, entry)?,
                    returns: Payload::new(),
                })
            }
            ops::VIOLATION_TRIGGER => {
                let name = arg_str(args, "vtype")?;
                let factor = Factor::parse(name).ok_or_else(|| ContractError::InvalidArgument {
                    name: "vtype".into(),
                    reason: format!("unknown violation type `{name}`"),
                })?;
                let category = arg_u64(args, "category")?;
                Ok(Outcome {
                    events: self.violation_trigger(ctx, factor, category)?,
                    returns: Payload::new(),
                })
            }
            _ => {
                let factor = Factor::ALL
                    .into_iter()
                    .find(|f| f.check_operation() == op)
                    .ok_or_else(|| ContractError::InvalidArgument {
                        name: "operation".into(),
                        reason: format!("`{op}` is not a storage operation"),
                    })?;
                let value = arg_u64(args, "value")?;
                let (description, events) = self.self_check(ctx, factor, value)?;
                Ok(Outcome {
                    events,
                    returns: payload([("description", description)]),
                })
            }
        }
    }

    pub fn add_seed(&mut self, ctx: &CallContext, entry: SeedEntry) -> Result<Vec<Emitted>, ContractError> {
        if self.state.is_seeded() {
            return Err(ContractError::AlreadyAdded);
        }
        if entry.quantity == 0 {
            return Err(ContractError::ZeroQuantity);
        }
        let s = &mut self.state;
        s.storage_address = ctx.caller;
        s.seed_name = entry.seed_name;
        s.batch_id = entry.batch_id;
        s.quantity = entry.quantity;
        s.unit_price = entry.unit_price;
        s.optimum_temp = entry.optimum_temp;
        s.optimum_hum = entry.optimum_hum;
        s.optimum_light_expo = entry.optimum_light_expo;
        s.storage_date = ctx.timestamp;

        let mut event = payload([
            ("quantity", s.quantity),
            ("unit_price", s.unit_price),
            ("optimum_temp", s.optimum_temp),
            ("optimum_hum", s.optimum_hum),
            ("optimum_light_expo", s.optimum_light_expo),
            ("storage_date", s.storage_date),
        ]);
        event.insert("storage_address".into(), ctx.caller.into());
        event.insert("seed_name".into(), s.seed_name.clone().into());
        event.insert("batch_id".into(), s.batch_id.clone().into());
        Ok(vec![Emitted {
            name: "seedStored".into(),
            payload: event,
        }])
    }

    /// Compares `value` with the stored optimum and records the result through
    /// [`Self::violation_trigger`]. Returns the description text and emitted events.
    pub fn self_check(
        &mut self,
        ctx: &CallContext,
        factor: Factor,
        value: u64,
    ) -> Result<(String, Vec<Emitted>), ContractError> {
        if !self.state.is_seeded() {
            return Err(ContractError::NoSeed);
        }
        let optimum = self.state.optimum(factor);
        let condition = ConditionState::compare(value, optimum);
        let events = self.violation_trigger(ctx, factor, condition.wire())?;
        Ok((describe(factor, condition, value, optimum), events))
    }

    pub fn violation_trigger(
        &mut self,
        ctx: &CallContext,
        factor: Factor,
        category: u64,
    ) -> Result<Vec<Emitted>, ContractError> {
        let condition = ConditionState::from_wire(category).ok_or(ContractError::BadCategory(category))?;
        *self.state.condition_mut(factor) = condition;
        self.state.violation_type = match condition {
            ConditionState::Optimum => ViolationType::Non,
            _ => factor.violation_type(),
        };
        let message = match condition {
            ConditionState::Optimum => format!("{} is optimum", factor.noun()),
            c => format!("{} is {} the threshold", factor.noun(), c.word()),
        };
        let mut event = payload([("category", category)]);
        event.insert("contract".into(), ctx.contract.into());
        event.insert("violation_type".into(), factor.as_str().into());
        event.insert("condition".into(), Value::from(condition.word()));
        event.insert("message".into(), message.into());
        Ok(vec![Emitted {
            name: factor.event_name().into(),
            payload: event,
        }])
    }
}
