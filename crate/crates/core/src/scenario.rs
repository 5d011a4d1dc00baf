//! End-to-end scenario runner.
//!
//! A scenario is a TOML file describing actors, seed batches, product lots,
//! the sensor fleet, gateway bindings, scripted contract calls and gas
//! overrides. Running one is single-threaded and driven by a logical clock
//! (`start + tick * seconds_per_tick`), so identical configs produce
//! byte-identical outputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::Broker;
use crate::codec::{Payload, Value};
use crate::contracts::{ops, ContractKind, SeedEntry, TraceReport};
use crate::gateway::{CheckBinding, Gateway};
use crate::ids::Address;
use crate::ledger::{jsonl, EventFilter, EventRecord};
use crate::runtime::{GasCost, GasSchedule, Role, Runtime};
use crate::sensor::{self, LocalPublisher, Reading, SensorConfig, SensorKind};

pub const DEMO_NAME: &str = "paper-demo";
pub const DEMO_SCENARIO: &str = include_str!("../scenarios/paper-demo.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    #[serde(default)]
    pub start: u64,
    #[serde(default = "one")]
    pub seconds_per_tick: u64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            start: 0,
            seconds_per_tick: 1,
        }
    }
}

impl ClockConfig {
    pub fn at(&self, tick: u64) -> u64 {
        self.start + tick * self.seconds_per_tick
    }
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorConfig {
    pub name: String,
    pub role: Role,
    /// Defaults to an address derived from `name`.
    pub address: Option<Address>,
}

impl ActorConfig {
    pub fn address(&self) -> Address {
        self.address.unwrap_or_else(|| Address::from_label(&self.name))
    }
}

/// One storage facility holding one seed batch, backed by its own storage contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub storage_id: String,
    pub owner: String,
    pub storage: String,
    pub seed_name: String,
    pub batch_id: String,
    pub quantity: u64,
    pub unit_price: u64,
    pub optimum_temp: u64,
    pub optimum_hum: u64,
    pub optimum_light_expo: u64,
}

/// One product lot, backed by its own distribution contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LotConfig {
    pub product_id: String,
    pub owner: String,
    pub producer: String,
    pub distributor: String,
    pub wholesaler: String,
    pub retailer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingConfig {
    pub storage_id: String,
    /// Defaults to the batch's storage actor.
    pub storage_actor: Option<String>,
    pub check_every_ticks: u64,
    #[serde(default = "all_kinds")]
    pub kinds: Vec<SensorKind>,
}

fn all_kinds() -> Vec<SensorKind> {
    SensorKind::ALL.to_vec()
}

/// A scripted contract call. `target` names a storage id or a product id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    pub tick: u64,
    pub caller: String,
    pub target: String,
    pub op: String,
    #[serde(default)]
    pub args: BTreeMap<String, toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub total_ticks: u64,
    /// Maximum transactions per block; a block never spans two clock values.
    #[serde(default = "one_usize")]
    pub block_size: usize,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub actors: Vec<ActorConfig>,
    #[serde(default)]
    pub batches: Vec<BatchConfig>,
    #[serde(default)]
    pub lots: Vec<LotConfig>,
    #[serde(default)]
    pub sensors: Vec<SensorConfig>,
    #[serde(default)]
    pub bindings: Vec<BindingConfig>,
    #[serde(default)]
    pub steps: Vec<StepConfig>,
    #[serde(default)]
    pub gas: BTreeMap<String, GasCost>,
}

fn one_usize() -> usize {
    1
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario config: {0}")]
    Config(String),
    #[error("scenario failed: {0}")]
    Runtime(String),
    #[error("writing outputs: {0}")]
    Io(#[from] io::Error),
}

impl ScenarioError {
    /// Process exit code: 2 for bad configs, 1 for anything that failed while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Config(_) => 2,
            ScenarioError::Runtime(_) | ScenarioError::Io(_) => 1,
        }
    }
}

fn config_err(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Config(msg.into())
}

fn runtime_err(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Runtime(e.to_string())
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or the bundled scenario of that name if no such file exists.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        if !path.exists() && path.as_os_str() == DEMO_NAME {
            return Self::demo();
        }
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn demo() -> Result<Self, ScenarioError> {
        Self::from_toml_str(DEMO_SCENARIO)
    }

    pub fn gas_schedule(&self) -> Result<GasSchedule, ScenarioError> {
        GasSchedule::with_overrides(&self.gas).map_err(|e| config_err(e.to_string()))
    }

    fn actor(&self, name: &str) -> Option<&ActorConfig> {
        self.actors.iter().find(|a| a.name == name)
    }

    fn expect_actor(&self, name: &str, role: Option<Role>, context: &str) -> Result<(), ScenarioError> {
        let actor = self
            .actor(name)
            .ok_or_else(|| config_err(format!("{context}: unknown actor `{name}`")))?;
        if let Some(role) = role {
            if actor.role != role {
                return Err(config_err(format!(
                    "{context}: actor `{name}` has role {}, expected {role}",
                    actor.role
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.clock.seconds_per_tick == 0 {
            return Err(config_err("clock.seconds_per_tick must be at least 1"));
        }
        if self.block_size == 0 {
            return Err(config_err("block_size must be at least 1"));
        }
        self.clock
            .start
            .checked_add(self.total_ticks.saturating_mul(self.clock.seconds_per_tick))
            .ok_or_else(|| config_err("clock overflows u64"))?;

        let mut names = BTreeSet::new();
        let mut addresses = BTreeSet::new();
        for a in &self.actors {
            if !names.insert(&a.name) {
                return Err(config_err(format!("duplicate actor `{}`", a.name)));
            }
            if !addresses.insert(a.address()) {
                return Err(config_err(format!("actor `{}` reuses an address", a.name)));
            }
        }

        let mut targets = BTreeSet::new();
        for b in &self.batches {
            let ctx = format!("batch `{}`", b.storage_id);
            if b.storage_id.is_empty() || b.storage_id.contains(['/', '#', '+']) {
                return Err(config_err(format!("{ctx}: storage_id must be a single topic segment")));
            }
            if !targets.insert(b.storage_id.as_str()) {
                return Err(config_err(format!("{ctx}: duplicate target name")));
            }
            if b.quantity == 0 {
                return Err(config_err(format!("{ctx}: quantity must be positive")));
            }
            self.expect_actor(&b.owner, Some(Role::Owner), &ctx)?;
            self.expect_actor(&b.storage, Some(Role::Storage), &ctx)?;
        }
        for l in &self.lots {
            let ctx = format!("lot `{}`", l.product_id);
            if !targets.insert(l.product_id.as_str()) {
                return Err(config_err(format!("{ctx}: duplicate target name")));
            }
            self.expect_actor(&l.owner, Some(Role::Owner), &ctx)?;
            self.expect_actor(&l.producer, Some(Role::Producer), &ctx)?;
            self.expect_actor(&l.distributor, Some(Role::Distributor), &ctx)?;
            self.expect_actor(&l.wholesaler, Some(Role::Wholesaler), &ctx)?;
            if let Some(r) = &l.retailer {
                self.expect_actor(r, Some(Role::Retailer), &ctx)?;
            }
        }

        sensor::validate(&self.sensors).map_err(|e| config_err(e.to_string()))?;

        for b in &self.bindings {
            let ctx = format!("binding `{}`", b.storage_id);
            let batch = self
                .batches
                .iter()
                .find(|x| x.storage_id == b.storage_id)
                .ok_or_else(|| config_err(format!("{ctx}: no batch with that storage_id")))?;
            if b.check_every_ticks == 0 {
                return Err(config_err(format!("{ctx}: check_every_ticks must be at least 1")));
            }
            if let Some(actor) = &b.storage_actor {
                self.expect_actor(actor, None, &ctx)?;
                if *actor != batch.storage {
                    return Err(config_err(format!(
                        "{ctx}: storage_actor `{actor}` is not the batch's storage actor"
                    )));
                }
            }
        }

        for (i, s) in self.steps.iter().enumerate() {
            let ctx = format!("step {i}");
            self.expect_actor(&s.caller, None, &ctx)?;
            if !targets.contains(s.target.as_str()) {
                return Err(config_err(format!("{ctx}: unknown target `{}`", s.target)));
            }
            if s.tick >= self.total_ticks {
                return Err(config_err(format!(
                    "{ctx}: tick {} is outside 0..{}",
                    s.tick, self.total_ticks
                )));
            }
            step_args(s).map_err(|e| config_err(format!("{ctx}: {e}")))?;
        }

        self.gas_schedule()?;
        Ok(())
    }
}

fn step_args(step: &StepConfig) -> Result<Payload, String> {
    step.args
        .iter()
        .map(|(k, v)| {
            let v = match v {
                toml::Value::Integer(i) if *i >= 0 => Value::Uint(*i as u64),
                toml::Value::String(s) => Value::Text(s.clone()),
                other => return Err(format!("argument `{k}`: unsupported value {other}")),
            };
            Ok((k.clone(), v))
        })
        .collect()
}

/// Everything a run produced. Files are rendered from this.
pub struct ScenarioOutcome {
    pub runtime: Runtime,
    /// Every reading the fleet published, in publish order.
    pub readings: Vec<Reading>,
    /// product id → lot contract.
    pub lots: BTreeMap<String, Address>,
    /// storage id → storage contract.
    pub batches: BTreeMap<String, Address>,
}

pub fn run(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, ScenarioError> {
    cfg.validate()?;
    let clock = &cfg.clock;
    let mut rt = Runtime::new(cfg.gas_schedule()?, clock.at(0)).with_batch_size(cfg.block_size);
    let t0 = clock.at(0);
    let addr = |name: &str| cfg.actor(name).expect("validated").address();

    for a in &cfg.actors {
        rt.register(a.address(), t0).map_err(runtime_err)?;
    }

    let mut batches = BTreeMap::new();
    for b in &cfg.batches {
        let contract = rt
            .deploy(ContractKind::StorageContract, addr(&b.owner), Payload::new(), t0)
            .map_err(runtime_err)?;
        rt.bind_role(addr(&b.owner), contract, addr(&b.storage), Role::Storage, t0)
            .map_err(runtime_err)?;
        let entry = SeedEntry {
            seed_name: b.seed_name.clone(),
            batch_id: b.batch_id.clone(),
            quantity: b.quantity,
            unit_price: b.unit_price,
            optimum_temp: b.optimum_temp,
            optimum_hum: b.optimum_hum,
            optimum_light_expo: b.optimum_light_expo,
        };
        let r = rt
            .invoke(addr(&b.storage), contract, ops::ADD_SEED, entry.to_args(), t0)
            .map_err(runtime_err)?;
        if !r.status.is_ok() {
            return Err(runtime_err(format!("addSeed for `{}`: {:?}", b.storage_id, r.status)));
        }
        batches.insert(b.storage_id.clone(), contract);
    }

    let mut lots = BTreeMap::new();
    for l in &cfg.lots {
        let init: Payload = [("product_id".to_string(), Value::from(l.product_id.as_str()))].into();
        let contract = rt
            .deploy(ContractKind::DistributionContract, addr(&l.owner), init, t0)
            .map_err(runtime_err)?;
        let mut bindings = vec![
            (&l.producer, Role::Producer),
            (&l.distributor, Role::Distributor),
            (&l.wholesaler, Role::Wholesaler),
        ];
        if let Some(r) = &l.retailer {
            bindings.push((r, Role::Retailer));
        }
        for (who, role) in bindings {
            rt.bind_role(addr(&l.owner), contract, addr(who), role, t0)
                .map_err(runtime_err)?;
        }
        lots.insert(l.product_id.clone(), contract);
    }

    let bindings: Vec<CheckBinding> = cfg
        .bindings
        .iter()
        .map(|b| {
            let batch = cfg
                .batches
                .iter()
                .find(|x| x.storage_id == b.storage_id)
                .expect("validated");
            CheckBinding {
                storage_id: b.storage_id.clone(),
                contract: batches[&b.storage_id],
                storage_actor: addr(b.storage_actor.as_deref().unwrap_or(&batch.storage)),
                check_every_ticks: b.check_every_ticks,
                kinds: b.kinds.clone(),
            }
        })
        .collect();

    let broker = Broker::new();
    let gateway = Gateway::connect(&broker, "field-gateway").map_err(runtime_err)?;
    let mut fleet = LocalPublisher::connect(&broker, "sensor-fleet").map_err(runtime_err)?;

    let mut steps: Vec<&StepConfig> = cfg.steps.iter().collect();
    steps.sort_by_key(|s| s.tick);
    let mut steps = steps.into_iter().peekable();

    let mut readings = Vec::new();
    for tick in 0..cfg.total_ticks {
        let now = clock.at(tick);
        readings.extend(sensor::tick_fleet(&cfg.sensors, tick, &mut fleet).map_err(runtime_err)?);
        gateway.pump().map_err(runtime_err)?;
        let run = gateway.run_checks(&mut rt, &bindings, tick, now);
        for rec in run.results {
            let r = rec.result.map_err(runtime_err)?;
            info!(
                "tick {tick}: {} {} check value {} -> {:?}",
                rec.storage_id, rec.kind, rec.reading.value, r.status
            );
        }
        for skip in run.skipped {
            info!(
                "tick {tick}: {} {} check skipped, no reading yet",
                skip.storage_id, skip.kind
            );
        }
        while let Some(step) = steps.next_if(|s| s.tick == tick) {
            let target = batches
                .get(&step.target)
                .or_else(|| lots.get(&step.target))
                .copied()
                .expect("validated");
            let args = step_args(step).expect("validated");
            let r = rt
                .invoke(addr(&step.caller), target, &step.op, args, now)
                .map_err(runtime_err)?;
            info!(
                "tick {tick}: {} {} on {} -> {:?}",
                step.caller, step.op, step.target, r.status
            );
        }
    }
    rt.flush().map_err(runtime_err)?;

    Ok(ScenarioOutcome {
        runtime: rt,
        readings,
        lots,
        batches,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output types serialize");
    s.push('\n');
    s
}

impl ScenarioOutcome {
    pub fn events(&self) -> Vec<EventRecord> {
        self.runtime.ledger().query_events(&EventFilter::default())
    }

    pub fn traces(&self) -> Result<BTreeMap<String, TraceReport>, ScenarioError> {
        self.lots
            .iter()
            .map(|(id, addr)| Ok((id.clone(), self.runtime.trace(addr).map_err(runtime_err)?)))
            .collect()
    }

    /// Output files as (file name, contents), in a fixed order.
    pub fn render(&self) -> Result<Vec<(String, String)>, ScenarioError> {
        let blocks = self.runtime.ledger().blocks();
        let mut files = vec![
            ("ledger.jsonl".to_string(), jsonl::to_jsonl(blocks)),
            ("events.json".to_string(), to_pretty_json(&self.events())),
            ("gas.json".to_string(), to_pretty_json(&self.runtime.gas_report())),
        ];
        for (id, report) in self.traces()? {
            files.push((format!("trace-{id}.json"), to_pretty_json(&report)));
        }
        Ok(files)
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), ScenarioError> {
        fs::create_dir_all(out_dir)?;
        for (name, contents) in self.render()? {
            fs::write(out_dir.join(name), contents)?;
        }
        Ok(())
    }
}
