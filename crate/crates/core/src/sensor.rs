//! Simulated storage sensors.
//!
//! Readings are a pure function of `(config, tick)`: noise comes from a
//! counter-based generator keyed on the seed, the sensor id and the tick, so
//! there is no RNG state to thread through and the order sensors are visited
//! in does not matter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::{Broker, BrokerClient, Session};
use crate::contracts::Factor;

pub const TOPIC_ROOT: &str = "agri/storage";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorKind {
    Temperature,
    Humidity,
    Light,
}

impl SensorKind {
    pub const ALL: [SensorKind; 3] = [SensorKind::Temperature, SensorKind::Humidity, SensorKind::Light];

    /// Last topic segment.
    pub fn segment(self) -> &'static str {
        match self {
            SensorKind::Temperature => "temperature",
            SensorKind::Humidity => "humidity",
            SensorKind::Light => "light",
        }
    }

    pub fn from_segment(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.segment() == s)
    }

    pub fn factor(self) -> Factor {
        match self {
            SensorKind::Temperature => Factor::Temperature,
            SensorKind::Humidity => Factor::Humidity,
            SensorKind::Light => Factor::LightExposure,
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.segment())
    }
}

pub fn topic_for(storage_id: &str, kind: SensorKind) -> String {
    format!("{TOPIC_ROOT}/{storage_id}/{}", kind.segment())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub sensor_id: String,
    pub storage_id: String,
    pub kind: SensorKind,
    pub baseline: u64,
    #[serde(default)]
    pub noise_amplitude: u64,
    #[serde(default)]
    pub drift_per_tick: i64,
    #[serde(default = "one")]
    pub period_ticks: u64,
    #[serde(default)]
    pub rng_seed: u64,
}

fn one() -> u64 {
    1
}

impl SensorConfig {
    pub fn topic(&self) -> String {
        topic_for(&self.storage_id, self.kind)
    }

    pub fn emits_at(&self, tick: u64) -> bool {
        tick.is_multiple_of(self.period_ticks)
    }

    pub fn value_at(&self, tick: u64) -> u64 {
        let raw = self.baseline as i128
            + self.drift_per_tick as i128 * tick as i128
            + noise(self.rng_seed, &self.sensor_id, tick, self.noise_amplitude);
        raw.clamp(0, u64::MAX as i128) as u64
    }

    /// Emissions over ticks `0..total_ticks`.
    pub fn emission_count(&self, total_ticks: u64) -> u64 {
        total_ticks.div_ceil(self.period_ticks)
    }
}

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("broker unavailable: {0}")]
    BrokerUnavailable(String),
    #[error("sensor config: {0}")]
    InvalidConfig(String),
}

/// List of sensors, written as `[[sensors]]` tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    #[serde(default)]
    pub sensors: Vec<SensorConfig>,
}

impl FleetConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SensorError> {
        let fleet: FleetConfig = toml::from_str(text).map_err(|e| SensorError::InvalidConfig(e.to_string()))?;
        validate(&fleet.sensors)?;
        Ok(fleet)
    }
}

pub fn validate(configs: &[SensorConfig]) -> Result<(), SensorError> {
    let mut ids = BTreeSet::new();
    for c in configs {
        let bad = |why: &str| SensorError::InvalidConfig(format!("sensor `{}`: {why}", c.sensor_id));
        if c.period_ticks == 0 {
            return Err(bad("period_ticks must be at least 1"));
        }
        if c.storage_id.is_empty() || c.storage_id.contains(['/', '#', '+']) {
            return Err(bad("storage_id must be a single topic segment"));
        }
        if !ids.insert(&c.sensor_id) {
            return Err(bad("duplicate sensor_id"));
        }
    }
    Ok(())
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the sensor id, used to give each sensor its own stream.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Uniform integer in `[-amplitude, amplitude]`.
pub fn noise(seed: u64, sensor_id: &str, tick: u64, amplitude: u64) -> i128 {
    if amplitude == 0 {
        return 0;
    }
    let key = mix64(seed ^ fnv1a64(sensor_id.as_bytes()));
    let word = mix64(key.wrapping_add(tick.wrapping_mul(GOLDEN)));
    let span = 2 * amplitude as u128 + 1;
    (word as u128 % span) as i128 - amplitude as i128
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reading {
    pub topic: String,
    pub sensor_id: String,
    pub tick: u64,
    pub value: u64,
}

/// JSON body published on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadingPayload {
    pub sensor_id: String,
    pub tick: u64,
    pub value: u64,
}

impl Reading {
    pub fn body(&self) -> Vec<u8> {
        serde_json::to_vec(&ReadingPayload {
            sensor_id: self.sensor_id.clone(),
            tick: self.tick,
            value: self.value,
        })
        .expect("plain struct serializes")
    }
}

pub trait Publisher {
    fn publish(&mut self, topic: &str, body: &[u8], retain: bool) -> Result<(), SensorError>;
}

/// Publishes into an in-process broker through an existing session.
pub struct LocalPublisher {
    broker: Broker,
    session: Session,
}

impl LocalPublisher {
    pub fn connect(broker: &Broker, client_id: &str) -> Result<Self, SensorError> {
        let session = broker
            .connect(client_id)
            .map_err(|e| SensorError::BrokerUnavailable(e.to_string()))?;
        Ok(Self {
            broker: broker.clone(),
            session,
        })
    }
}

impl Publisher for LocalPublisher {
    fn publish(&mut self, topic: &str, body: &[u8], retain: bool) -> Result<(), SensorError> {
        self.broker
            .publish(&self.session, topic, body, retain)
            .map(|_| ())
            .map_err(|e| SensorError::BrokerUnavailable(e.to_string()))
    }
}

impl Drop for LocalPublisher {
    fn drop(&mut self) {
        self.broker.disconnect(&self.session);
    }
}

impl Publisher for BrokerClient {
    fn publish(&mut self, topic: &str, body: &[u8], retain: bool) -> Result<(), SensorError> {
        BrokerClient::publish(self, topic, body, retain).map_err(|e| SensorError::BrokerUnavailable(e.to_string()))
    }
}

/// Readings due at `tick`, in config order, without publishing them.
pub fn readings_at(configs: &[SensorConfig], tick: u64) -> Vec<Reading> {
    configs
        .iter()
        .filter(|c| c.emits_at(tick))
        .map(|c| Reading {
            topic: c.topic(),
            sensor_id: c.sensor_id.clone(),
            tick,
            value: c.value_at(tick),
        })
        .collect()
}

/// Publishes every reading due at `tick` with `retain` set.
pub fn tick_fleet(
    configs: &[SensorConfig],
    tick: u64,
    publisher: &mut impl Publisher,
) -> Result<Vec<Reading>, SensorError> {
    let readings = readings_at(configs, tick);
    for r in &readings {
        publisher.publish(&r.topic, &r.body(), true)?;
    }
    Ok(readings)
}

/// Runs ticks `0..total_ticks` and returns per-sensor emission counts.
pub fn run(
    configs: &[SensorConfig],
    total_ticks: u64,
    publisher: &mut impl Publisher,
) -> Result<BTreeMap<String, u64>, SensorError> {
    let mut counts: BTreeMap<String, u64> = configs.iter().map(|c| (c.sensor_id.clone(), 0)).collect();
    for tick in 0..total_ticks {
        for r in tick_fleet(configs, tick, publisher)? {
            *counts.entry(r.sensor_id).or_default() += 1;
        }
    }
    Ok(counts)
}
