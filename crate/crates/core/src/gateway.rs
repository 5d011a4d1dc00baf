//! Bridge from sensor topics to storage-contract self-checks.
//!
//! The gateway keeps the newest reading per `(storage_id, kind)` and, on each
//! binding's check interval, submits that value to the matching self-check.

use std::collections::BTreeMap;
use std::sync::RwLock;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::broker::{Broker, BrokerError, Message, Session};
use crate::codec::payload;
use crate::ids::Address;
use crate::runtime::{InvokeResult, Runtime, RuntimeError};
use crate::sensor::{ReadingPayload, SensorKind, TOPIC_ROOT};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("malformed topic `{0}`")]
    MalformedTopic(String),
    #[error("malformed reading on `{topic}`: {reason}")]
    MalformedPayload { topic: String, reason: String },
}

/// `agri/storage/<id>/<kind>` → `(id, kind)`.
pub fn parse_topic(topic: &str) -> Result<(String, SensorKind), GatewayError> {
    let bad = || GatewayError::MalformedTopic(topic.to_string());
    let rest = topic
        .strip_prefix(TOPIC_ROOT)
        .and_then(|r| r.strip_prefix('/'))
        .ok_or_else(bad)?;
    let (id, kind) = rest.split_once('/').ok_or_else(bad)?;
    if id.is_empty() || kind.contains('/') {
        return Err(bad());
    }
    let kind = SensorKind::from_segment(kind).ok_or_else(bad)?;
    Ok((id.to_string(), kind))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachedReading {
    pub sensor_id: String,
    pub tick: u64,
    pub value: u64,
}

/// Latest reading per `(storage_id, kind)`. Never moves backwards in tick.
#[derive(Debug, Default)]
pub struct LatestCache {
    map: RwLock<BTreeMap<(String, SensorKind), CachedReading>>,
}

impl LatestCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on_deliver(&self, msg: &Message) -> Result<(), GatewayError> {
        self.on_raw(msg.topic.as_str(), &msg.payload)
    }

    pub fn on_raw(&self, topic: &str, body: &[u8]) -> Result<(), GatewayError> {
        let key = parse_topic(topic)?;
        let reading: ReadingPayload = serde_json::from_slice(body).map_err(|e| GatewayError::MalformedPayload {
            topic: topic.into(),
            reason: e.to_string(),
        })?;
        let mut map = self.map.write().unwrap_or_else(|e| e.into_inner());
        let fresh = map.get(&key).is_none_or(|cached| reading.tick >= cached.tick);
        if fresh {
            map.insert(
                key,
                CachedReading {
                    sensor_id: reading.sensor_id,
                    tick: reading.tick,
                    value: reading.value,
                },
            );
        }
        Ok(())
    }

    pub fn get(&self, storage_id: &str, kind: SensorKind) -> Option<CachedReading> {
        self.map
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&(storage_id.to_string(), kind))
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckBinding {
    pub storage_id: String,
    pub contract: Address,
    pub storage_actor: Address,
    pub check_every_ticks: u64,
    pub kinds: Vec<SensorKind>,
}

impl CheckBinding {
    pub fn is_due(&self, tick: u64) -> bool {
        self.check_every_ticks > 0 && tick.is_multiple_of(self.check_every_ticks)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckRecord {
    pub storage_id: String,
    pub kind: SensorKind,
    pub reading: CachedReading,
    pub result: Result<InvokeResult, RuntimeError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skip {
    pub storage_id: String,
    pub kind: SensorKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CheckRun {
    pub results: Vec<CheckRecord>,
    pub skipped: Vec<Skip>,
}

/// Invokes the self-check for every due binding and configured kind that has a
/// cached reading. Missing readings are recorded as skips and touch nothing.
pub fn run_checks(
    cache: &LatestCache,
    runtime: &mut Runtime,
    bindings: &[CheckBinding],
    tick: u64,
    now: u64,
) -> CheckRun {
    let mut run = CheckRun::default();
    for binding in bindings.iter().filter(|b| b.is_due(tick)) {
        for &kind in &binding.kinds {
            let Some(reading) = cache.get(&binding.storage_id, kind) else {
                run.skipped.push(Skip {
                    storage_id: binding.storage_id.clone(),
                    kind,
                });
                continue;
            };
            let result = runtime.invoke(
                binding.storage_actor,
                binding.contract,
                kind.factor().check_operation(),
                payload([("value", reading.value)]),
                now,
            );
            run.results.push(CheckRecord {
                storage_id: binding.storage_id.clone(),
                kind,
                reading,
                result,
            });
        }
    }
    run
}

/// Broker subscriber feeding a [`LatestCache`].
pub struct Gateway {
    broker: Broker,
    session: Session,
    cache: LatestCache,
}

impl Gateway {
    pub fn connect(broker: &Broker, client_id: &str) -> Result<Self, BrokerError> {
        let session = broker.connect(client_id)?;
        broker.subscribe(&session, &format!("{TOPIC_ROOT}/#"))?;
        Ok(Self {
            broker: broker.clone(),
            session,
            cache: LatestCache::new(),
        })
    }

    /// Feeds every queued message into the cache; malformed ones are logged and
    /// skipped. Returns how many were accepted.
    pub fn pump(&self) -> Result<usize, BrokerError> {
        let mut accepted = 0;
        for msg in self.broker.drain(&self.session)? {
            match self.cache.on_deliver(&msg) {
                Ok(()) => accepted += 1,
                Err(e) => warn!("gateway skipped message: {e}"),
            }
        }
        Ok(accepted)
    }

    pub fn cache(&self) -> &LatestCache {
        &self.cache
    }

    pub fn run_checks(&self, runtime: &mut Runtime, bindings: &[CheckBinding], tick: u64, now: u64) -> CheckRun {
        run_checks(&self.cache, runtime, bindings, tick, now)
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.broker.disconnect(&self.session);
    }
}
