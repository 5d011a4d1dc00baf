use std::collections::BTreeMap;
use std::time::Duration;

use agritrace::broker::{self, Broker, BrokerClient};
use agritrace::contracts::{ops, ContractKind, SeedEntry};
use agritrace::gateway::{CheckBinding, Gateway};
use agritrace::ids::Address;
use agritrace::ledger::TxStatus;
use agritrace::runtime::{GasSchedule, Role, Runtime};
use agritrace::scenario::{self, ScenarioConfig};
use agritrace::sensor::{self, LocalPublisher, Reading, SensorConfig, SensorKind};

const TWO_FARMS: &str = include_str!("fixtures/two-farms.toml");

fn sensor(id: &str, kind: SensorKind, baseline: u64, amp: u64, drift: i64, period: u64) -> SensorConfig {
    SensorConfig {
        sensor_id: id.into(),
        storage_id: "S1".into(),
        kind,
        baseline,
        noise_amplitude: amp,
        drift_per_tick: drift,
        period_ticks: period,
        rng_seed: 11,
    }
}

fn compare(value: u64, optimum: u64) -> &'static str {
    match value.cmp(&optimum) {
        std::cmp::Ordering::Greater => "over",
        std::cmp::Ordering::Less => "under",
        std::cmp::Ordering::Equal => "optimum",
    }
}

/// A seeded storage contract with optima 20/50/100 and its signing actor.
fn storage_world() -> (Runtime, Address, Address) {
    let a = Address::from_label;
    let mut rt = Runtime::new(GasSchedule::default(), 0);
    rt.register(a("owner"), 0).unwrap();
    rt.register(a("store"), 0).unwrap();
    let c = rt
        .deploy(ContractKind::StorageContract, a("owner"), Default::default(), 0)
        .unwrap();
    rt.bind_role(a("owner"), c, a("store"), Role::Storage, 0).unwrap();
    let seed = SeedEntry {
        seed_name: "maize".into(),
        batch_id: "M".into(),
        quantity: 5,
        unit_price: 5,
        optimum_temp: 20,
        optimum_hum: 50,
        optimum_light_expo: 100,
    };
    assert!(rt
        .invoke(a("store"), c, ops::ADD_SEED, seed.to_args(), 0)
        .unwrap()
        .status
        .is_ok());
    (rt, c, a("store"))
}

#[test]
fn checks_use_the_latest_published_reading() {
    let (mut rt, contract, store) = storage_world();
    let optimum = BTreeMap::from([
        (SensorKind::Temperature, 20),
        (SensorKind::Humidity, 50),
        (SensorKind::Light, 100),
    ]);
    let fleet = [
        sensor("t", SensorKind::Temperature, 18, 3, 0, 1),
        sensor("h", SensorKind::Humidity, 45, 0, 1, 3),
        sensor("l", SensorKind::Light, 100, 5, 0, 4),
    ];
    let bus = Broker::new();
    let gateway = Gateway::connect(&bus, "gw").unwrap();
    let mut publisher = LocalPublisher::connect(&bus, "fleet").unwrap();
    let binding = CheckBinding {
        storage_id: "S1".into(),
        contract,
        storage_actor: store,
        check_every_ticks: 2,
        kinds: vec![SensorKind::Temperature, SensorKind::Humidity, SensorKind::Light],
    };
    let mut latest: BTreeMap<SensorKind, Reading> = BTreeMap::new();
    let mut checks = 0;
    for tick in 0..20 {
        for r in sensor::tick_fleet(&fleet, tick, &mut publisher).unwrap() {
            let kind = fleet.iter().find(|s| s.sensor_id == r.sensor_id).unwrap().kind;
            latest.insert(kind, r);
        }
        gateway.pump().unwrap();
        let run = gateway.run_checks(&mut rt, std::slice::from_ref(&binding), tick, 10 + tick);
        if tick % 2 != 0 {
            assert!(run.results.is_empty() && run.skipped.is_empty());
            continue;
        }
        assert!(run.skipped.is_empty(), "every kind has reported by tick 0");
        assert_eq!(run.results.len(), 3);
        for rec in run.results {
            let want = &latest[&rec.kind];
            assert_eq!(
                (rec.reading.tick, rec.reading.value),
                (want.tick, want.value),
                "{:?} at {tick}",
                rec.kind
            );
            let res = rec.result.unwrap();
            assert_eq!(res.status, TxStatus::Ok);
            let cond = res.events[0].payload.get("condition").and_then(|v| v.as_str());
            assert_eq!(cond, Some(compare(want.value, optimum[&rec.kind])));
            checks += 1;
        }
    }
    assert_eq!(checks, 30);
    rt.flush().unwrap();
    assert!(rt.ledger().verify_chain().ok);
}

#[test]
fn missing_readings_are_skipped_without_touching_the_chain() {
    let (mut rt, contract, store) = storage_world();
    let bus = Broker::new();
    let gateway = Gateway::connect(&bus, "gw").unwrap();
    let mut publisher = LocalPublisher::connect(&bus, "fleet").unwrap();
    sensor::tick_fleet(&[sensor("t", SensorKind::Temperature, 25, 0, 0, 1)], 0, &mut publisher).unwrap();
    // noise on the bus: a foreign topic and a broken body
    let raw = bus.connect("junk").unwrap();
    bus.publish(&raw, "agri/storage/S1/wind", b"{}", false).unwrap();
    bus.publish(&raw, "agri/storage/S1/humidity", b"not json", false)
        .unwrap();
    assert_eq!(gateway.pump().unwrap(), 1);

    rt.flush().unwrap();
    let before = rt.ledger().transactions().count();
    let binding = CheckBinding {
        storage_id: "S1".into(),
        contract,
        storage_actor: store,
        check_every_ticks: 1,
        kinds: vec![SensorKind::Temperature, SensorKind::Humidity],
    };
    let run = gateway.run_checks(&mut rt, &[binding], 0, 5);
    assert_eq!(run.results.len(), 1);
    assert_eq!(run.skipped.len(), 1);
    assert_eq!(run.skipped[0].kind, SensorKind::Humidity);
    rt.flush().unwrap();
    assert_eq!(rt.ledger().transactions().count(), before + 1);
    assert_eq!(
        rt.storage_state(&contract).unwrap().hum_cond,
        agritrace::contracts::ConditionState::Optimum
    );
}

#[test]
fn scenario_checks_only_submit_published_values() {
    let cfg = ScenarioConfig::from_toml_str(TWO_FARMS).unwrap();
    let out = scenario::run(&cfg).unwrap();
    let storage_of: BTreeMap<Address, &str> = out.batches.iter().map(|(id, c)| (*c, id.as_str())).collect();
    let mut checked = 0;
    for block in out.runtime.ledger().blocks() {
        let tick = (block.timestamp - cfg.clock.start) / cfg.clock.seconds_per_tick;
        for tx in &block.transactions {
            let Some(kind) = [SensorKind::Temperature, SensorKind::Humidity, SensorKind::Light]
                .into_iter()
                .find(|k| k.factor().check_operation() == tx.operation)
            else {
                continue;
            };
            let storage = storage_of[&tx.contract];
            let value = tx.args.get("value").and_then(|v| v.as_u64()).unwrap();
            let topic = sensor::topic_for(storage, kind);
            // the newest reading on that topic at or before the check's tick
            let source = out
                .readings
                .iter()
                .filter(|r| r.topic == topic && r.tick <= tick)
                .max_by_key(|r| r.tick);
            assert_eq!(source.map(|r| r.value), Some(value), "{} at tick {tick}", tx.operation);
            checked += 1;
        }
    }
    // N1: ticks 0,4,..,20 × 2 kinds with sensors; S2: ticks 0,6,12,18 × 2
    assert_eq!(checked, 6 * 2 + 4 * 2);
}

#[test]
fn fleet_over_tcp_reaches_local_and_remote_subscribers() {
    let bus = Broker::new();
    let server = broker::serve(bus.clone(), "127.0.0.1:0").unwrap();
    let addr = server.local_addr();
    let gateway = Gateway::connect(&bus, "gw").unwrap();
    let mut remote = BrokerClient::connect(addr, "watcher").unwrap();
    remote.subscribe("agri/storage/S1/temperature").unwrap();

    let fleet = [
        sensor("t", SensorKind::Temperature, 30, 4, -1, 1),
        sensor("l", SensorKind::Light, 80, 0, 2, 2),
    ];
    let mut publisher = BrokerClient::connect(addr, "fleet").unwrap();
    let counts = sensor::run(&fleet, 8, &mut publisher).unwrap();
    assert_eq!(counts, BTreeMap::from([("l".into(), 4), ("t".into(), 8)]));

    for tick in 0..8 {
        let msg = remote.recv_timeout(Duration::from_secs(5)).unwrap().expect("delivery");
        assert_eq!(msg.seq, tick + 1);
        assert_eq!(msg.payload, sensor::readings_at(&fleet[..1], tick)[0].body());
    }
    assert_eq!(gateway.pump().unwrap(), 12);
    let cached = gateway.cache().get("S1", SensorKind::Light).unwrap();
    assert_eq!((cached.tick, cached.value), (6, fleet[1].value_at(6)));
    assert!(
        BrokerClient::connect(addr, "watcher").is_err(),
        "duplicate client ids are refused"
    );
    drop(publisher);
    drop(remote);
    server.shutdown();
}

#[test]
fn concurrent_publishers_keep_per_topic_order() {
    let bus = Broker::new();
    let sub = bus.connect("sub").unwrap();
    bus.subscribe(&sub, "#").unwrap();
    const PER: u64 = 500;
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let bus = bus.clone();
            std::thread::spawn(move || {
                let s = bus.connect(&format!("pub{i}")).unwrap();
                for n in 0..PER {
                    bus.publish(&s, &format!("t/{i}"), &n.to_be_bytes(), false).unwrap();
                }
            })
        })
        .collect();
    let mut seen: BTreeMap<String, Vec<(u64, u64)>> = BTreeMap::new();
    let mut total = 0;
    while total < 4 * PER {
        let m = bus
            .poll_timeout(&sub, Duration::from_secs(5))
            .unwrap()
            .expect("message before timeout");
        let n = u64::from_be_bytes(m.payload.try_into().unwrap());
        seen.entry(m.topic.as_str().to_string()).or_default().push((m.seq, n));
        total += 1;
    }
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(seen.len(), 4);
    for (topic, msgs) in seen {
        let want: Vec<(u64, u64)> = (0..PER).map(|n| (n + 1, n)).collect();
        assert_eq!(msgs, want, "{topic}");
    }
}
