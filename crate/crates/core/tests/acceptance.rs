//! Acceptance suite. Prints one PASS/FAIL line per criterion, with its
//! measured runtime against the allowed budget, and exits non-zero if any fail.
//!
//! Expected values come from oracles written here, independent of the library:
//! the reference gas table, a three-way comparison, the violation-trigger
//! enumeration, a four-state stage automaton, and a string-based topic matcher.

use std::collections::{BTreeMap, VecDeque};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agritrace::broker::{Broker, Message, Session};
use agritrace::codec::{payload, Payload};
use agritrace::contracts::{
    ops, CallContext, ConditionState, ContractInstance, ContractKind, Factor, SeedEntry, StorageContract, TraceStage,
    ViolationType,
};
use agritrace::ids::Address;
use agritrace::ledger::{jsonl, verify_blocks, Block, EventFilter, TxStatus};
use agritrace::runtime::{GasSchedule, Role, Runtime};
use agritrace::scenario::{self, ScenarioConfig, DEMO_SCENARIO};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, Duration, Check); 8] = [
        ("1", "gas fidelity", Duration::from_secs(1), gas_fidelity),
        (
            "2",
            "temperature violation and four-stage trace",
            Duration::from_secs(1),
            demo_events,
        ),
        ("3", "tamper detection", Duration::from_secs(60), tamper_detection),
        (
            "4",
            "self-check and trigger oracles",
            Duration::from_secs(10),
            self_check_oracle,
        ),
        ("5", "access-control matrix", Duration::from_secs(5), access_matrix),
        ("6", "stage-machine fuzzing", Duration::from_secs(30), stage_fuzz),
        ("7", "broker delivery", Duration::from_secs(30), broker_delivery),
        ("8", "determinism", Duration::from_secs(30), determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget")),
            Err(e) => (false, e),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id} {name} ({:.3}s / {}s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

// ---------------------------------------------------------------------------
// 1. Gas

/// Measured (transaction, execution) cost per operation of the reference deployment.
const REFERENCE_GAS: [(&str, u64, u64); 9] = [
    ("addSeed", 168402, 144314),
    ("temperatureSelfCheck", 50681, 29217),
    ("humiditySelfCheck", 50812, 29348),
    ("lightExpoSelfCheck", 35503, 14039),
    ("violationTrigger", 48625, 26969),
    ("initiateDistribution", 132122, 108610),
    ("startDistribution", 106442, 84786),
    ("startWholesale", 91530, 69874),
    ("retailSell", 91464, 69808),
];

fn gas_fidelity() -> Result<String, String> {
    let out = scenario::run(&ScenarioConfig::demo().map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let blocks = out.runtime.ledger().blocks();
    let report = out.runtime.gas_report();
    for (op, tx_cost, ex_cost) in REFERENCE_GAS {
        let row = report.row(op).ok_or(format!("no gas row for {op}"))?;
        ensure(row.calls >= 1, || format!("{op}: no calls"))?;
        ensure(
            row.total_transaction_gas == tx_cost * row.calls && row.total_execution_gas == ex_cost * row.calls,
            || {
                format!(
                    "{op}: totals {}/{} over {} calls",
                    row.total_transaction_gas, row.total_execution_gas, row.calls
                )
            },
        )?;
        // and every individual successful call
        for tx in blocks.iter().flat_map(|b| &b.transactions) {
            if tx.operation == op && tx.status == TxStatus::Ok {
                ensure(tx.gas_transaction == tx_cost && tx.gas_execution == ex_cost, || {
                    format!("{op}: call charged {}/{}", tx.gas_transaction, tx.gas_execution)
                })?;
            }
        }
    }
    ensure(report.rows.len() == 9, || format!("{} rows", report.rows.len()))?;
    Ok("all 9 operations charge exactly the reference costs".into())
}

// ---------------------------------------------------------------------------
// 2. Demo narrative

fn demo_events() -> Result<String, String> {
    let cfg = ScenarioConfig::demo().map_err(|e| e.to_string())?;
    let batch = &cfg.batches[0];
    ensure(batch.optimum_temp == 38, || "demo optimum is not 38".into())?;
    let out = scenario::run(&cfg).map_err(|e| e.to_string())?;
    let temp_readings: Vec<u64> = out
        .readings
        .iter()
        .filter(|r| r.topic.ends_with("/temperature"))
        .map(|r| r.value)
        .collect();
    ensure(
        !temp_readings.is_empty() && temp_readings.iter().all(|v| *v == 40),
        || format!("temperature readings {temp_readings:?}"),
    )?;

    let ledger = out.runtime.ledger();
    let temp = ledger.query_events(&EventFilter::default().name("TemperatureViolation"));
    ensure(temp.len() == 1, || {
        format!("{} TemperatureViolation events", temp.len())
    })?;
    let cond = temp[0].payload.get("condition").and_then(|v| v.as_str());
    ensure(cond == Some("over"), || format!("condition {cond:?}"))?;
    let category = temp[0].payload.get("category").and_then(|v| v.as_u64());
    ensure(category == Some(1), || format!("category {category:?}"))?;
    let storage = out.batches[&batch.storage_id];
    ensure(temp[0].contract == storage, || {
        "violation logged against the wrong contract".into()
    })?;
    ensure(
        out.runtime.storage_state(&storage).map(|s| s.temp_cond) == Some(ConditionState::Over),
        || "temp_cond is not Over".into(),
    )?;
    ensure(
        !ledger
            .query_events(&EventFilter::default().name("seedStored"))
            .is_empty(),
        || "no seedStored event".into(),
    )?;

    let want = [
        "DistributionInitiate",
        "DistributionStart",
        "WholesellerStart",
        "RetailSell",
    ];
    let stage_events: Vec<_> = ledger
        .query_events(&EventFilter::default())
        .into_iter()
        .filter(|e| want.contains(&e.name.as_str()))
        .collect();
    let names: Vec<&str> = stage_events.iter().map(|e| e.name.as_str()).collect();
    ensure(names == want, || format!("stage events {names:?}"))?;
    let times: Vec<u64> = stage_events.iter().map(|e| e.timestamp).collect();
    ensure(times.windows(2).all(|w| w[0] <= w[1]), || {
        format!("timestamps {times:?}")
    })?;
    Ok(format!(
        "1 TemperatureViolation(over) at 40 vs 38; stages {names:?} at {times:?}"
    ))
}

// ---------------------------------------------------------------------------
// 3. Tamper detection

/// The demo scenario trimmed to exactly 20 blocks: no retailer binding, no
/// manual trigger, no light check.
fn twenty_block_ledger() -> Result<Vec<Block>, String> {
    let mut cfg = ScenarioConfig::from_toml_str(DEMO_SCENARIO).map_err(|e| e.to_string())?;
    cfg.lots[0].retailer = None;
    cfg.steps.retain(|s| s.op != ops::VIOLATION_TRIGGER);
    cfg.bindings[0].kinds.retain(|k| k.segment() != "light");
    let out = scenario::run(&cfg).map_err(|e| e.to_string())?;
    Ok(out.runtime.ledger().blocks().to_vec())
}

fn detected(bytes: &[u8]) -> bool {
    match jsonl::from_jsonl(bytes) {
        Err(_) => true,
        Ok(blocks) => !verify_blocks(&blocks).ok,
    }
}

fn tamper_detection() -> Result<String, String> {
    let blocks = twenty_block_ledger()?;
    ensure(blocks.len() == 20, || format!("ledger has {} blocks", blocks.len()))?;
    let original = jsonl::to_jsonl(&blocks).into_bytes();
    ensure(!detected(&original), || "pristine ledger fails verification".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x007a_3be4);
    let mut buf = original.clone();
    let mut mutations = 0u64;
    let mut misses = Vec::new();
    for i in 0..original.len() {
        let mut candidates: Vec<u8> = (0..8).map(|bit| original[i] ^ (1 << bit)).collect();
        let mut other = rng.random::<u8>();
        while other == original[i] {
            other = rng.random();
        }
        candidates.push(other);
        for b in candidates {
            buf[i] = b;
            mutations += 1;
            if !detected(&buf) {
                misses.push((i, b));
            }
        }
        buf[i] = original[i];
    }
    ensure(misses.is_empty(), || {
        format!(
            "{} undetected mutations, first {:?}",
            misses.len(),
            &misses[..misses.len().min(5)]
        )
    })?;
    Ok(format!(
        "{mutations} single-byte mutations over {} bytes, 0 missed",
        original.len()
    ))
}

// ---------------------------------------------------------------------------
// 4. Self-check and trigger oracles

fn compare_oracle(value: u64, optimum: u64) -> (&'static str, u64) {
    if value > optimum {
        ("over", 1)
    } else if value < optimum {
        ("under", 0)
    } else {
        ("optimum", 2)
    }
}

/// Category → (condition, violation type set?) straight from the trigger enumeration.
fn trigger_oracle(category: u64) -> (ConditionState, bool) {
    match category {
        1 => (ConditionState::Over, true),
        0 => (ConditionState::Under, true),
        2 => (ConditionState::Optimum, false),
        _ => unreachable!(),
    }
}

fn seeded_contract(optimum: u64) -> (StorageContract, CallContext) {
    let ctx = CallContext {
        caller: Address::from_label("storage"),
        contract: Address::from_label("batch"),
        timestamp: 1,
    };
    let mut c = StorageContract::new(Address::from_label("owner"));
    c.add_seed(
        &ctx,
        SeedEntry {
            seed_name: "potato".into(),
            batch_id: "B".into(),
            quantity: 1,
            unit_price: 1,
            optimum_temp: optimum,
            optimum_hum: optimum,
            optimum_light_expo: optimum,
        },
    )
    .expect("fresh contract accepts a seed");
    (c, ctx)
}

fn self_check_oracle() -> Result<String, String> {
    let mut checked = 0;
    for factor in Factor::ALL {
        for optimum in 0..=100u64 {
            let (mut c, ctx) = seeded_contract(optimum);
            for value in 0..=100u64 {
                let (word, category) = compare_oracle(value, optimum);
                let (text, events) = c.self_check(&ctx, factor, value).map_err(|e| e.to_string())?;
                ensure(events.len() == 1, || {
                    format!("{factor:?} {value}/{optimum}: {} events", events.len())
                })?;
                let ev = &events[0];
                ensure(ev.name == factor.event_name(), || format!("event {}", ev.name))?;
                let got_cat = ev.payload.get("category").and_then(|v| v.as_u64());
                let got_word = ev.payload.get("condition").and_then(|v| v.as_str());
                ensure(got_cat == Some(category) && got_word == Some(word), || {
                    format!("{factor:?} value {value} optimum {optimum}: got {got_word:?}/{got_cat:?}, want {word}/{category}")
                })?;
                ensure(c.state().condition(factor).word() == word, || {
                    format!("{factor:?} state condition")
                })?;
                let expected_text = match word {
                    "over" => format!("OVER THRESHOLD: {value} > {optimum}"),
                    "under" => format!("UNDER THRESHOLD: {value} < {optimum}"),
                    _ => format!("OPTIMUM: {value}"),
                };
                ensure(text.ends_with(&expected_text), || format!("description `{text}`"))?;
                checked += 1;
            }
        }
    }

    let mut triggers = 0;
    for factor in Factor::ALL {
        for category in 0..=2u64 {
            let (mut c, ctx) = seeded_contract(10);
            let (condition, typed) = trigger_oracle(category);
            let events = c.violation_trigger(&ctx, factor, category).map_err(|e| e.to_string())?;
            let s = c.state();
            let want_type = if typed {
                factor.violation_type()
            } else {
                ViolationType::Non
            };
            ensure(
                s.condition(factor) == condition && s.violation_type == want_type,
                || {
                    format!(
                        "trigger {factor:?}/{category}: state {:?}/{:?}",
                        s.condition(factor),
                        s.violation_type
                    )
                },
            )?;
            // only the triggered factor moves
            for other in Factor::ALL.into_iter().filter(|f| *f != factor) {
                ensure(s.condition(other) == ConditionState::Optimum, || {
                    format!("trigger {factor:?} touched {other:?}")
                })?;
            }
            ensure(events.len() == 1 && events[0].name == factor.event_name(), || {
                format!("trigger {factor:?}/{category} events")
            })?;
            let vt = events[0].payload.get("violation_type").and_then(|v| v.as_str());
            ensure(vt == Some(factor.as_str()), || format!("violation_type {vt:?}"))?;
            triggers += 1;
        }
        let (mut c, ctx) = seeded_contract(10);
        let before = c.clone();
        ensure(c.violation_trigger(&ctx, factor, 3).is_err() && c == before, || {
            "category 3 accepted".into()
        })?;
    }
    Ok(format!(
        "{checked} comparisons and {triggers} trigger combinations match"
    ))
}

// ---------------------------------------------------------------------------
// 5. Access control

const STORAGE_OPS: [&str; 5] = [
    "addSeed",
    "temperatureSelfCheck",
    "humiditySelfCheck",
    "lightExpoSelfCheck",
    "violationTrigger",
];

/// Which role may call each operation, read off the contract schemas;
/// `None` means public.
fn permitted(op: &str, role: Role) -> bool {
    let only = match op {
        o if STORAGE_OPS.contains(&o) => Some(Role::Storage),
        "initiateDistribution" => Some(Role::Producer),
        "startDistribution" => Some(Role::Distributor),
        "startWholesale" => Some(Role::Wholesaler),
        "retailSell" => None,
        _ => unreachable!(),
    };
    only.is_none_or(|r| r == role)
}

fn seed_args() -> Payload {
    SeedEntry {
        seed_name: "potato".into(),
        batch_id: "B".into(),
        quantity: 10,
        unit_price: 5,
        optimum_temp: 38,
        optimum_hum: 60,
        optimum_light_expo: 300,
    }
    .to_args()
}

fn call_args(op: &str) -> Payload {
    match op {
        "addSeed" => seed_args(),
        "violationTrigger" => {
            let mut p = payload([("category", 1u64)]);
            p.insert("vtype".into(), "Humidity".into());
            p
        }
        "initiateDistribution" => {
            let mut p = payload([("price", 10u64), ("quantity", 5)]);
            p.insert("product_id".into(), "LOT".into());
            p.insert("product_name".into(), "potato".into());
            p
        }
        o if STORAGE_OPS.contains(&o) => payload([("value", 40u64)]),
        _ => payload([("price", 10u64), ("quantity", 5)]),
    }
}

/// A runtime where `op` is valid to call on `target` apart from authorization,
/// and `probe` holds `role` on it (for Owner, the probe is the deployer).
fn access_world(op: &str, role: Role) -> (Runtime, Address, Address) {
    let a = Address::from_label;
    let mut rt = Runtime::new(GasSchedule::default(), 0);
    let owner = if role == Role::Owner { a("probe") } else { a("owner") };
    for who in ["owner", "probe", "s", "p", "d", "w"] {
        rt.register(a(who), 0).unwrap();
    }
    let storage_op = STORAGE_OPS.contains(&op);
    let kind = if storage_op {
        ContractKind::StorageContract
    } else {
        ContractKind::DistributionContract
    };
    let target = rt.deploy(kind, owner, Payload::new(), 0).unwrap();
    let bind = |rt: &mut Runtime, who: &str, r: Role| rt.bind_role(owner, target, a(who), r, 0).unwrap();
    if storage_op {
        bind(&mut rt, "s", Role::Storage);
        if op != ops::ADD_SEED {
            rt.invoke(a("s"), target, ops::ADD_SEED, seed_args(), 0).unwrap();
        }
    } else {
        bind(&mut rt, "p", Role::Producer);
        bind(&mut rt, "d", Role::Distributor);
        bind(&mut rt, "w", Role::Wholesaler);
        let stage = TraceStage::from_operation(op).unwrap();
        for (who, prior) in [
            ("p", TraceStage::Producer),
            ("d", TraceStage::Distributor),
            ("w", TraceStage::Wholesaler),
        ] {
            if prior < stage {
                let r = rt.invoke(
                    a(who),
                    target,
                    prior.operation().unwrap(),
                    call_args(prior.operation().unwrap()),
                    0,
                );
                assert_eq!(r.unwrap().status, TxStatus::Ok);
            }
        }
    }
    if role != Role::Owner {
        bind(&mut rt, "probe", role);
    }
    (rt, target, a("probe"))
}

fn snapshot(rt: &Runtime) -> Vec<(Address, ContractInstance)> {
    rt.contracts().map(|(a, c)| (*a, c.clone())).collect()
}

fn access_matrix() -> Result<String, String> {
    let mut allowed = 0;
    let mut denied = 0;
    for op in ops::ALL {
        for role in Role::ALL {
            let (mut rt, target, probe) = access_world(op, role);
            let before = snapshot(&rt);
            let r = rt
                .invoke(probe, target, op, call_args(op), 1)
                .map_err(|e| e.to_string())?;
            if permitted(op, role) {
                ensure(r.status == TxStatus::Ok, || format!("{op} as {role:?}: {:?}", r.status))?;
                allowed += 1;
            } else {
                ensure(r.status == TxStatus::Unauthorized, || {
                    format!("{op} as {role:?}: {:?}", r.status)
                })?;
                ensure(snapshot(&rt) == before, || format!("{op} as {role:?}: state changed"))?;
                ensure(
                    r.events.is_empty() && r.gas_transaction == 0 && r.gas_execution == 0,
                    || format!("{op} as {role:?}: denied call had effects"),
                )?;
                denied += 1;
            }
        }
    }
    // an unregistered caller cannot even use the public operation
    let (mut rt, target, _) = access_world(ops::RETAIL_SELL, Role::Consumer);
    let before = snapshot(&rt);
    let r = rt
        .invoke(
            Address::from_label("stranger"),
            target,
            ops::RETAIL_SELL,
            call_args(ops::RETAIL_SELL),
            1,
        )
        .map_err(|e| e.to_string())?;
    ensure(r.status == TxStatus::Unauthorized && snapshot(&rt) == before, || {
        "unregistered retailSell".into()
    })?;
    ensure(allowed == 5 + 3 + 8, || format!("{allowed} cells allowed"))?;
    Ok(format!("{allowed} permitted and {denied} denied cells as expected"))
}

// ---------------------------------------------------------------------------
// 6. Stage machine

#[derive(Debug, Clone, PartialEq)]
struct RefLot {
    stage: usize,
    hops: Vec<(Address, u64, u64, u64)>,
}

const CALLERS: [&str; 6] = ["p", "d", "w", "r", "owner", "stranger"];
const STAGE_OPS: [&str; 4] = [
    "initiateDistribution",
    "startDistribution",
    "startWholesale",
    "retailSell",
];

/// Reference automaton: stage k accepts op k (0-based) when the caller may call it.
fn ref_step(
    lot: &mut RefLot,
    op_idx: usize,
    caller: &str,
    product_ok: bool,
    now: u64,
    price: u64,
    qty: u64,
) -> &'static str {
    let allowed = match op_idx {
        0 => caller == "p",
        1 => caller == "d",
        2 => caller == "w",
        _ => caller != "stranger",
    };
    if !allowed {
        return "unauthorized";
    }
    if lot.stage != op_idx || (op_idx == 0 && !product_ok) {
        return "rejected";
    }
    lot.stage += 1;
    lot.hops.push((Address::from_label(caller), now, price, qty));
    "ok"
}

fn stage_fuzz() -> Result<String, String> {
    let a = Address::from_label;
    let mut rng = ChaCha8Rng::seed_from_u64(0x57a6e);
    let mut base = Runtime::new(GasSchedule::default(), 0);
    for who in CALLERS.iter().filter(|w| **w != "stranger") {
        base.register(a(who), 0).unwrap();
    }
    let init: Payload = [("product_id".to_string(), "LOT".into())].into();
    let lot = base
        .deploy(ContractKind::DistributionContract, a("owner"), init, 0)
        .unwrap();
    for (who, role) in [
        ("p", Role::Producer),
        ("d", Role::Distributor),
        ("w", Role::Wholesaler),
        ("r", Role::Retailer),
    ] {
        base.bind_role(a("owner"), lot, a(who), role, 0).unwrap();
    }

    let mut accepted = 0;
    let mut total_ops = 0;
    for case in 0..10_000 {
        let mut rt = base.clone();
        let mut reference = RefLot { stage: 0, hops: vec![] };
        let len = rng.random_range(1..=10);
        for step in 0..len {
            // bias toward the next valid op so that deep sequences are common
            let op_idx = if rng.random_bool(0.5) {
                reference.stage.min(3)
            } else {
                rng.random_range(0..4)
            };
            let caller = CALLERS[rng.random_range(0..CALLERS.len())];
            let product_ok = rng.random_bool(0.9);
            let (price, qty) = (rng.random_range(0..1000), rng.random_range(0..1000));
            let now = 1 + step as u64;
            let mut args = payload([("price", price), ("quantity", qty)]);
            if op_idx == 0 {
                args.insert("product_id".into(), if product_ok { "LOT" } else { "OTHER" }.into());
                args.insert("product_name".into(), "potato".into());
            }
            let want = ref_step(&mut reference, op_idx, caller, product_ok, now, price, qty);
            let got = rt
                .invoke(a(caller), lot, STAGE_OPS[op_idx], args, now)
                .map_err(|e| e.to_string())?;
            let got = match got.status {
                TxStatus::Ok => "ok",
                TxStatus::Unauthorized => "unauthorized",
                TxStatus::Reverted(_) => "rejected",
            };
            ensure(got == want, || {
                format!(
                    "case {case} step {step}: {} by {caller}: got {got}, want {want}",
                    STAGE_OPS[op_idx]
                )
            })?;
            accepted += (got == "ok") as u32;
            total_ops += 1;
        }
        let state = rt.distribution_state(&lot).unwrap();
        let stage = TraceStage::HOPS
            .iter()
            .position(|s| *s == state.current_trace)
            .map_or(0, |p| p + 1);
        ensure(stage == reference.stage, || {
            format!(
                "case {case}: final stage {:?} vs {}",
                state.current_trace, reference.stage
            )
        })?;
        let hops: Vec<_> = TraceStage::HOPS[..stage]
            .iter()
            .map(|s| state.hop(*s).unwrap())
            .collect();
        ensure(hops == reference.hops, || format!("case {case}: recorded hops differ"))?;
    }
    Ok(format!(
        "10000 sequences, {total_ops} calls ({accepted} accepted), zero divergence"
    ))
}

// ---------------------------------------------------------------------------
// 7. Broker

fn oracle_match(filter: &str, topic: &str) -> bool {
    if filter == "#" {
        return true;
    }
    match filter.strip_suffix("/#") {
        Some(prefix) => topic == prefix || topic.starts_with(&format!("{prefix}/")),
        None => filter == topic,
    }
}

fn random_path(rng: &mut ChaCha8Rng) -> String {
    const SEGS: [&str; 4] = ["agri", "storage", "S1", "x"];
    let depth = rng.random_range(1..=3);
    (0..depth)
        .map(|_| SEGS[rng.random_range(0..SEGS.len())])
        .collect::<Vec<_>>()
        .join("/")
}

fn random_filter(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..4) {
        0 => "#".into(),
        1 => format!("{}/#", random_path(rng)),
        _ => random_path(rng),
    }
}

enum Action {
    Subscribe(usize, String),
    Publish(String, bool),
}

#[derive(Default)]
struct OracleSub {
    filters: Vec<String>,
    queue: VecDeque<(String, u64, u64)>, // topic, seq, message id
    last: BTreeMap<String, u64>,
}

fn broker_case(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let broker = Broker::new();
    let n_subs = rng.random_range(1..=5);
    let n_pubs = rng.random_range(1..=3);
    let subs: Vec<Session> = (0..n_subs)
        .map(|i| broker.connect(&format!("sub{i}")).unwrap())
        .collect();
    let pubs: Vec<Session> = (0..n_pubs)
        .map(|i| broker.connect(&format!("pub{i}")).unwrap())
        .collect();
    let mut oracle: Vec<OracleSub> = (0..n_subs).map(|_| OracleSub::default()).collect();
    let mut seqs: BTreeMap<String, u64> = BTreeMap::new();
    let mut retained: BTreeMap<String, (u64, u64)> = BTreeMap::new(); // topic -> (seq, id)
    let mut delivered = 0;

    let actions: Vec<Action> = (0..rng.random_range(5..40))
        .map(|_| {
            if rng.random_bool(0.25) {
                Action::Subscribe(rng.random_range(0..n_subs), random_filter(rng))
            } else {
                Action::Publish(random_path(rng), rng.random_bool(0.4))
            }
        })
        .collect();

    for (id, action) in actions.iter().enumerate() {
        let id = id as u64;
        match action {
            Action::Subscribe(s, filter) => {
                broker.subscribe(&subs[*s], filter).map_err(|e| e.to_string())?;
                let o = &mut oracle[*s];
                for (topic, (seq, mid)) in &retained {
                    if oracle_match(filter, topic) && o.last.get(topic).copied().unwrap_or(0) < *seq {
                        o.queue.push_back((topic.clone(), *seq, *mid));
                        o.last.insert(topic.clone(), *seq);
                    }
                }
                o.filters.push(filter.clone());
            }
            Action::Publish(topic, retain) => {
                let p = &pubs[rng.random_range(0..n_pubs)];
                let got = broker
                    .publish(p, topic, &id.to_be_bytes(), *retain)
                    .map_err(|e| e.to_string())?;
                let listeners: Vec<usize> = (0..n_subs)
                    .filter(|s| oracle[*s].filters.iter().any(|f| oracle_match(f, topic)))
                    .collect();
                let want = if listeners.is_empty() && !retain {
                    None
                } else {
                    let seq = seqs.entry(topic.clone()).or_insert(0);
                    *seq += 1;
                    Some(*seq)
                };
                ensure(got == want, || format!("publish {topic}: seq {got:?}, want {want:?}"))?;
                if let Some(seq) = want {
                    for s in listeners {
                        oracle[s].queue.push_back((topic.clone(), seq, id));
                        oracle[s].last.insert(topic.clone(), seq);
                    }
                    if *retain {
                        retained.insert(topic.clone(), (seq, id));
                    }
                }
            }
        }
        // drain some subscribers midway to interleave polling with publishing
        if rng.random_bool(0.2) {
            let s = rng.random_range(0..n_subs);
            delivered += compare_queue(&broker, &subs[s], &mut oracle[s], s)?;
        }
    }
    for s in 0..n_subs {
        delivered += compare_queue(&broker, &subs[s], &mut oracle[s], s)?;
    }
    Ok(delivered)
}

fn compare_queue(broker: &Broker, session: &Session, oracle: &mut OracleSub, idx: usize) -> Result<usize, String> {
    let got: Vec<Message> = broker.drain(session).map_err(|e| e.to_string())?;
    let want: Vec<_> = oracle.queue.drain(..).collect();
    let got_view: Vec<(String, u64, u64)> = got
        .iter()
        .map(|m| {
            (
                m.topic.as_str().to_string(),
                m.seq,
                u64::from_be_bytes(m.payload.clone().try_into().unwrap()),
            )
        })
        .collect();
    ensure(got_view == want, || {
        format!("sub{idx}: got {got_view:?}, want {want:?}")
    })?;
    // per-topic FIFO on what was actually delivered
    let mut last: BTreeMap<&str, u64> = BTreeMap::new();
    for m in &got {
        let prev = last.insert(m.topic.as_str(), m.seq).unwrap_or(0);
        ensure(m.seq > prev, || {
            format!("sub{idx}: seq {} after {prev} on {}", m.seq, m.topic)
        })?;
    }
    Ok(got.len())
}

fn broker_delivery() -> Result<String, String> {
    // filter oracle over the whole generated corpus
    let mut corpus: Vec<String> = vec![];
    for a in ["agri", "agriX", "storage", "S1"] {
        corpus.push(a.into());
        for b in ["agri", "storage", "S1", "x"] {
            corpus.push(format!("{a}/{b}"));
            for c in ["temperature", "humidity", "light"] {
                corpus.push(format!("{a}/{b}/{c}"));
            }
        }
    }
    let mut filters: Vec<String> = vec!["#".into()];
    for t in &corpus {
        filters.push(t.clone());
        filters.push(format!("{t}/#"));
    }
    let mut pairs = 0;
    for f in &filters {
        let filter = agritrace::broker::TopicFilter::new(f).map_err(|e| e.to_string())?;
        for t in &corpus {
            let topic = agritrace::broker::Topic::new(t).map_err(|e| e.to_string())?;
            ensure(filter.matches(&topic) == oracle_match(f, t), || {
                format!("filter {f} vs topic {t}")
            })?;
            pairs += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xb20c);
    let mut delivered = 0;
    const CASES: usize = 2_000;
    for case in 0..CASES {
        delivered += broker_case(&mut rng).map_err(|e| format!("case {case}: {e}"))?;
    }

    // retained message comes before anything newer
    let b = Broker::new();
    let p = b.connect("p").unwrap();
    b.publish(&p, "agri/storage/S1/temperature", b"40", true).unwrap();
    let s = b.connect("s").unwrap();
    b.subscribe(&s, "agri/#").unwrap();
    b.publish(&p, "agri/storage/S1/temperature", b"41", false).unwrap();
    let got: Vec<Vec<u8>> = b.drain(&s).unwrap().into_iter().map(|m| m.payload).collect();
    ensure(got == [b"40".to_vec(), b"41".to_vec()], || {
        format!("retained order {got:?}")
    })?;

    Ok(format!(
        "{pairs} filter/topic pairs; {CASES} random matrices, {delivered} deliveries match the oracle"
    ))
}

// ---------------------------------------------------------------------------
// 8. Determinism

const NOISY: &str = include_str!("fixtures/two-farms.toml");

fn determinism() -> Result<String, String> {
    let mut compared = 0;
    for (name, text) in [("paper-demo", DEMO_SCENARIO), ("two-farms", NOISY)] {
        let cfg = ScenarioConfig::from_toml_str(text).map_err(|e| format!("{name}: {e}"))?;
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            scenario::run(&cfg)
                .and_then(|o| o.write(d.path()))
                .map_err(|e| format!("{name}: {e}"))?;
        }
        let list = |d: &tempfile::TempDir| {
            let mut names: Vec<_> = std::fs::read_dir(d.path())
                .unwrap()
                .map(|e| e.unwrap().file_name())
                .collect();
            names.sort();
            names
        };
        let names = list(&dirs[0]);
        ensure(names == list(&dirs[1]), || format!("{name}: different file sets"))?;
        ensure(names.len() >= 4, || format!("{name}: only {} files", names.len()))?;
        for f in names {
            let x = std::fs::read(dirs[0].path().join(&f)).unwrap();
            let y = std::fs::read(dirs[1].path().join(&f)).unwrap();
            ensure(x == y, || format!("{name}: {f:?} differs"))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} output files byte-identical across two runs"))
}
