use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use clap::{Parser, Subcommand};
use log::info;

use agritrace::broker::{self, Broker, BrokerClient};
use agritrace::contracts::TraceReport;
use agritrace::ids::Address;
use agritrace::ledger::{jsonl, query_events, verify_blocks, Block, EventFilter};
use agritrace::runtime::{gas_report, GasReport, GasSchedule, Runtime};
use agritrace::scenario::{self, to_pretty_json, ScenarioConfig};
use agritrace::sensor::{self, FleetConfig, SensorConfig};

#[derive(Parser)]
#[command(
    name = "agritrace",
    version,
    about = "Agricultural traceability ledger and telemetry tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write ledger.jsonl, events.json, gas.json and trace-<product>.json.
    Run {
        /// Scenario TOML, or `paper-demo` for the bundled one.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a ledger file's hash chain, Merkle roots and transaction ids.
    Verify {
        #[arg(long)]
        ledger: PathBuf,
    },
    /// Print the distribution history of one product lot as JSON.
    Trace {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        product: String,
    },
    /// Print logged events as JSON, optionally filtered.
    Events {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        contract: Option<Address>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        from_block: Option<u64>,
        #[arg(long)]
        to_block: Option<u64>,
    },
    /// Per-operation gas totals over successful calls.
    GasReport {
        #[arg(long)]
        ledger: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Serve the broker over TCP until killed.
    BrokerServe {
        #[arg(long, default_value = "127.0.0.1:1883")]
        listen: String,
    },
    /// Publish a sensor fleet to a running broker.
    SensorsRun {
        /// Fleet TOML (`[[sensors]]` tables) or a scenario file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:1883")]
        broker: String,
        /// Defaults to the scenario's total_ticks, or 10 for a bare fleet file.
        #[arg(long)]
        ticks: Option<u64>,
        /// Wall-clock pause between ticks.
        #[arg(long, default_value_t = 0)]
        tick_ms: u64,
        #[arg(long, default_value = "sensor-fleet")]
        client_id: String,
    },
}

/// Exit code plus message for stderr.
struct Fail(u8, String);

fn fail(code: u8, msg: impl std::fmt::Display) -> Fail {
    Fail(code, msg.to_string())
}

type CmdResult = Result<(), Fail>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(&config, &out),
        Command::Verify { ledger } => verify(&ledger),
        Command::Trace { ledger, product } => trace(&ledger, &product),
        Command::Events {
            ledger,
            contract,
            name,
            from_block,
            to_block,
        } => events(&ledger, contract, name, from_block, to_block),
        Command::GasReport { ledger, json } => gas(&ledger, json),
        Command::BrokerServe { listen } => broker_serve(&listen),
        Command::SensorsRun {
            config,
            broker,
            ticks,
            tick_ms,
            client_id,
        } => sensors_run(&config, &broker, ticks, tick_ms, &client_id),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(code)
        }
    }
}

fn run(config: &Path, out: &Path) -> CmdResult {
    let cfg = ScenarioConfig::load(config).map_err(|e| fail(e.exit_code() as u8, e))?;
    let outcome = scenario::run(&cfg).map_err(|e| fail(e.exit_code() as u8, e))?;
    outcome.write(out).map_err(|e| fail(e.exit_code() as u8, e))?;
    let ledger = outcome.runtime.ledger();
    println!(
        "wrote {} blocks, {} events to {}",
        ledger.len(),
        outcome.events().len(),
        out.display()
    );
    Ok(())
}

/// Reads a ledger file; framing or parse errors exit 2.
fn load(path: &Path) -> Result<Vec<Block>, Fail> {
    jsonl::read_file(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

/// Reads a ledger that must also verify; a failed check exits 2.
fn load_verified(path: &Path) -> Result<Vec<Block>, Fail> {
    let blocks = load(path)?;
    let report = verify_blocks(&blocks);
    if !report.ok {
        return Err(fail(2, format!("{}: {report}", path.display())));
    }
    Ok(blocks)
}

fn verify(path: &Path) -> CmdResult {
    let blocks = load(path)?;
    let report = verify_blocks(&blocks);
    println!("{report}");
    if report.ok {
        Ok(())
    } else {
        Err(fail(1, ""))
    }
}

fn trace(path: &Path, product: &str) -> CmdResult {
    let blocks = load_verified(path)?;
    let rt = Runtime::replay(&blocks, GasSchedule::observed(&blocks)).map_err(|e| fail(2, e))?;
    let lot = rt
        .find_lot(product)
        .ok_or_else(|| fail(1, format!("unknown product `{product}`")))?;
    let from_state = rt.trace(&lot).map_err(|e| fail(1, e))?;
    let from_log = TraceReport::from_events(lot, blocks.iter().flat_map(Block::events));
    if from_log.as_ref() != Some(&from_state) {
        return Err(fail(1, "contract state and event log disagree"));
    }
    print!("{}", to_pretty_json(&from_state));
    Ok(())
}

fn events(
    path: &Path,
    contract: Option<Address>,
    name: Option<String>,
    from_block: Option<u64>,
    to_block: Option<u64>,
) -> CmdResult {
    let blocks = load_verified(path)?;
    let filter = EventFilter {
        contract,
        name,
        from_block,
        to_block,
    };
    print!("{}", to_pretty_json(&query_events(&blocks, &filter)));
    Ok(())
}

fn gas(path: &Path, json: bool) -> CmdResult {
    let blocks = load_verified(path)?;
    let report = gas_report(&blocks);
    if json {
        print!("{}", to_pretty_json(&report));
    } else {
        print!("{}", render_table(&report));
    }
    Ok(())
}

fn render_table(report: &GasReport) -> String {
    let mut out = format!(
        "{:<22} {:>6} {:>18} {:>18}\n",
        "operation", "calls", "transaction_gas", "execution_gas"
    );
    for r in &report.rows {
        out += &format!(
            "{:<22} {:>6} {:>18} {:>18}\n",
            r.operation, r.calls, r.total_transaction_gas, r.total_execution_gas
        );
    }
    if !report.rows.is_empty() {
        out += &format!(
            "{:<22} {:>6} {:>18} {:>18}\n",
            "total",
            report.rows.iter().map(|r| r.calls).sum::<u64>(),
            report.total_transaction_gas(),
            report.total_execution_gas()
        );
    }
    out
}

fn broker_serve(listen: &str) -> CmdResult {
    let server = broker::serve(Broker::new(), listen).map_err(|e| fail(1, format!("{listen}: {e}")))?;
    println!("broker listening on {}", server.local_addr());
    server.join();
    Ok(())
}

fn load_fleet(path: &Path) -> Result<(Vec<SensorConfig>, Option<u64>), Fail> {
    let text = fs::read_to_string(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
    if let Ok(fleet) = FleetConfig::from_toml_str(&text) {
        return Ok((fleet.sensors, None));
    }
    let cfg = ScenarioConfig::from_toml_str(&text).map_err(|e| fail(2, e))?;
    Ok((cfg.sensors, Some(cfg.total_ticks)))
}

fn sensors_run(config: &Path, addr: &str, ticks: Option<u64>, tick_ms: u64, client_id: &str) -> CmdResult {
    let (sensors, scenario_ticks) = load_fleet(config)?;
    let total = ticks.or(scenario_ticks).unwrap_or(10);
    let mut client = BrokerClient::connect(addr, client_id).map_err(|e| fail(1, format!("{addr}: {e}")))?;
    let mut counts: BTreeMap<String, u64> = sensors.iter().map(|s| (s.sensor_id.clone(), 0)).collect();
    for tick in 0..total {
        for r in sensor::tick_fleet(&sensors, tick, &mut client).map_err(|e| fail(1, e))? {
            info!("tick {tick}: {} = {}", r.topic, r.value);
            *counts.entry(r.sensor_id).or_default() += 1;
        }
        if tick_ms > 0 {
            thread::sleep(Duration::from_millis(tick_ms));
        }
    }
    print!("{}", to_pretty_json(&counts));
    Ok(())
}
