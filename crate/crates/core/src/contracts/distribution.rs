//! Product distribution contract: one lot moving producer -> distributor ->
//! wholesaler -> retailer, with price, quantity and block date captured per hop.

use serde::{Deserialize, Serialize};

use crate::codec::{payload, Payload, Value};
use crate::ids::Address;
use crate::ledger::EventRecord;
use crate::runtime::Role;

use super::{arg_str, arg_u64, ops, CallContext, ContractError, Emitted, Modifier, Outcome};

pub const DEPLOY_EVENT: &str = "ContractDeployed";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TraceStage {
    NotStarted,
    Producer,
    Distributor,
    Wholesaler,
    Retailer,
}

impl TraceStage {
    pub const HOPS: [TraceStage; 4] = [
        TraceStage::Producer,
        TraceStage::Distributor,
        TraceStage::Wholesaler,
        TraceStage::Retailer,
    ];

    /// Stage a lot must be in for this hop to be recorded.
    pub fn predecessor(self) -> Option<TraceStage> {
        match self {
            TraceStage::NotStarted => None,
            TraceStage::Producer => Some(TraceStage::NotStarted),
            TraceStage::Distributor => Some(TraceStage::Producer),
            TraceStage::Wholesaler => Some(TraceStage::Distributor),
            TraceStage::Retailer => Some(TraceStage::Wholesaler),
        }
    }

    pub fn operation(self) -> Option<&'static str> {
        match self {
            TraceStage::NotStarted => None,
            TraceStage::Producer => Some(ops::INITIATE_DISTRIBUTION),
            TraceStage::Distributor => Some(ops::START_DISTRIBUTION),
            TraceStage::Wholesaler => Some(ops::START_WHOLESALE),
            TraceStage::Retailer => Some(ops::RETAIL_SELL),
        }
    }

    pub fn from_operation(op: &str) -> Option<TraceStage> {
        TraceStage::HOPS.into_iter().find(|s| s.operation() == Some(op))
    }

    pub fn event_name(self) -> Option<&'static str> {
        match self {
            TraceStage::NotStarted => None,
            TraceStage::Producer => Some("DistributionInitiate"),
            TraceStage::Distributor => Some("DistributionStart"),
            TraceStage::Wholesaler => Some("WholesellerStart"),
            TraceStage::Retailer => Some("RetailSell"),
        }
    }

    pub fn from_event_name(name: &str) -> Option<TraceStage> {
        TraceStage::HOPS.into_iter().find(|s| s.event_name() == Some(name))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TraceStage::NotStarted => "NotStarted",
            TraceStage::Producer => "Producer",
            TraceStage::Distributor => "Distributor",
            TraceStage::Wholesaler => "Wholesaler",
            TraceStage::Retailer => "Retailer",
        }
    }

    pub fn parse(s: &str) -> Option<TraceStage> {
        [TraceStage::NotStarted]
            .into_iter()
            .chain(TraceStage::HOPS)
            .find(|t| t.as_str() == s)
    }
}

/// Contract attributes. Serialized names keep the "wholeseller" spelling of the
/// original attribute list; Rust identifiers use "wholesaler".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionState {
    pub owner_address: Address,
    pub producer_address: Address,
    pub distributor_address: Address,
    #[serde(rename = "wholeseller_address")]
    pub wholesaler_address: Address,
    pub retailer_address: Address,
    pub initiation_date: u64,
    pub dist_start_date: u64,
    pub wholesale_start_date: u64,
    pub retail_start_date: u64,
    pub product_id: String,
    pub product_name: String,
    pub producer_price: u64,
    pub distributor_price: u64,
    #[serde(rename = "wholesell_price")]
    pub wholesaler_price: u64,
    pub retail_price: u64,
    pub producer_sold_quantity: u64,
    pub distributor_sold_quantity: u64,
    #[serde(rename = "wholeseller_sold_quantity")]
    pub wholesaler_sold_quantity: u64,
    pub retail_sold_quantity: u64,
    pub current_trace: TraceStage,
}

impl DistributionState {
    fn new(owner: Address) -> Self {
        Self {
            owner_address: owner,
            producer_address: Address::ZERO,
            distributor_address: Address::ZERO,
            wholesaler_address: Address::ZERO,
            retailer_address: Address::ZERO,
            initiation_date: 0,
            dist_start_date: 0,
            wholesale_start_date: 0,
            retail_start_date: 0,
            product_id: String::new(),
            product_name: String::new(),
            producer_price: 0,
            distributor_price: 0,
            wholesaler_price: 0,
            retail_price: 0,
            producer_sold_quantity: 0,
            distributor_sold_quantity: 0,
            wholesaler_sold_quantity: 0,
            retail_sold_quantity: 0,
            current_trace: TraceStage::NotStarted,
        }
    }

    /// (actor, date, price, quantity) recorded for `stage`, whether or not it has been reached.
    pub fn hop(&self, stage: TraceStage) -> Option<(Address, u64, u64, u64)> {
        match stage {
            TraceStage::NotStarted => None,
            TraceStage::Producer => Some((
                self.producer_address,
                self.initiation_date,
                self.producer_price,
                self.producer_sold_quantity,
            )),
            TraceStage::Distributor => Some((
                self.distributor_address,
                self.dist_start_date,
                self.distributor_price,
                self.distributor_sold_quantity,
            )),
            TraceStage::Wholesaler => Some((
                self.wholesaler_address,
                self.wholesale_start_date,
                self.wholesaler_price,
                self.wholesaler_sold_quantity,
            )),
            TraceStage::Retailer => Some((
                self.retailer_address,
                self.retail_start_date,
                self.retail_price,
                self.retail_sold_quantity,
            )),
        }
    }

    fn record_hop(&mut self, stage: TraceStage, actor: Address, date: u64, price: u64, quantity: u64) {
        let (a, d, p, q) = match stage {
            TraceStage::NotStarted => return,
            TraceStage::Producer => (
                &mut self.producer_address,
                &mut self.initiation_date,
                &mut self.producer_price,
                &mut self.producer_sold_quantity,
            ),
            TraceStage::Distributor => (
                &mut self.distributor_address,
                &mut self.dist_start_date,
                &mut self.distributor_price,
                &mut self.distributor_sold_quantity,
            ),
            TraceStage::Wholesaler => (
                &mut self.wholesaler_address,
                &mut self.wholesale_start_date,
                &mut self.wholesaler_price,
                &mut self.wholesaler_sold_quantity,
            ),
            TraceStage::Retailer => (
                &mut self.retailer_address,
                &mut self.retail_start_date,
                &mut self.retail_price,
                &mut self.retail_sold_quantity,
            ),
        };
        *a = actor;
        *d = date;
        *p = price;
        *q = quantity;
        self.current_trace = stage;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DistributionContract {
    state: DistributionState,
}

impl DistributionContract {
    pub fn new(owner: Address) -> Self {
        Self {
            state: DistributionState::new(owner),
        }
    }

    /// Accepts an optional `product_id` init argument that pins the lot id ahead of initiation.
    pub fn deploy(owner: Address, init_args: &Payload) -> Result<Self, ContractError> {
        let mut c = Self::new(owner);
        for key in init_args.keys() {
            if key != "product_id" {
                return Err(ContractError::UnexpectedInitArg(key.clone()));
            }
        }
        if init_args.contains_key("product_id") {
            c.state.product_id = arg_str(init_args, "product_id")?.to_owned();
        }
        Ok(c)
    }

    pub fn state(&self) -> &DistributionState {
        &self.state
    }

    pub fn modifier(op: &str) -> Option<Modifier> {
        match op {
            ops::INITIATE_DISTRIBUTION => Some(Modifier::OnlyRole(Role::Producer)),
            ops::START_DISTRIBUTION => Some(Modifier::OnlyRole(Role::Distributor)),
            ops::START_WHOLESALE => Some(Modifier::OnlyRole(Role::Wholesaler)),
            ops::RETAIL_SELL => Some(Modifier::Public),
            _ => None,
        }
    }

    pub fn execute(&mut self, ctx: &CallContext, op: &str, args: &Payload) -> Result<Outcome, ContractError> {
        let stage = TraceStage::from_operation(op).ok_or_else(|| ContractError::InvalidArgument {
            name: "operation".into(),
            reason: format!("`{op}` is not a distribution operation"),
        })?;
        let price = arg_u64(args, "price")?;
        let quantity = arg_u64(args, "quantity")?;
        let events = if stage == TraceStage::Producer {
            let product_id = arg_str(args, "product_id")?;
            let product_name = arg_str(args, "product_name")?;
            self.initiate_distribution(ctx, product_id, product_name, price, quantity)?
        } else {
            self.advance(ctx, stage, price, quantity)?
        };
        Ok(Outcome {
            events,
            returns: Payload::new(),
        })
    }

    pub fn initiate_distribution(
        &mut self,
        ctx: &CallContext,
        product_id: &str,
        product_name: &str,
        price: u64,
        quantity: u64,
    ) -> Result<Vec<Emitted>, ContractError> {
        self.expect_stage(TraceStage::NotStarted)?;
        if !self.state.product_id.is_empty() && self.state.product_id != product_id {
            return Err(ContractError::ProductMismatch {
                expected: self.state.product_id.clone(),
                found: product_id.to_owned(),
            });
        }
        self.state.product_id = product_id.to_owned();
        self.state.product_name = product_name.to_owned();
        let mut events = self.record(ctx, TraceStage::Producer, price, quantity);
        let p = &mut events[0].payload;
        p.insert("product_name".into(), product_name.into());
        p.insert(
            "message".into(),
            format!("distribution of {product_name} ({product_id}) started").into(),
        );
        Ok(events)
    }

    pub fn start_distribution(
        &mut self,
        ctx: &CallContext,
        price: u64,
        quantity: u64,
    ) -> Result<Vec<Emitted>, ContractError> {
        self.advance(ctx, TraceStage::Distributor, price, quantity)
    }

    pub fn start_wholesale(
        &mut self,
        ctx: &CallContext,
        price: u64,
        quantity: u64,
    ) -> Result<Vec<Emitted>, ContractError> {
        self.advance(ctx, TraceStage::Wholesaler, price, quantity)
    }

    pub fn retail_sell(&mut self, ctx: &CallContext, price: u64, quantity: u64) -> Result<Vec<Emitted>, ContractError> {
        self.advance(ctx, TraceStage::Retailer, price, quantity)
    }

    fn advance(
        &mut self,
        ctx: &CallContext,
        stage: TraceStage,
        price: u64,
        quantity: u64,
    ) -> Result<Vec<Emitted>, ContractError> {
        self.expect_stage(stage.predecessor().expect("hop stage"))?;
        Ok(self.record(ctx, stage, price, quantity))
    }

    fn expect_stage(&self, expected: TraceStage) -> Result<(), ContractError> {
        if self.state.current_trace != expected {
            return Err(ContractError::WrongStage {
                expected,
                found: self.state.current_trace,
            });
        }
        Ok(())
    }

    fn record(&mut self, ctx: &CallContext, stage: TraceStage, price: u64, quantity: u64) -> Vec<Emitted> {
        self.state.record_hop(stage, ctx.caller, ctx.timestamp, price, quantity);
        let mut p = payload([("price", price), ("quantity", quantity), ("date", ctx.timestamp)]);
        p.insert("actor".into(), ctx.caller.into());
        p.insert("stage".into(), stage.as_str().into());
        p.insert("product_id".into(), self.state.product_id.clone().into());
        vec![Emitted {
            name: stage.event_name().expect("hop stage").into(),
            payload: p,
        }]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: TraceStage,
    pub actor: Address,
    pub date: u64,
    pub price: u64,
    pub quantity: u64,
}

/// Completed hops of one lot, in stage order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceReport {
    pub contract: Address,
    pub product_id: String,
    pub product_name: String,
    pub current_trace: TraceStage,
    pub stages: Vec<StageRow>,
    /// Non-fatal anomalies, e.g. a later hop selling more than an earlier one.
    pub warnings: Vec<String>,
}

impl TraceReport {
    pub fn from_state(contract: Address, state: &DistributionState) -> Self {
        let stages = TraceStage::HOPS
            .into_iter()
            .filter(|s| *s <= state.current_trace)
            .map(|stage| {
                let (actor, date, price, quantity) = state.hop(stage).expect("hop stage");
                StageRow {
                    stage,
                    actor,
                    date,
                    price,
                    quantity,
                }
            })
            .collect();
        Self::assemble(
            contract,
            state.product_id.clone(),
            state.product_name.clone(),
            state.current_trace,
            stages,
        )
    }

    /// Rebuilds the report from the contract's logged events alone.
    ///
    /// Events for other contracts are ignored. Returns `None` if a stage event
    /// has a malformed payload.
    pub fn from_events<'a>(contract: Address, events: impl IntoIterator<Item = &'a EventRecord>) -> Option<Self> {
        let mut product_id = String::new();
        let mut product_name = String::new();
        let mut stages = Vec::new();
        for ev in events.into_iter().filter(|e| e.contract == contract) {
            if ev.name == DEPLOY_EVENT {
                if let Some(Value::Text(id)) = ev.payload.get("product_id") {
                    product_id = id.clone();
                }
                continue;
            }
            let Some(stage) = TraceStage::from_event_name(&ev.name) else {
                continue;
            };
            let p = &ev.payload;
            if stage == TraceStage::Producer {
                product_id = p.get("product_id")?.as_str()?.to_owned();
                product_name = p.get("product_name")?.as_str()?.to_owned();
            }
            stages.push(StageRow {
                stage,
                actor: p.get("actor")?.as_str()?.parse().ok()?,
                date: p.get("date")?.as_u64()?,
                price: p.get("price")?.as_u64()?,
                quantity: p.get("quantity")?.as_u64()?,
            });
        }
        let current = stages.last().map_or(TraceStage::NotStarted, |r| r.stage);
        Some(Self::assemble(contract, product_id, product_name, current, stages))
    }

    fn assemble(
        contract: Address,
        product_id: String,
        product_name: String,
        current_trace: TraceStage,
        stages: Vec<StageRow>,
    ) -> Self {
        let warnings = stages
            .windows(2)
            .filter(|w| w[1].quantity > w[0].quantity)
            .map(|w| {
                format!(
                    "{} quantity {} exceeds {} quantity {}",
                    w[1].stage.as_str(),
                    w[1].quantity,
                    w[0].stage.as_str(),
                    w[0].quantity
                )
            })
            .collect();
        Self {
            contract,
            product_id,
            product_name,
            current_trace,
            stages,
            warnings,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(who: &str, t: u64) -> CallContext {
        CallContext {
            caller: Address::from_label(who),
            contract: Address::from_label("lot"),
            timestamp: t,
        }
    }

    fn initiated() -> DistributionContract {
        let mut c = DistributionContract::new(Address::from_label("owner"));
        c.initiate_distribution(&ctx("producer", 10), "P-77", "potato", 1500, 500)
            .unwrap();
        c
    }

    #[test]
    fn initiate_sets_producer_stage() {
        let c = initiated();
        let s = c.state();
        assert_eq!(s.current_trace, TraceStage::Producer);
        assert_eq!(s.initiation_date, 10);
        assert_eq!(s.product_id, "P-77");
        assert_eq!(s.producer_price, 1500);
        assert_eq!(s.producer_sold_quantity, 500);
        assert_eq!(s.producer_address, Address::from_label("producer"));
    }

    #[test]
    fn second_initiation_is_wrong_stage() {
        let mut c = initiated();
        let before = c.clone();
        assert_eq!(
            c.initiate_distribution(&ctx("producer", 11), "P-77", "potato", 1, 1),
            Err(ContractError::WrongStage {
                expected: TraceStage::NotStarted,
                found: TraceStage::Producer
            })
        );
        assert_eq!(c, before);
    }

    #[test]
    fn start_distribution_before_initiation() {
        let mut c = DistributionContract::new(Address::ZERO);
        assert!(matches!(
            c.start_distribution(&ctx("d", 1), 1, 1),
            Err(ContractError::WrongStage { .. })
        ));
    }

    #[test]
    fn skipping_a_stage_is_rejected() {
        let mut c = initiated();
        assert!(matches!(
            c.start_wholesale(&ctx("w", 12), 1, 1),
            Err(ContractError::WrongStage {
                expected: TraceStage::Distributor,
                ..
            })
        ));
        assert!(matches!(
            c.retail_sell(&ctx("r", 12), 1, 1),
            Err(ContractError::WrongStage { .. })
        ));
    }

    #[test]
    fn full_traversal() {
        let mut c = initiated();
        c.start_distribution(&ctx("d", 20), 1800, 500).unwrap();
        assert_eq!(c.state().dist_start_date, 20);
        c.start_wholesale(&ctx("w", 30), 2100, 400).unwrap();
        let ev = c.retail_sell(&ctx("r", 40), 2500, 450).unwrap();
        assert_eq!(ev[0].name, "RetailSell");
        assert_eq!(c.state().current_trace, TraceStage::Retailer);
        let report = TraceReport::from_state(Address::from_label("lot"), c.state());
        assert_eq!(report.stages.len(), 4);
        assert!(report.stages.windows(2).all(|w| w[0].date <= w[1].date));
        assert_eq!(
            report.warnings,
            vec!["Retailer quantity 450 exceeds Wholesaler quantity 400".to_string()]
        );
    }

    #[test]
    fn pinned_product_id_must_match() {
        let init = payload([("product_id", "P-1")]);
        let mut c = DistributionContract::deploy(Address::ZERO, &init).unwrap();
        assert!(matches!(
            c.initiate_distribution(&ctx("p", 1), "P-2", "x", 1, 1),
            Err(ContractError::ProductMismatch { .. })
        ));
        assert!(c.initiate_distribution(&ctx("p", 1), "P-1", "x", 1, 1).is_ok());
        let bad = payload([("colour", "red")]);
        assert!(DistributionContract::deploy(Address::ZERO, &bad).is_err());
    }

    #[test]
    fn fresh_contract_has_empty_report() {
        let c = DistributionContract::new(Address::ZERO);
        let r = TraceReport::from_state(Address::ZERO, c.state());
        assert!(r.stages.is_empty());
        assert_eq!(r.current_trace, TraceStage::NotStarted);
    }

    #[test]
    fn state_serializes_with_attribute_spelling() {
        let json = serde_json::to_value(initiated().state()).unwrap();
        assert!(json.get("wholeseller_address").is_some());
        assert!(json.get("wholesell_price").is_some());
        assert!(json.get("wholeseller_sold_quantity").is_some());
        assert_eq!(json["current_trace"], "Producer");
    }
}
