pub mod broker;
pub mod codec;
pub mod contracts;
pub mod gateway;
pub mod ids;
pub mod ledger;
pub mod runtime;
pub mod scenario;
pub mod sensor;
