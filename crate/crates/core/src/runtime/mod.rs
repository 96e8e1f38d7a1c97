//! Master-worker protocol: local and consensus updates, the cut-refresh
//! schedule, transports and communication accounting.

pub mod algorithm;
pub mod config;
pub mod ledger;
pub mod master;
pub mod message;
pub mod transport;
pub mod wire;
pub mod worker;

pub use algorithm::{run_algorithm, RunReport};
pub use config::{expected_comm, GapMode, GreyBox, PhiSource, RhoCuts, RunConfig, StepRule};
pub use ledger::{CommLedger, ExpectedComm, Phase};
pub use message::Message;
pub use transport::TransportKind;
