//! Contract Net Protocol simulator with a conventional and an updated
//! (in-flight task modification) variant, run over a predator/prey pursuit
//! arena and two interchangeable ACL keyword dialects.

pub mod agents;
pub mod cli;
pub mod config;
pub mod conformance;
pub mod engine;
pub mod messaging;
pub mod metrics;
pub mod protocol;
pub mod scenario;
pub mod sim;
pub mod trace;

pub use config::RunConfig;
pub use engine::{run, run_scenario, RunError, RunResult, Simulation};
pub use messaging::{Dialect, Envelope, Performative};
pub use metrics::{compare, summarize, ComparisonTable, ExperimentReport};
pub use protocol::ProtocolVariant;
