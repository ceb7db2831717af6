//! Deterministic round-based network simulation.

pub mod config;
mod engine;
pub mod metrics;
mod output;
pub mod topology;

pub use config::{ConfigError, FaultConfig, IdentityOp, ScenarioConfig, TopologyConfig};
pub use engine::Simulation;
pub use metrics::{Counters, Event, EventKind, MetricsRecord};
pub use topology::{Role, Topology};
pub use output::{ledger_path, node_table, write_outputs, NodeInfo, NODES_FILE, TRUSTED_FILE};
