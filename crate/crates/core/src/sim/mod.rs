//! Deterministic simulation: the virtual network, scenarios, the runner
//! and its metrics.

pub mod generate;
mod metrics;
pub mod ring;
mod runner;
mod scenario;
mod vnet;

pub use metrics::{Assertion, AuditRecord, CompositionRecord, Metrics, QueryRecord, Tally};
pub use runner::{run, run_scenario};
pub use scenario::{
    Action, DeviceSpec, Expect, Expectations, LinkOverride, Links, LoadedScenario, Maintenance,
    Scenario, ScenarioError, TimedAction,
};

pub use vnet::{LinkSpec, NetStats, VirtualNet, CLOUD_LATENCY_MS, FOG_LATENCY_MS};
