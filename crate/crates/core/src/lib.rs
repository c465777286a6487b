//! Discrete-time simulator for opportunistic, delay-tolerant dissemination of
//! patient health messages in a rural community.
//!
//! Mobile nodes move between home, work and points of interest following
//! period-dependent Markov chains; nodes within mutual radio range copy each
//! other's messages (epidemic routing) until a copy reaches a clinic
//! destination or the message's time to live runs out.

pub mod harness;
pub mod metrics;
pub mod mobility;
pub mod model;
pub mod network;

pub use harness::{run_simulation, run_sweep, HarnessError, Simulation, SweepSpec, SweepTable};
pub use metrics::{AggregateResult, RunResult};
pub use model::{validate_scenario, ScenarioSpec};
