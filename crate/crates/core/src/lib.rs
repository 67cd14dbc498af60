//! Deterministic discrete-event simulator for compound AI serving.
//!
//! A scenario wires a workflow DAG (video QA, evolutionary code search,
//! RAG or a custom graph) onto a CPU pool and a set of GPU devices with
//! prefix KV and multi-modal caches, drives it with a load generator, and
//! reports latency, energy, power, cost and cache statistics.

// `!(x > 0.0)` is the validation idiom here: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caches;
pub mod cli;
pub mod engine;
pub mod error;
pub mod loadgen;
pub mod metrics;
pub mod prompts;
pub mod resources;
pub mod routing;
pub mod scenario;
pub mod simcore;
pub mod validate;
pub mod workflows;

pub use engine::{run_scenario, Simulation};
pub use error::{Result, SimError};
pub use metrics::MetricsReport;
pub use scenario::Scenario;
pub use simcore::SimTime;
