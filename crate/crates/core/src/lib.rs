//! Deterministic control plane for microservice clusters that unifies
//! root-cause analysis and autoscaling behind structured-reasoning policies.
//!
//! The crate is organized around a simulated cluster ([`sim`]), a semantic
//! telemetry encoder ([`encode`]), a structured chain-of-thought grammar
//! ([`cot`]), a verifiable reward stack ([`reward`]), pluggable policy
//! backends ([`policy`]), an offline/online trainer ([`train`]), MAPE-K
//! control loops ([`control`]), and an experiment harness ([`eval`]).
//! Everything is seeded and single-threaded by default: identical inputs
//! produce bit-identical outputs.

pub mod cli;
pub mod control;
pub mod cot;
pub mod encode;
pub mod eval;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod sim;
pub mod train;

pub use encode::{DiscretizedState, Prompt, PromptTask, QualitativeLevel, Vocab};
pub use sim::{ClusterState, ScalingAction, Scenario, ServiceId, Simulator};
