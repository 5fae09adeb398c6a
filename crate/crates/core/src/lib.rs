//! Deterministic federated-learning simulator with a two-stage
//! reinforcement-learning aggregator.
//!
//! Stage one trains an A2C policy that decides which uploaded client models
//! are trustworthy; stage two trains a TD3 agent that assigns fusion weights
//! to the trusted models. FedAvg and FedProx run on the same simulated
//! federation for paired comparison.

pub mod env;
pub mod orchestrator;
pub mod error;
pub mod nn;
pub mod seed;
pub mod stage1;
pub mod stage2;

pub use error::{Error, Result};
