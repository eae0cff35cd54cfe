//! Deterministic federated learning simulator.
//!
//! Clients train small ReLU MLPs on label-skewed partitions of a dataset and
//! a server aggregates them round by round. Four local update rules are
//! available: FedAvg, FedProx, pFedSD (self-distillation from the client's
//! previous model) and FedCKD (distillation from both the global model and
//! the client's previous model, with an exponentially annealed weight).
//!
//! Every random stream is derived from a single master seed, and client
//! updates are reduced in a fixed order, so a run is bit-for-bit
//! reproducible regardless of thread count.

// `!(x > 0.0)` is how validators reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod runner;
pub mod strategies;

pub use config::{parse_config, ExperimentConfig};
pub use engine::{run_experiment, ExperimentOutcome, Simulation};
pub use error::{Error, Result};
