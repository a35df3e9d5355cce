//! Reputation-driven, budget-constrained client selection for federated
//! learning, together with an in-process simulator to evaluate it.
//!
//! Each round the server scores clients from their reputation, picks a
//! subset under a bid budget with an exact knapsack solver, averages their
//! locally trained models, measures each member's Shapley contribution on a
//! validation set and feeds it back into the reputations.

pub mod check;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod model;
pub mod output;
pub mod reputation;
pub mod rng;
pub mod selection;
pub mod shapley;

pub use config::{ExperimentConfig, Method};
pub use error::{Error, Result};
pub use experiment::{run_comparison, run_experiment, RoundRecord, Scenario, Simulation};
pub use output::emit_csv;
