//! Deterministic, in-process simulator for blockchain-backed decentralized
//! federated learning.
//!
//! A run is fully described by a [`config::SimulationConfig`]. Every round the
//! configured consensus strategy assigns roles, trainers run local SGD (with
//! their attack applied when malicious), the validation strategy filters the
//! submitted updates, the aggregation strategy folds the accepted ones into the
//! next global model, and a hash-linked block records the outcome.
//!
//! The interchangeable algorithm families (consensus, validation, aggregation,
//! attacks) sit behind traits and are looked up by name in a
//! [`registry::Registry`], so new variants can be plugged in without touching
//! the engine.

pub mod aggregation;
pub mod attacks;
pub mod config;
pub mod consensus;
pub mod dataset;
pub mod engine;
pub mod hash;
pub mod ledger;
pub mod metrics;
pub mod model;
pub mod registry;
pub mod seed;
pub mod strategies;
pub mod update;
pub mod validation;

pub use config::SimulationConfig;
pub use engine::{run, RunOptions, RunResult};
pub use hash::Digest;

use serde::{Deserialize, Serialize};
use std::fmt;

/// Identity of a simulated node. Nodes are numbered `0..nodes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Form of the payload every node submits in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateForm {
    Weights,
    Gradients,
}

impl UpdateForm {
    pub fn as_str(self) -> &'static str {
        match self {
            UpdateForm::Weights => "weights",
            UpdateForm::Gradients => "gradients",
        }
    }
}

impl fmt::Display for UpdateForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
