//! Closed-loop poisoning laboratory for federated learning.
//!
//! The crate stands up a deterministic desk-scale FL system (dense
//! classifiers, IID/Dirichlet client splits), nine Byzantine-robust
//! aggregation rules, a sliding-mode controller that steers the global
//! model onto an attacker-chosen accuracy, and three crafted-submission
//! baseline attacks, all driven from TOML experiment manifests with CSV
//! and JSON outputs.

pub mod agr;
pub mod attack;
pub mod data;
pub mod error;
pub mod manifest;
pub mod model;
pub mod oracle;
pub mod params;
pub mod partition;
pub mod report;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use params::ParamVec;
