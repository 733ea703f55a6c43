//! Deterministic simulator for cross-silo federated training with secure
//! aggregation, membership-inference attacks against it, and mitigations.

pub mod attacks;
pub mod dataset;
pub mod error;
pub mod federation;
pub mod harness;
pub mod mitigations;
pub mod nn;
pub mod rng;
pub mod secure_agg;

pub use error::{Error, Result};
