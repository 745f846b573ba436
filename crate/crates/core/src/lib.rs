//! Group-level user behavior simulation.
//!
//! Decision policies are mined from behavioral trajectories (persona
//! K-Means, per-choice explanations, HDBSCAN refinement, summarization)
//! and drive two prediction branches: a policy-prompted reasoning branch
//! and a policy-conditioned gradient-boosted model. Monte Carlo draws from
//! each scene's policy mixture are fused into a per-merchant purchase-rate
//! estimate.

pub mod aggregator;
pub mod backend;
pub mod clustering;
pub mod domain;
pub mod encoder;
pub mod error;
pub mod fitting;
pub mod io;
pub mod metrics;
pub mod miner;
pub mod pipeline;
pub mod reasoning;
pub mod rng;
pub mod synthworld;

pub use error::{Error, Result, Stage};
