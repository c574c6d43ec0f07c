//! Deterministic simulator for federated optimization with client-level
//! momentum.
//!
//! The crate provides:
//!
//! * synthetic problem suites (heterogeneous quadratics, federated softmax
//!   regression) with analytically known constants,
//! * label-based dataset partitioning with a Dirichlet heterogeneity dial,
//! * federated algorithms — FedAvg, FedCM (client-level momentum), FedAdam,
//!   and SCAFFOLD — driven by a round engine with per-round audit hooks,
//! * diagnostics that verify the momentum-aggregation identity and the
//!   shifted-sequence update at runtime, measure client drift, and evaluate
//!   convergence-rate constants,
//! * a config/experiment layer used by the `fedsim` command-line binary.
//!
//! Everything is deterministic: every random draw comes from a ChaCha stream
//! keyed by seed, purpose, round, and client id, so reruns are bitwise
//! identical and clients can be simulated in any order.

pub mod algorithms;
pub mod config;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod params;
pub mod partition;
pub mod problems;
pub mod rng;
pub mod sampling;
pub mod state;
pub mod verify;

pub use error::{Error, Result};
pub use params::ModelParams;
pub use rng::StreamRoot;
