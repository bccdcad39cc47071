//! Networked actor-critic with push-sum critics over directed graphs,
//! including communication-efficient entry-wise gossip, exact small-scale
//! oracles and a configuration-driven experiment runner.

pub mod algo;
pub mod cli;
pub mod critic;
pub mod env;
pub mod error;
pub mod graph;
pub mod oracle;
pub mod par;
pub mod policy;
pub mod textio;

pub use error::{Error, Result};

/// Deterministic random number generator used throughout.
pub type SimRng = rand_chacha::ChaCha8Rng;
