//! Exact and approximate online gradient engines for recurrent networks.
//!
//! A model is a DAG of recurrent layers (a chain is the path-graph case).
//! Gradients of the episode loss can be computed by
//!
//! - [`oracles::bptt_gradient`]: reverse mode over the unrolled graph,
//! - [`rtrl::deep_rtrl_episode`]: exact forward-mode sensitivities,
//! - [`eprop::deep_eprop_episode`]: per-synapse eligibility traces,
//!
//! and cross-checked against finite differences and an explicit enumeration of
//! gradient paths through the time × depth lattice.

pub mod bench;
pub mod cli;
pub mod engine;
pub mod eprop;
pub mod error;
pub mod linalg;
pub mod network;
pub mod oracles;
pub mod pool;
pub mod rtrl;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
