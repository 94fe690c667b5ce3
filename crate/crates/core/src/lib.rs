//! Decentralized federated learning with Lloyd-Max quantized gossip.
//!
//! The crate is split along the lines of the protocol:
//!
//! * [`quantizers`] scalar/vector quantizers, codebook fitting, wire format and
//!   a name-keyed registry of quantizer strategies.
//! * [`topology`] doubly stochastic mixing matrices and their spectral value.
//! * [`learning`] desk-scale models, datasets and the non-iid partitioner.
//! * [`engine`] the round-synchronous protocol with estimate tracking,
//!   adaptive level scheduling and bit accounting.
//! * [`analysis`] closed-form convergence calculators.

pub mod analysis;
pub mod engine;
pub mod error;
pub mod learning;
pub mod quantizers;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
