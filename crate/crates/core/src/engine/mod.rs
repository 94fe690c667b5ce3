//! The round-synchronous protocol.
//!
//! Each round every node takes `τ` local SGD steps, then quantizes two
//! differentials (its local step and the change its last mixing caused) and
//! sends both to its neighbours. Receivers keep a running estimate of every
//! neighbour built only from those payloads and mix the estimates.

mod config;
mod metrics;
mod node;
mod schedule;
mod sim;

pub use config::{AdaptiveLevels, EtaDecay, RunConfig, DEFAULT_ETA, DEFAULT_ETA_IDX};
pub use metrics::{csv_row, MetricsLog, RoundRecord, CSV_HEADER};
pub use node::{communicate_phase, local_update_phase, CommReport, Estimate, Message, NodeState};
pub use schedule::adaptive_level_schedule;
pub use sim::{run_simulation, Simulation};
