//! Desk-scale models, datasets and the label-skewed partitioner.

mod data;
mod idx;
mod model;

pub use data::{gen_synthetic, partition_noniid, DataSource, Dataset, Shard};
pub use idx::{load_idx, parse_idx};
pub use model::{finite_diff_check, loss, minibatch_gradient, train_sgd, Model, ModelKind, ModelShape};
pub(crate) use model::axpy;
