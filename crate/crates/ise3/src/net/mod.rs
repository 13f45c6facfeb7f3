//! Equivariant attention networks over point graphs.
//!
//! Features live in fibers (per-type channel multiplicities). Each attention
//! layer derives queries by channel mixing, keys and values by applying
//! direction-dependent kernel matrices to neighbor features (with
//! coefficients from small invariant radial networks), softmax-normalizes
//! invariant logits over neighbors, and gates output norms. Blocks stack
//! layers and emit a one-channel type-1 position update; the iterative
//! model feeds updated positions (and recomputed bases and neighborhoods)
//! into the next block.

mod checkpoint;
mod config;
mod fiber;
mod layers;
mod model;
mod params;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CKPT_MAGIC};
pub use config::ModelConfig;
pub use fiber::{rotate_fiber, Fiber, FiberTensor, FiberVars};
pub use model::{
    forward, forward_batch, param_leaves, positions_of, CutImpl, ForwardOptions, ForwardOutput,
};
pub use params::ModelParams;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("fiber mismatch: {0}")]
    FiberMismatch(String),
    #[error("node {node} has an empty neighborhood")]
    EmptyNeighborhood { node: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] crate::so3::So3Error),
}
