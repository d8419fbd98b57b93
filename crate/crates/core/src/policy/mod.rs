//! Per-agent policy and value networks.
//!
//! Networks are small fully connected MLPs over hand-rolled flat `f64`
//! parameter vectors. Keeping the numerics dependency-free makes runs
//! bit-reproducible across machines, which the training pipeline relies on.

mod adam;
mod checkpoint;
mod dist;
mod mlp;
mod nets;

pub use adam::Adam;
pub use checkpoint::{
    load_bundles, save_bundles, CheckpointError, CheckpointMeta, CHECKPOINT_FORMAT_VERSION,
};
pub use dist::{masked_softmax, MaskedCategorical};
pub use mlp::Mlp;
pub use nets::{PolicyBundle, PolicyEval, PolicyNet, ValueNet, HIDDEN_WIDTH};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("observation has {got} values but the network expects {expected}")]
    ObsShape { got: usize, expected: usize },
    #[error("observation mask has {got} slots but the network expects {expected}")]
    MaskShape { got: usize, expected: usize },
    #[error("every action slot is masked out")]
    AllMasked,
    #[error("logit {index} is not finite")]
    NonFiniteLogit { index: usize },
    #[error("action {action} out of range for {slots} slots")]
    ActionOutOfRange { action: usize, slots: usize },
    #[error("action {action} is masked out")]
    MaskedAction { action: usize },
    #[error("non-finite objective term at sample {index}")]
    NonFiniteSample { index: usize },
    #[error("parameter vector has {params} entries but gradients have {grads}")]
    ShapeMismatch { params: usize, grads: usize },
}
