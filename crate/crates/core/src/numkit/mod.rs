//! Minimal differentiable-computation core: dense networks with a
//! reverse-mode tape, Adam, Polyak averaging, Gaussian reparameterization,
//! a finite-difference checker and the checkpoint container.
//!
//! Everything runs in `f64` on a single thread.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod mlp;
pub mod ops;
pub mod params;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use gradcheck::{finite_diff_check, CheckPlan, Evaluation, GradCheckReport};
pub use mlp::{mlp_forward, Activation, LayerDims, LayerSpec, Mlp, MlpTape};
pub use ops::{kl_std_normal, kl_std_normal_rows, reparam_backward, reparam_sample, soft_update};
pub use params::{Entry, ParameterSet};

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("shape error at layer {layer}: expected {expected}, got {got}")]
    LayerShape { layer: usize, expected: usize, got: usize },
    #[error("gradient tape already consumed")]
    TapeConsumed,
    #[error("numeric fault: {0}")]
    NumericFault(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
