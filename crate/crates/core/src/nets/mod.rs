//! Small dense networks with hand-written reverse mode.
//!
//! Training runs in `f32`; every routine is generic so the gradient checks
//! can run the same code in `f64`.

mod adam;
pub mod dist;
mod mlp;

use std::fmt::Debug;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use thiserror::Error;

pub use adam::{clip_grad_norm, Adam};
pub use mlp::{elu, ForwardPass, LayerShape, Mlp, MlpSpec};

pub trait Real: Float + LinalgScalar + ScalarOperand + Debug + Send + Sync + 'static {}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("input has {got} columns, network expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
}

/// Head output for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyOutput<F: Real> {
    pub mean: Vec<F>,
    pub log_std: Vec<F>,
    pub action: Vec<F>,
    pub log_prob: F,
}
