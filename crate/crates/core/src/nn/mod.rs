//! Minimal feed-forward network engine.
//!
//! Supports the fixed layer set the benchmark models need (fully connected,
//! conv, max-pool, ReLU, inverted dropout, LWTA, softmax readout), with
//! hand-written backward passes and classical-momentum SGD.

mod eval;
mod kernels;
mod loss;
mod network;
mod spec;

pub use eval::{accuracy, accuracy_over, argmax, count_correct};
pub use loss::{cross_entropy_loss, softmax};
pub use network::{ForwardTrace, Gradients, Mode, NetworkState};
pub use spec::{LayerSpec, NetworkSpec};

use thiserror::Error;

use crate::tensor::ShapeError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("forward trace does not belong to the current network state")]
    StaleTrace,
    #[error("non-finite gradient in parameter tensor {param}")]
    NonFiniteGradient { param: usize },
    #[error("empty test set")]
    EmptyTestSet,
    #[error(transparent)]
    Shape(#[from] ShapeError),
}
