//! Benchmark harness for catastrophic forgetting on class-incremental tasks
//! built from MNIST.
//!
//! A network is trained on sub-task D1, then retrained on a disjoint sub-task
//! D2, while test accuracy on D1, D2 and their union is recorded. Two model
//! selection protocols are provided: [`protocols::prescient_eval`], which may
//! look at both sub-tasks when choosing hyperparameters and the retraining
//! stopping point, and [`protocols::realistic_eval`], which selects on D1
//! alone and stops retraining using D2 alone.

pub mod data;
pub mod ewc;
pub mod nn;
pub mod protocols;
pub mod report;
pub mod tensor;

pub use tensor::Tensor;
