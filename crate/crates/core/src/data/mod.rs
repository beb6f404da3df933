//! MNIST ingestion and the class-incremental task presets.

mod batches;
mod idx;
mod set;
pub mod synthetic;
mod tasks;

pub use batches::{Batch, BatchStream};
pub use idx::{load_mnist, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, Mnist, MNIST_FILES};
pub use set::LabeledSet;
pub use tasks::{make_permutation_task, make_split_task, random_permutation, TaskKind, TaskPreset, TaskSpec};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated file, header promises {expected} bytes but {actual} are present")]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("unknown task preset {name:?}; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },
    #[error("empty sample set")]
    EmptySet,
    #[error("batch size {batch_size} exceeds set size {set_size}")]
    BatchTooLarge { batch_size: usize, set_size: usize },
    #[error("invalid data: {0}")]
    Invalid(String),
}
