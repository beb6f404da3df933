//! IDX file format: big-endian `u32` magic, big-endian `u32` dimension sizes,
//! then unsigned bytes.

use std::fs;
use std::path::{Path, PathBuf};

use super::{DataError, LabeledSet};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Canonical file names: train images, train labels, test images, test labels.
pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, path: &Path) -> Result<&'a [u8], DataError> {
    if bytes.len() < header + len {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: header + len,
            actual: bytes.len(),
        });
    }
    Ok(&bytes[header..header + len])
}

/// Reads an image file; returns `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    let bytes = read_file(path)?;
    check_magic(&bytes, IMAGES_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let pixels = payload(&bytes, 16, n * rows * cols, path)?.to_vec();
    Ok((n, rows, cols, pixels))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>, DataError> {
    let bytes = read_file(path)?;
    check_magic(&bytes, LABELS_MAGIC, path)?;
    let n = be_u32(&bytes, 4, path)? as usize;
    Ok(payload(&bytes, 8, n, path)?.to_vec())
}

/// Loads an image/label file pair, scaling pixels to `[0, 1]`.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<LabeledSet, DataError> {
    let (n, rows, cols, pixels) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(DataError::EmptySet);
    }
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let images = Tensor::new(vec![n, rows, cols], data).map_err(|e| DataError::Invalid(e.to_string()))?;
    LabeledSet::new(images, labels.into_iter().map(usize::from).collect())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `[n, rows, cols]` images, mapping `[0,1]` back to bytes.
pub fn write_idx_images(set: &LabeledSet, path: &Path) -> Result<(), DataError> {
    let shape = set.images().shape();
    let [n, rows, cols] = *shape else {
        return Err(DataError::Invalid(format!("IDX images must be [n, rows, cols], got {shape:?}")));
    };
    let mut bytes = Vec::with_capacity(16 + set.images().len());
    for v in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    bytes.extend(set.images().data().iter().map(|&v| (v * 255.0).round() as u8));
    write_file(path, &bytes)
}

pub fn write_idx_labels(set: &LabeledSet, path: &Path) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(8 + set.len());
    bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(set.len() as u32).to_be_bytes());
    for &l in set.labels() {
        let b = u8::try_from(l).map_err(|_| DataError::Invalid(format!("label {l} does not fit a byte")))?;
        bytes.push(b);
    }
    write_file(path, &bytes)
}

/// The canonical train and test splits.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: LabeledSet,
    pub test: LabeledSet,
}

impl Mnist {
    /// Loads the four canonical files from `dir`. Both the `-idx3-ubyte` and
    /// `.idx3-ubyte` spellings are accepted.
    pub fn load_dir(dir: &Path) -> Result<Self, DataError> {
        let find = |name: &str| -> PathBuf {
            let dashed = dir.join(name);
            if dashed.exists() {
                return dashed;
            }
            let dotted = dir.join(name.replacen("-idx", ".idx", 1));
            if dotted.exists() {
                dotted
            } else {
                dashed
            }
        };
        let train = load_mnist(&find(MNIST_FILES[0]), &find(MNIST_FILES[1]))?;
        let test = load_mnist(&find(MNIST_FILES[2]), &find(MNIST_FILES[3]))?;
        Ok(Self { train, test })
    }
}
