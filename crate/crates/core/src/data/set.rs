use super::DataError;
use crate::tensor::Tensor;

/// Images `[n, ...]` with pixel values in `[0, 1]` and one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    images: Tensor,
    labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self, DataError> {
        if images.shape().len() < 2 {
            return Err(DataError::Invalid(format!(
                "images need a leading sample axis, got shape {:?}",
                images.shape()
            )));
        }
        if images.rows() != labels.len() {
            return Err(DataError::CountMismatch {
                images: images.rows(),
                labels: labels.len(),
            });
        }
        if let Some(v) = images.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(DataError::Invalid(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self { images, labels })
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample image shape, e.g. `[28, 28]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Samples whose label is in `classes`, in original order.
    pub fn filter_classes(&self, classes: &[usize]) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        self.subset(&idx)
    }

    /// Rearranges every image's pixels: `out[i] = in[perm[i]]`.
    pub fn permute_pixels(&self, perm: &[usize]) -> Self {
        let w = self.images.row_len();
        assert_eq!(perm.len(), w, "permutation length must equal pixel count");
        let mut data = vec![0.0; self.images.len()];
        for (dst, src) in data.chunks_exact_mut(w).zip(self.images.data().chunks_exact(w)) {
            for (d, &p) in dst.iter_mut().zip(perm) {
                *d = src[p];
            }
        }
        Self {
            images: Tensor::new(self.images.shape().to_vec(), data).expect("same shape"),
            labels: self.labels.clone(),
        }
    }

    /// Exact concatenation along the sample axis.
    pub fn concat(parts: &[&LabeledSet]) -> Self {
        let images = Tensor::concat_rows(&parts.iter().map(|p| &p.images).collect::<Vec<_>>());
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Self { images, labels }
    }

    /// Sample count per class `0..classes`.
    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.labels {
            if l < classes {
                counts[l] += 1;
            }
        }
        counts
    }
}
