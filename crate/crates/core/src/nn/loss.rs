use super::NnError;
use crate::tensor::Tensor;

/// Row-wise softmax of `[n, classes]` logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = logits.row_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy and its gradient `(softmax − one_hot) / n`.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let n = logits.rows();
    let c = logits.row_len();
    if labels.len() != n {
        return Err(NnError::ShapeMismatch {
            expected: vec![n],
            actual: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(NnError::LabelOutOfRange { label: bad, classes: c });
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (row, &label) in grad.data_mut().chunks_exact_mut(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() * inv_n;
        }
        row[label] -= inv_n;
    }
    // lse >= row[label] mathematically; clamp rounding noise at a perfect fit.
    Ok(((loss * inv_n).max(0.0), grad))
}
