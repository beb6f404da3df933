use super::{NetworkState, NnError};
use crate::data::LabeledSet;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 1000;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Number of samples whose eval-mode argmax logit equals the label.
pub fn count_correct(state: &NetworkState, set: &LabeledSet) -> Result<usize, NnError> {
    let mut correct = 0;
    let n = set.len();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch: Tensor = set.images().select_rows(&idx);
        let logits = state.logits(&batch)?;
        correct += (0..logits.rows())
            .filter(|&r| argmax(logits.row(r)) == set.labels()[start + r])
            .count();
        start = end;
    }
    Ok(correct)
}

/// Fraction of `set` classified correctly in eval mode.
pub fn accuracy(state: &NetworkState, set: &LabeledSet) -> Result<f64, NnError> {
    if set.is_empty() {
        return Err(NnError::EmptyTestSet);
    }
    Ok(count_correct(state, set)? as f64 / set.len() as f64)
}

/// Accuracy over the concatenation of `parts`, evaluated part by part.
pub fn accuracy_over(state: &NetworkState, parts: &[&LabeledSet]) -> Result<f64, NnError> {
    let total: usize = parts.iter().map(|p| p.len()).sum();
    if total == 0 {
        return Err(NnError::EmptyTestSet);
    }
    let mut correct = 0;
    for p in parts {
        correct += count_correct(state, p)?;
    }
    Ok(correct as f64 / total as f64)
}
