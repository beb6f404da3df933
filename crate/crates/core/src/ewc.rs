//! Elastic weight consolidation.
//!
//! After training on D1, the diagonal of the Fisher information is estimated
//! from D1 samples and the parameters are snapshotted. During retraining the
//! quadratic penalty `(λ/2)·Σ F_i·(θ_i − θ*_i)²` is added to the loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::LabeledSet;
use crate::nn::{softmax, Gradients, Mode, NetworkState, NnError};
use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EwcError {
    #[error("Fisher estimation needs at least one sample")]
    EmptySampleSet,
    #[error("parameter tensor {index}: expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        index: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("retraining rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("Fisher entries must be finite and non-negative")]
    InvalidFisher,
    #[error("non-finite gradient while estimating Fisher information")]
    NonFiniteGradient,
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn check_shapes(params: &[Tensor], other: &[Tensor]) -> Result<(), EwcError> {
    if params.len() != other.len() {
        return Err(EwcError::ShapeMismatch {
            index: params.len().min(other.len()),
            expected: vec![params.len()],
            actual: vec![other.len()],
        });
    }
    for (index, (p, o)) in params.iter().zip(other).enumerate() {
        if p.shape() != o.shape() {
            return Err(EwcError::ShapeMismatch {
                index,
                expected: p.shape().to_vec(),
                actual: o.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Per-parameter importance weights, one non-negative tensor per parameter
/// tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherDiag(Vec<Tensor>);

impl FisherDiag {
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self, EwcError> {
        if tensors.iter().flat_map(|t| t.data()).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(EwcError::InvalidFisher);
        }
        Ok(Self(tensors))
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.0
    }
}

/// Parameters captured at the end of D1 training.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorParams(Vec<Tensor>);

impl AnchorParams {
    pub fn capture(state: &NetworkState) -> Self {
        Self(state.params().to_vec())
    }

    pub fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Self(tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.0
    }
}

/// One Fisher sample: the D1 index used and the label drawn from the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FisherDraw {
    pub index: usize,
    pub sampled_label: usize,
}

/// Diagonal Fisher from `n_samples` single examples drawn uniformly (with
/// replacement) from `d1`. Each example contributes the squared gradient of
/// `log p(ŷ|x)` where `ŷ` is sampled from the network's own softmax.
pub fn estimate_fisher(state: &NetworkState, d1: &LabeledSet, n_samples: usize, seed: u64) -> Result<FisherDiag, EwcError> {
    Ok(estimate_fisher_traced(state, d1, n_samples, seed)?.0)
}

/// [`estimate_fisher`] that also reports which samples and labels were drawn.
pub fn estimate_fisher_traced(
    state: &NetworkState,
    d1: &LabeledSet,
    n_samples: usize,
    seed: u64,
) -> Result<(FisherDiag, Vec<FisherDraw>), EwcError> {
    if n_samples == 0 || d1.is_empty() {
        return Err(EwcError::EmptySampleSet);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = Gradients::zeros_like(state);
    let mut draws = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let index = rng.random_range(0..d1.len());
        let x = d1.images().select_rows(&[index]);
        let (logits, trace) = state.forward(&x, Mode::Eval, 0)?;
        let p = softmax(&logits);
        let sampled_label = sample_categorical(p.row(0), rng.random::<f64>());
        // d(−log p_ŷ)/d logits = p − one_hot(ŷ); the sign vanishes when squared.
        let mut d = p;
        d.data_mut()[sampled_label] -= 1.0;
        let g = state.backward(&trace, &d)?;
        if !g.all_finite() {
            return Err(EwcError::NonFiniteGradient);
        }
        for (a, gt) in acc.0.iter_mut().zip(g.iter()) {
            for (av, gv) in a.data_mut().iter_mut().zip(gt.data()) {
                *av += gv * gv;
            }
        }
        draws.push(FisherDraw { index, sampled_label });
    }
    let inv = 1.0 / n_samples as f64;
    let tensors = acc.0.into_iter().map(|t| t.map(|v| v * inv)).collect();
    Ok((FisherDiag::from_tensors(tensors)?, draws))
}

/// Inverse-CDF draw from a probability row given `u ∈ [0,1)`.
fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (k, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return k;
        }
    }
    probs.len() - 1
}

/// `(λ/2)·Σ F_i·(θ_i − θ*_i)²` and its gradient `λ·F_i·(θ_i − θ*_i)`.
pub fn ewc_penalty(
    state: &NetworkState,
    anchor: &AnchorParams,
    fisher: &FisherDiag,
    lambda: f64,
) -> Result<(f64, Gradients), EwcError> {
    check_shapes(state.params(), anchor.tensors())?;
    check_shapes(state.params(), fisher.tensors())?;
    let mut penalty = 0.0;
    let mut grads = Vec::with_capacity(state.params().len());
    for ((p, a), f) in state.params().iter().zip(anchor.tensors()).zip(fisher.tensors()) {
        let mut g = Tensor::zeros(p.shape());
        for (((gv, pv), av), fv) in g.data_mut().iter_mut().zip(p.data()).zip(a.data()).zip(f.data()) {
            let diff = pv - av;
            penalty += fv * diff * diff;
            *gv = lambda * fv * diff;
        }
        grads.push(g);
    }
    Ok((0.5 * lambda * penalty, Gradients(grads)))
}

/// Penalty strength for a retraining run: `λ = 1/ε_D2`.
pub fn lambda_from_retrain_rate(epsilon_d2: f64) -> Result<f64, EwcError> {
    if epsilon_d2 <= 0.0 || !epsilon_d2.is_finite() {
        return Err(EwcError::NonPositiveRate(epsilon_d2));
    }
    Ok(1.0 / epsilon_d2)
}

/// Fisher, anchor and λ bundled for use during retraining.
#[derive(Debug, Clone)]
pub struct Consolidation {
    pub fisher: FisherDiag,
    pub anchor: AnchorParams,
    pub lambda: f64,
}

impl Consolidation {
    pub fn penalty(&self, state: &NetworkState) -> Result<(f64, Gradients), EwcError> {
        ewc_penalty(state, &self.anchor, &self.fisher, self.lambda)
    }
}
