use super::{derive_seed, ExperimentSettings, ProtocolError};
use crate::data::{BatchStream, LabeledSet};
use crate::ewc::Consolidation;
use crate::nn::{count_correct, cross_entropy_loss, Mode, NetworkState};

/// A copy of the network at its best evaluation point.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub iteration: usize,
    pub quality: f64,
    pub state: NetworkState,
}

#[derive(Debug, Clone)]
pub struct PhaseOutput {
    pub state: NetworkState,
    /// Phase-local iterations at which the evaluation targets were scored.
    pub iterations: Vec<usize>,
    /// One accuracy series per evaluation target.
    pub curves: Vec<Vec<f64>>,
    /// Best point of the first target, after at least one update.
    pub best: Option<Snapshot>,
}

/// Runs `settings.t_max` momentum-SGD iterations on `train`.
///
/// Each evaluation target is a list of test sets scored as one concatenated
/// set. Targets are scored before the first update, every `eval_every`
/// iterations, and after the last update. With `consolidation`, the EWC
/// penalty gradient is added to every step.
#[allow(clippy::too_many_arguments)]
pub fn train_phase(
    mut state: NetworkState,
    train: &LabeledSet,
    eval_targets: &[&[&LabeledSet]],
    learning_rate: f64,
    settings: &ExperimentSettings,
    seed: u64,
    consolidation: Option<&Consolidation>,
    track_best: bool,
) -> Result<PhaseOutput, ProtocolError> {
    settings.validate()?;
    let points = settings.eval_points();
    let mut stream = BatchStream::new(train, settings.batch_size, derive_seed(seed, "batches", &[]))?;
    let dropout_base = derive_seed(seed, "dropout", &[]);

    let mut out = PhaseOutput {
        state: state.clone(),
        iterations: Vec::with_capacity(points.len()),
        curves: vec![Vec::with_capacity(points.len()); eval_targets.len()],
        best: None,
    };
    let record = |it: usize, state: &NetworkState, out: &mut PhaseOutput| -> Result<(), ProtocolError> {
        let scores = score_targets(state, eval_targets)?;
        out.iterations.push(it);
        for (c, s) in out.curves.iter_mut().zip(&scores) {
            c.push(*s);
        }
        if track_best && it > 0 {
            if let Some(&q) = scores.first() {
                if out.best.as_ref().is_none_or(|b| q > b.quality) {
                    out.best = Some(Snapshot { iteration: it, quality: q, state: state.clone() });
                }
            }
        }
        Ok(())
    };

    record(0, &state, &mut out)?;
    let mut next_point = 1;
    for it in 1..=settings.t_max {
        let batch = stream.next().expect("batch streams are endless");
        let (logits, trace) = state.forward(&batch.images, Mode::Train, dropout_base.wrapping_add(it as u64))?;
        let (loss, d_logits) = cross_entropy_loss(&logits, &batch.labels)?;
        if !loss.is_finite() {
            return Err(ProtocolError::NonFiniteLoss(it));
        }
        let mut grads = state.backward(&trace, &d_logits)?;
        if let Some(c) = consolidation {
            let (_, pg) = c.penalty(&state)?;
            grads.add_scaled(&pg, 1.0);
        }
        state.sgd_momentum_step(&grads, learning_rate, settings.momentum)?;
        if points.get(next_point) == Some(&it) {
            record(it, &state, &mut out)?;
            next_point += 1;
        }
    }
    out.state = state;
    Ok(out)
}

/// Accuracy on each target, counting every distinct test set only once.
fn score_targets(state: &NetworkState, targets: &[&[&LabeledSet]]) -> Result<Vec<f64>, ProtocolError> {
    let mut counted: Vec<(*const LabeledSet, usize)> = Vec::new();
    let mut scores = Vec::with_capacity(targets.len());
    for parts in targets {
        let (mut correct, mut total) = (0usize, 0usize);
        for set in parts.iter() {
            let ptr: *const LabeledSet = *set;
            let c = match counted.iter().find(|(p, _)| *p == ptr) {
                Some(&(_, c)) => c,
                None => {
                    let c = count_correct(state, set)?;
                    counted.push((ptr, c));
                    c
                }
            };
            correct += c;
            total += set.len();
        }
        if total == 0 {
            return Err(crate::nn::NnError::EmptyTestSet.into());
        }
        scores.push(correct as f64 / total as f64);
    }
    Ok(scores)
}
