use rayon::prelude::*;

use super::{
    consolidation_key, derive_seed, prescient_quality, realistic_quality, snapshot_key, train_phase, AccessGuard,
    Curve, CurveKind, EvalPoint, ExperimentSettings, Grid, ModelFamily, Paradigm, Phase1Params, PhaseOutput,
    ProtocolError, RunKey, RunRecord, RunStatus, RunStore, SourceRef, Stage, Topology,
};
use crate::data::{LabeledSet, TaskSpec};
use crate::ewc::{estimate_fisher, lambda_from_retrain_rate, AnchorParams, Consolidation, FisherDiag};
use crate::nn::{NetworkSpec, NetworkState};
use crate::tensor::Tensor;

/// One (model, task, seed) experiment over a hyperparameter grid.
pub struct Experiment<'a> {
    pub model: ModelFamily,
    pub task: &'a TaskSpec,
    pub grid: Grid,
    pub settings: ExperimentSettings,
    pub seed: u64,
    /// Called once for every run that is executed (not for reused runs).
    pub progress: Option<&'a (dyn Fn(&RunRecord) + Sync)>,
}

/// Result of an evaluation protocol.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub q_star: f64,
    pub best_run_id: String,
    /// Every run of the experiment in grid order; for the realistic protocol
    /// the initial-training runs come first.
    pub records: Vec<RunRecord>,
    /// Runs computed in this call; the rest were loaded from the store.
    pub executed: usize,
    /// Refused reads of the D1 training set after it was sealed.
    pub d1_guard_trips: usize,
}

impl Experiment<'_> {
    fn validate(&self) -> Result<(), ProtocolError> {
        self.grid.validate()?;
        self.settings.validate()
    }

    fn key(&self, paradigm: Paradigm, stage: Stage, p: &Phase1Params, lr_d2: Option<f64>, source: Option<SourceRef>) -> RunKey {
        RunKey {
            model: self.model,
            task: self.task.name.clone(),
            paradigm,
            seed: self.seed,
            stage,
            topology: p.topology,
            lr_d1: p.lr_d1,
            lr_d2,
            settings: self.settings,
            source,
        }
    }

    fn spec(&self, topology: Topology) -> Result<NetworkSpec, ProtocolError> {
        self.model.network_spec(topology, self.task.sample_shape())
    }

    /// Seed of initial training; independent of paradigm and retraining rates.
    fn phase1_seed(&self, p: &Phase1Params) -> u64 {
        let (l, s) = match p.topology {
            Topology::Dense { layers, size } => (layers as u64, size as u64),
            Topology::Fixed => (0, 0),
        };
        derive_seed(self.seed, "phase1", &[l, s, p.lr_d1.to_bits()])
    }

    fn retrain_seed(&self, lr_d2: f64) -> u64 {
        derive_seed(self.seed, "retrain", &[lr_d2.to_bits()])
    }

    fn fisher_seed(&self) -> u64 {
        derive_seed(self.seed, "fisher", &[])
    }

    fn initial_training(&self, p: &Phase1Params, d1_train: &LabeledSet, track_best: bool) -> Result<PhaseOutput, ProtocolError> {
        let seed = self.phase1_seed(p);
        let state = NetworkState::init(&self.spec(p.topology)?, derive_seed(seed, "init", &[]))?;
        let targets: [&[&LabeledSet]; 1] = [&[&self.task.d1_test]];
        train_phase(state, d1_train, &targets, p.lr_d1, &self.settings, seed, None, track_best)
    }

    /// Retrains a copy of `start` on D2 with fresh momentum. Returns the
    /// χ(D2, D2) and χ(D2, D1∪D2) curves on global iterations.
    fn retrain(
        &self,
        start: &NetworkState,
        lr_d2: f64,
        consolidation: Option<&(FisherDiag, AnchorParams)>,
    ) -> Result<(Curve, Curve), ProtocolError> {
        let mut state = start.clone();
        state.reset_momentum();
        let consolidation = match consolidation {
            Some((fisher, anchor)) => Some(Consolidation {
                fisher: fisher.clone(),
                anchor: anchor.clone(),
                lambda: lambda_from_retrain_rate(lr_d2)?,
            }),
            None => None,
        };
        let t = self.task;
        let targets: [&[&LabeledSet]; 2] = [&[&t.d2_test], &[&t.d1_test, &t.d2_test]];
        let out = train_phase(
            state,
            &t.d2_train,
            &targets,
            lr_d2,
            &self.settings,
            self.retrain_seed(lr_d2),
            consolidation.as_ref(),
            false,
        )?;
        let iterations: Vec<usize> = out.iterations.iter().map(|i| i + self.settings.t_max).collect();
        let mut curves = out.curves.into_iter();
        let d2 = Curve { kind: CurveKind::D2OnD2, iterations: iterations.clone(), accuracy: curves.next().unwrap_or_default() };
        let union = Curve { kind: CurveKind::D2OnUnion, iterations, accuracy: curves.next().unwrap_or_default() };
        Ok((d2, union))
    }

    fn capture(&self, state: &NetworkState, d1_train: &LabeledSet) -> Result<(FisherDiag, AnchorParams), ProtocolError> {
        let fisher = estimate_fisher(state, d1_train, self.settings.fisher_samples, self.fisher_seed())?;
        Ok((fisher, AnchorParams::capture(state)))
    }

    fn report(&self, record: &RunRecord) {
        if let Some(p) = self.progress {
            p(record);
        }
    }
}

fn d1_curve(out: &PhaseOutput) -> Curve {
    Curve {
        kind: CurveKind::D1OnD1,
        iterations: out.iterations.clone(),
        accuracy: out.curves[0].clone(),
    }
}

fn failure_reason(records: &[RunRecord]) -> String {
    records
        .iter()
        .find_map(|r| match &r.status {
            RunStatus::Failed { reason } => Some(reason.clone()),
            RunStatus::Completed => None,
        })
        .unwrap_or_else(|| "no runs".into())
}

/// Highest quality among completed records; the first one wins ties.
fn best_quality(records: &[RunRecord]) -> Option<(f64, String)> {
    let mut best: Option<(f64, String)> = None;
    for r in records.iter().filter(|r| r.is_completed()) {
        if let Some(q) = r.quality {
            if best.as_ref().is_none_or(|(b, _)| q > *b) {
                best = Some((q, r.run_id.clone()));
            }
        }
    }
    best
}

/// Prescient protocol: every grid point is trained on D1 and retrained on
/// D2; the score of a run is its best union accuracy during retraining, and
/// q* is the best score over the grid.
pub fn prescient_eval(exp: &Experiment, store: &dyn RunStore) -> Result<Outcome, ProtocolError> {
    exp.validate()?;
    let groups = exp
        .grid
        .phase1
        .par_iter()
        .map(|p| prescient_group(exp, p, store))
        .collect::<Result<Vec<_>, _>>()?;
    let mut records = Vec::new();
    let mut executed = 0;
    for (recs, n) in groups {
        records.extend(recs);
        executed += n;
    }
    let (q_star, best_run_id) = best_quality(&records).ok_or_else(|| ProtocolError::AllRunsFailed(failure_reason(&records)))?;
    Ok(Outcome { q_star, best_run_id, records, executed, d1_guard_trips: 0 })
}

/// All retraining rates that share one initial training run.
fn prescient_group(exp: &Experiment, p: &Phase1Params, store: &dyn RunStore) -> Result<(Vec<RunRecord>, usize), ProtocolError> {
    let rates = &exp.grid.retrain_rates;
    let keys: Vec<RunKey> = rates
        .iter()
        .map(|&r| exp.key(Paradigm::Prescient, Stage::Full, p, Some(r), None))
        .collect();
    let mut slots: Vec<Option<RunRecord>> = keys.iter().map(|k| store.load_run(&super::run_id(k))).collect();
    if slots.iter().all(Option::is_some) {
        return Ok((slots.into_iter().flatten().collect(), 0));
    }

    let task = exp.task;
    let phase1 = exp.initial_training(p, &task.d1_train, false).and_then(|out| {
        let captured = if exp.model.uses_ewc() { Some(exp.capture(&out.state, &task.d1_train)?) } else { None };
        Ok((out, captured))
    });

    let mut executed = 0;
    for ((slot, key), &rate) in slots.iter_mut().zip(&keys).zip(rates) {
        if slot.is_some() {
            continue;
        }
        let record = match &phase1 {
            Err(e) => RunRecord::failed(key.clone(), format!("initial training: {e}")),
            Ok((out, captured)) => match exp.retrain(&out.state, rate, captured.as_ref()) {
                Err(e) => RunRecord::failed(key.clone(), format!("retraining: {e}")),
                Ok((d2, union)) => {
                    let mut r = RunRecord::new(key.clone());
                    r.quality = prescient_quality(&union);
                    r.q_r_star = d2.accuracy.get(1..).map(|a| a.iter().copied().fold(0.0, f64::max));
                    r.curves = vec![d1_curve(out), d2, union];
                    r
                }
            },
        };
        store.save_run(&record)?;
        exp.report(&record);
        executed += 1;
        *slot = Some(record);
    }
    Ok((slots.into_iter().flatten().collect(), executed))
}

/// Realistic protocol: the initial model m* is the best D1 snapshot over the
/// whole phase-1 grid; it is then retrained on D2 alone for each retraining
/// rate, and each retraining run stops at the first point whose D2 accuracy
/// exceeds 99% of its best. q* is the best union accuracy at such a stop.
pub fn realistic_eval(exp: &Experiment, store: &dyn RunStore) -> Result<Outcome, ProtocolError> {
    exp.validate()?;
    let task = exp.task;
    let guard = AccessGuard::new(&task.d1_train);

    // Phase 1: D1 only.
    let phase1 = exp
        .grid
        .phase1
        .par_iter()
        .map(|p| realistic_phase1(exp, p, &guard, store))
        .collect::<Result<Vec<_>, _>>()?;
    let mut executed = phase1.iter().filter(|(_, fresh)| *fresh).count();
    let mut records: Vec<RunRecord> = phase1.into_iter().map(|(r, _)| r).collect();

    let mut selected: Option<&RunRecord> = None;
    for r in records.iter().filter(|r| r.is_completed()) {
        if let Some(b) = r.best_d1 {
            if selected.is_none_or(|s| b.accuracy > s.best_d1.expect("selected has best_d1").accuracy) {
                selected = Some(r);
            }
        }
    }
    let m_star = selected.ok_or_else(|| ProtocolError::AllRunsFailed(failure_reason(&records)))?.clone();
    let source = SourceRef {
        run_id: m_star.run_id.clone(),
        iteration: m_star.best_d1.expect("selected has best_d1").iteration,
    };
    let p = Phase1Params { topology: m_star.key.topology, lr_d1: m_star.key.lr_d1 };
    let keys: Vec<RunKey> = exp
        .grid
        .retrain_rates
        .iter()
        .map(|&r| exp.key(Paradigm::Realistic, Stage::Retrain, &p, Some(r), Some(source.clone())))
        .collect();
    let existing: Vec<Option<RunRecord>> = keys.iter().map(|k| store.load_run(&super::run_id(k))).collect();

    // The snapshot, and for EWC the Fisher capture, are only needed when
    // some retraining run is missing.
    let mut start: Option<(NetworkState, Option<(FisherDiag, AnchorParams)>)> = None;
    if existing.iter().any(Option::is_none) {
        let tensors = store
            .load_tensors(&snapshot_key(&source.run_id))
            .ok_or_else(|| ProtocolError::Store(format!("snapshot of run {} is missing", source.run_id)))?;
        let state = NetworkState::from_params(&exp.spec(p.topology)?, tensors)?;
        let captured = if exp.model.uses_ewc() {
            let key = consolidation_key(&source, exp.settings.fisher_samples, exp.fisher_seed());
            Some(match store.load_tensors(&key).and_then(|t| split_consolidation(t, state.params())) {
                Some(c) => c,
                None => {
                    let c = exp.capture(&state, guard.get()?)?;
                    let mut t: Vec<Tensor> = c.0.tensors().to_vec();
                    t.extend_from_slice(c.1.tensors());
                    store.save_tensors(&key, &t)?;
                    c
                }
            })
        } else {
            None
        };
        start = Some((state, captured));
    }
    guard.seal();

    // Phase 2: D2 only.
    let d1_source = m_star.curve(CurveKind::D1OnD1).cloned();
    let retrained = existing
        .into_par_iter()
        .zip(keys.par_iter())
        .zip(exp.grid.retrain_rates.par_iter())
        .map(|((slot, key), &rate)| -> Result<(RunRecord, bool), ProtocolError> {
            if let Some(r) = slot {
                return Ok((r, false));
            }
            let (state, captured) = start.as_ref().expect("start is loaded when runs are missing");
            let record = match exp.retrain(state, rate, captured.as_ref()) {
                Err(e) => RunRecord::failed(key.clone(), format!("retraining: {e}")),
                Ok((d2, union)) => match realistic_quality(&d2, &union) {
                    None => RunRecord::failed(key.clone(), "retraining curve too short".into()),
                    Some(score) => {
                        let mut r = RunRecord::new(key.clone());
                        r.q_r_star = Some(score.q_r_star);
                        r.t_e = Some(d2.iterations[score.stop_index]);
                        r.quality = Some(score.quality);
                        r.curves = d1_source.iter().cloned().chain([d2, union]).collect();
                        r
                    }
                },
            };
            store.save_run(&record)?;
            exp.report(&record);
            Ok((record, true))
        })
        .collect::<Result<Vec<_>, _>>()?;
    executed += retrained.iter().filter(|(_, fresh)| *fresh).count();
    let retrained: Vec<RunRecord> = retrained.into_iter().map(|(r, _)| r).collect();

    let best = best_quality(&retrained);
    let first_failure = failure_reason(&retrained);
    records.extend(retrained);
    let (q_star, best_run_id) = best.ok_or(ProtocolError::AllRunsFailed(first_failure))?;
    Ok(Outcome { q_star, best_run_id, records, executed, d1_guard_trips: guard.trips() })
}

fn realistic_phase1(
    exp: &Experiment,
    p: &Phase1Params,
    guard: &AccessGuard,
    store: &dyn RunStore,
) -> Result<(RunRecord, bool), ProtocolError> {
    let key = exp.key(Paradigm::Realistic, Stage::Initial, p, None, None);
    if let Some(r) = store.load_run(&super::run_id(&key)) {
        if !r.is_completed() || store.load_tensors(&snapshot_key(&r.run_id)).is_some() {
            return Ok((r, false));
        }
    }
    let record = match exp.initial_training(p, guard.get()?, true) {
        Err(e) => RunRecord::failed(key, format!("initial training: {e}")),
        Ok(out) => match &out.best {
            None => RunRecord::failed(key, "no evaluation point after the first update".into()),
            Some(best) => {
                let mut r = RunRecord::new(key);
                r.best_d1 = Some(EvalPoint { iteration: best.iteration, accuracy: best.quality });
                r.curves = vec![d1_curve(&out)];
                store.save_tensors(&snapshot_key(&r.run_id), best.state.params())?;
                r
            }
        },
    };
    store.save_run(&record)?;
    exp.report(&record);
    Ok((record, true))
}

/// Splits stored tensors into Fisher and anchor halves matching `params`.
fn split_consolidation(mut tensors: Vec<Tensor>, params: &[Tensor]) -> Option<(FisherDiag, AnchorParams)> {
    if tensors.len() != 2 * params.len() {
        return None;
    }
    let anchor = tensors.split_off(params.len());
    let shapes_match = |ts: &[Tensor]| ts.iter().zip(params).all(|(t, p)| t.shape() == p.shape());
    if !shapes_match(&tensors) || !shapes_match(&anchor) {
        return None;
    }
    Some((FisherDiag::from_tensors(tensors).ok()?, AnchorParams::from_tensors(anchor)))
}
