//! The two evaluation protocols: training loops, hyperparameter grids, curve
//! recording and best-model selection.
//!
//! Every run trains on D1 for `t_max` iterations and then retrains on D2 for
//! another `t_max`. The prescient protocol scores a run by the best union
//! accuracy seen at any retraining step. The realistic protocol picks the
//! initial model on D1 alone, and stops retraining as soon as D2 accuracy
//! comes within 1% of its best.

mod experiment;
mod guard;
mod models;
mod record;
mod seeds;
mod selection;
mod training;

pub use experiment::{prescient_eval, realistic_eval, Experiment, Outcome};
pub use guard::AccessGuard;
pub use models::{
    ExperimentSettings, Grid, HyperParams, ModelFamily, Phase1Params, Topology, DEFAULT_LAYERS, DEFAULT_LR_D1,
    DEFAULT_LR_D2, DEFAULT_SIZES,
};
pub use record::{
    consolidation_key, run_id, snapshot_key, Curve, CurveKind, EvalPoint, MemoryStore, Paradigm, RunKey, RunRecord,
    RunStatus, RunStore, SourceRef, Stage,
};
pub use seeds::derive_seed;
pub use selection::{prescient_quality, realistic_quality, stopping_index, RetrainScore};
pub use training::{train_phase, PhaseOutput, Snapshot};

use std::collections::BTreeSet;

use thiserror::Error;

use crate::data::{DataError, TaskKind, TaskSpec};
use crate::ewc::EwcError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("every run of the experiment failed; first failure: {0}")]
    AllRunsFailed(String),
    #[error("D1 training data accessed after it was sealed")]
    D1Sealed,
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("run store: {0}")]
    Store(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ewc(#[from] EwcError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Union-test accuracy of a model that has completely forgotten D1.
///
/// For a class split this is the share of union classes that belong to D2,
/// floored at one uniform guess; for a permutation task it is one uniform
/// guess over the classes present.
pub fn chance_level(task: &TaskSpec) -> f64 {
    match &task.kind {
        TaskKind::ClassSplit { d1_classes, d2_classes } => {
            let union: BTreeSet<usize> = d1_classes.iter().chain(d2_classes).copied().collect();
            if union.is_empty() {
                return 0.0;
            }
            let n = union.len() as f64;
            (d2_classes.len() as f64 / n).max(1.0 / n)
        }
        TaskKind::Permutation { .. } => {
            let classes: BTreeSet<usize> = task.d1_test.labels().iter().chain(task.d2_test.labels()).copied().collect();
            1.0 / classes.len().max(1) as f64
        }
    }
}
