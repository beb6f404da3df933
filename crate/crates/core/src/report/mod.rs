//! Configuration, persistence of run records, result tables and curve plots.

mod config;
mod persist;
mod plot;
mod table;

pub use config::{ConfigLayer, ExperimentConfig, DATA_DIR_ENV};
pub use persist::{
    curves_csv, decode_tensors, encode_tensors, load_summaries, parse_curves_csv, read_json, summary_file_name,
    write_atomic, DirStore, ExperimentSummary, RunBrief, Unreadable,
};
pub use plot::{curve_color, render_svg};
pub use table::{ResultTable, MISSING};

use std::path::PathBuf;

use thiserror::Error;

use crate::data::{DataError, Mnist, TaskSpec};
use crate::protocols::{chance_level, derive_seed, prescient_eval, realistic_eval, Experiment, Paradigm, ProtocolError, RunRecord};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("run {0} has no curves to plot")]
    EmptyCurves(String),
    #[error("no records found in {0}")]
    NoRecords(PathBuf),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Outcome of [`run_batch`].
#[derive(Debug, Default)]
pub struct BatchResult {
    pub summaries: Vec<(ExperimentSummary, PathBuf)>,
    /// Experiments in which no run succeeded, with the reason.
    pub failures: Vec<String>,
    pub executed_runs: usize,
}

/// Progress events emitted while a batch runs.
pub enum Progress<'a> {
    ExperimentStarted { label: &'a str },
    RunFinished { label: &'a str, record: &'a RunRecord },
    ExperimentFinished { label: &'a str, summary: &'a ExperimentSummary, executed: usize },
}

/// Runs every (model, task, paradigm, seed) combination of `cfg`, writing
/// run records and one summary per experiment below `cfg.out_dir`.
/// Experiments already persisted are reused run by run.
pub fn run_batch(cfg: &ExperimentConfig, mnist: &Mnist, progress: &(dyn Fn(Progress<'_>) + Sync)) -> Result<BatchResult, ReportError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel)
        .build()
        .map_err(|e| ReportError::Config(format!("thread pool: {e}")))?;
    let store = DirStore::new(&cfg.out_dir);
    let mut result = BatchResult::default();
    for seed in cfg.seed..cfg.seed + cfg.replicas {
        for &preset in &cfg.tasks {
            let task: TaskSpec = preset.build(mnist, derive_seed(seed, "permutation", &[]), cfg.settings.permute_d1)?;
            for &model in &cfg.models {
                for &paradigm in &cfg.paradigms {
                    let label = format!("{model} {} {paradigm} seed {seed}", task.name);
                    progress(Progress::ExperimentStarted { label: &label });
                    let on_run = |r: &RunRecord| progress(Progress::RunFinished { label: &label, record: r });
                    let exp = Experiment {
                        model,
                        task: &task,
                        grid: cfg.grid(model)?,
                        settings: cfg.settings,
                        seed,
                        progress: Some(&on_run),
                    };
                    let outcome = pool.install(|| match paradigm {
                        Paradigm::Prescient => prescient_eval(&exp, &store),
                        Paradigm::Realistic => realistic_eval(&exp, &store),
                    });
                    let outcome = match outcome {
                        Ok(o) => o,
                        Err(ProtocolError::AllRunsFailed(reason)) => {
                            result.failures.push(format!("{label}: every run failed: {reason}"));
                            continue;
                        }
                        Err(e) => return Err(e.into()),
                    };
                    let summary = ExperimentSummary::from_outcome(
                        model,
                        &task.name,
                        paradigm,
                        seed,
                        cfg.settings,
                        exp.grid.clone(),
                        chance_level(&task),
                        &outcome,
                    );
                    let path = store.save_summary(&summary)?;
                    progress(Progress::ExperimentFinished { label: &label, summary: &summary, executed: outcome.executed });
                    result.executed_runs += outcome.executed;
                    result.summaries.push((summary, path));
                }
            }
        }
    }
    Ok(result)
}
