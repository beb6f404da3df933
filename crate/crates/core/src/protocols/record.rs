use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentSettings, ModelFamily, ProtocolError, Topology};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Paradigm {
    Prescient,
    Realistic,
}

impl Paradigm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Prescient => "prescient",
            Self::Realistic => "realistic",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Paradigm {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "prescient" => Ok(Self::Prescient),
            "realistic" => Ok(Self::Realistic),
            _ => Err(ProtocolError::Config(format!(
                "unknown paradigm {s:?}; valid paradigms: prescient, realistic"
            ))),
        }
    }
}

/// Which part of the D1 → D2 sequence a record covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Initial training only (realistic phase 1).
    Initial,
    /// Retraining of a selected snapshot (realistic phase 2).
    Retrain,
    /// Initial training followed by retraining (prescient).
    Full,
}

/// The realistic phase-1 snapshot a retraining run starts from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub run_id: String,
    pub iteration: usize,
}

/// Everything that determines a run's outcome. Its hash is the run id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub model: ModelFamily,
    pub task: String,
    pub paradigm: Paradigm,
    pub seed: u64,
    pub stage: Stage,
    pub topology: Topology,
    pub lr_d1: f64,
    pub lr_d2: Option<f64>,
    pub settings: ExperimentSettings,
    pub source: Option<SourceRef>,
}

/// Hex SHA-256 of the key's JSON encoding (field order is fixed by the
/// struct, floats use shortest round-trip formatting).
pub fn run_id(key: &RunKey) -> String {
    let json = serde_json::to_string(key).expect("run keys always serialize");
    hex::encode(&Sha256::digest(json.as_bytes())[..16])
}

/// Store key of a phase-1 run's best parameter snapshot.
pub fn snapshot_key(run_id: &str) -> String {
    format!("snapshot-{run_id}")
}

/// Store key of the Fisher diagonal and anchor captured from a snapshot.
pub fn consolidation_key(source: &SourceRef, fisher_samples: usize, fisher_seed: u64) -> String {
    let text = format!("{}:{}:{}:{}", source.run_id, source.iteration, fisher_samples, fisher_seed);
    format!("consolidation-{}", hex::encode(&Sha256::digest(text.as_bytes())[..16]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// χ(D1, D1, t) during initial training.
    D1OnD1,
    /// χ(D2, D2, t) during retraining.
    D2OnD2,
    /// χ(D2, D1∪D2, t) during retraining.
    D2OnUnion,
}

impl CurveKind {
    pub const ALL: [CurveKind; 3] = [Self::D1OnD1, Self::D2OnD2, Self::D2OnUnion];

    pub fn name(self) -> &'static str {
        match self {
            Self::D1OnD1 => "d1_on_d1",
            Self::D2OnD2 => "d2_on_d2",
            Self::D2OnUnion => "d2_on_union",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::D1OnD1 => "χ(D1, D1, t)",
            Self::D2OnD2 => "χ(D2, D2, t)",
            Self::D2OnUnion => "χ(D2, D1∪D2, t)",
        }
    }
}

impl FromStr for CurveKind {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ProtocolError::Config(format!("unknown curve {s:?}")))
    }
}

/// Accuracy samples at strictly increasing global iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub kind: CurveKind,
    pub iterations: Vec<usize>,
    pub accuracy: Vec<f64>,
}

impl Curve {
    pub fn is_well_formed(&self) -> bool {
        self.iterations.len() == self.accuracy.len()
            && !self.iterations.is_empty()
            && self.iterations.windows(2).all(|w| w[0] < w[1])
            && self.accuracy.iter().all(|a| (0.0..=1.0).contains(a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub iteration: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { reason: String },
}

/// Persisted outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub key: RunKey,
    pub status: RunStatus,
    pub curves: Vec<Curve>,
    /// Best χ(D1, D1, t) after at least one update (initial-training runs).
    pub best_d1: Option<EvalPoint>,
    /// Best χ(D2, D2, t) during retraining.
    pub q_r_star: Option<f64>,
    /// Realistic stopping point (global iteration).
    pub t_e: Option<usize>,
    /// The run's score under its paradigm.
    pub quality: Option<f64>,
}

impl RunRecord {
    pub fn new(key: RunKey) -> Self {
        Self {
            run_id: run_id(&key),
            key,
            status: RunStatus::Completed,
            curves: Vec::new(),
            best_d1: None,
            q_r_star: None,
            t_e: None,
            quality: None,
        }
    }

    pub fn failed(key: RunKey, reason: String) -> Self {
        Self {
            status: RunStatus::Failed { reason },
            ..Self::new(key)
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn curve(&self, kind: CurveKind) -> Option<&Curve> {
        self.curves.iter().find(|c| c.kind == kind)
    }
}

/// Where runs and their tensor sidecars are kept between invocations.
pub trait RunStore: Sync {
    /// A stored record, or `None` if it is missing or unreadable.
    fn load_run(&self, run_id: &str) -> Option<RunRecord>;
    fn save_run(&self, record: &RunRecord) -> Result<(), ProtocolError>;
    fn load_tensors(&self, key: &str) -> Option<Vec<Tensor>>;
    fn save_tensors(&self, key: &str, tensors: &[Tensor]) -> Result<(), ProtocolError>;
}

/// In-process store; nothing survives the process.
#[derive(Debug, Default)]
pub struct MemoryStore {
    runs: Mutex<BTreeMap<String, RunRecord>>,
    tensors: Mutex<BTreeMap<String, Vec<Tensor>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn run_count(&self) -> usize {
        self.runs.lock().expect("store lock").len()
    }
}

impl RunStore for MemoryStore {
    fn load_run(&self, run_id: &str) -> Option<RunRecord> {
        self.runs.lock().expect("store lock").get(run_id).cloned()
    }

    fn save_run(&self, record: &RunRecord) -> Result<(), ProtocolError> {
        self.runs
            .lock()
            .expect("store lock")
            .insert(record.run_id.clone(), record.clone());
        Ok(())
    }

    fn load_tensors(&self, key: &str) -> Option<Vec<Tensor>> {
        self.tensors.lock().expect("store lock").get(key).cloned()
    }

    fn save_tensors(&self, key: &str, tensors: &[Tensor]) -> Result<(), ProtocolError> {
        self.tensors
            .lock()
            .expect("store lock")
            .insert(key.to_string(), tensors.to_vec());
        Ok(())
    }
}
