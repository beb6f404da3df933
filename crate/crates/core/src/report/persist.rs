//! On-disk layout of an output directory:
//!
//! ```text
//! runs/<run id>.json          one record per run
//! runs/<run id>.curves.csv    the same curves as iteration,curve,accuracy rows
//! tensors/<key>.bin           parameter snapshots and Fisher/anchor tensors
//! summaries/<experiment>.json one summary per (model, task, paradigm, seed)
//! ```
//!
//! Every file is written to a temporary name and renamed into place, so a
//! reader never sees a partial file.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::protocols::{
    CurveKind, ExperimentSettings, Grid, ModelFamily, Outcome, Paradigm, ProtocolError, RunRecord, RunStatus, RunStore,
    Stage, Topology,
};
use crate::tensor::Tensor;

const TENSOR_MAGIC: &[u8; 4] = b"CFT1";

/// Writes `bytes` to `path` via a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let io = |source| ReportError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// Little-endian tensor list: magic, count, then per tensor its rank, extents
/// and `f64` values.
pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let len: usize = tensors.iter().map(|t| 8 + 8 * t.shape().len() + 8 * t.len()).sum();
    let mut out = Vec::with_capacity(12 + len);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ReportError> {
        let end = self.pos.checked_add(n).ok_or_else(|| corrupt_tensor("size overflow"))?;
        let s = self.bytes.get(self.pos..end).ok_or_else(|| corrupt_tensor("truncated"))?;
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, ReportError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn corrupt_tensor(what: &str) -> ReportError {
    ReportError::Corrupt(format!("tensor file: {what}"))
}

pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<Tensor>, ReportError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != TENSOR_MAGIC {
        return Err(corrupt_tensor("bad magic"));
    }
    let count = c.u64()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = c.u64()? as usize;
        if rank > 16 {
            return Err(corrupt_tensor("implausible rank"));
        }
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| corrupt_tensor("size overflow"))?;
        let data = c.take(n)?.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        tensors.push(Tensor::new(shape, data).map_err(|e| corrupt_tensor(&e.to_string()))?);
    }
    if c.pos != bytes.len() {
        return Err(corrupt_tensor("trailing bytes"));
    }
    Ok(tensors)
}

/// Curves of a record as `iteration,curve,accuracy` rows.
pub fn curves_csv(record: &RunRecord) -> String {
    let mut s = String::from("iteration,curve,accuracy\n");
    for c in &record.curves {
        for (it, acc) in c.iterations.iter().zip(&c.accuracy) {
            let _ = writeln!(s, "{it},{},{acc}", c.kind.name());
        }
    }
    s
}

/// Parses [`curves_csv`] output into `(iteration, curve, accuracy)` rows.
pub fn parse_curves_csv(text: &str) -> Result<Vec<(usize, CurveKind, f64)>, ReportError> {
    let mut lines = text.lines();
    if lines.next() != Some("iteration,curve,accuracy") {
        return Err(ReportError::Corrupt("curve CSV header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let bad = || ReportError::Corrupt(format!("curve CSV row {l:?}"));
            let mut f = l.split(',');
            let it = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let kind = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let acc = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if f.next().is_some() {
                return Err(bad());
            }
            Ok((it, kind, acc))
        })
        .collect()
}

/// Result of one (model, task, paradigm, seed) experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub model: ModelFamily,
    pub task: String,
    pub paradigm: Paradigm,
    pub seed: u64,
    pub settings: ExperimentSettings,
    pub grid: Grid,
    pub q_star: f64,
    pub best_run_id: String,
    pub chance_level: f64,
    pub runs: Vec<RunBrief>,
}

/// One line of a summary's run listing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBrief {
    pub run_id: String,
    pub stage: Stage,
    pub topology: Topology,
    pub lr_d1: f64,
    pub lr_d2: Option<f64>,
    pub quality: Option<f64>,
    pub t_e: Option<usize>,
    pub failure: Option<String>,
}

impl ExperimentSummary {
    #[allow(clippy::too_many_arguments)]
    pub fn from_outcome(
        model: ModelFamily,
        task: &str,
        paradigm: Paradigm,
        seed: u64,
        settings: ExperimentSettings,
        grid: Grid,
        chance_level: f64,
        outcome: &Outcome,
    ) -> Self {
        let runs = outcome
            .records
            .iter()
            .map(|r| RunBrief {
                run_id: r.run_id.clone(),
                stage: r.key.stage,
                topology: r.key.topology,
                lr_d1: r.key.lr_d1,
                lr_d2: r.key.lr_d2,
                quality: r.quality,
                t_e: r.t_e,
                failure: match &r.status {
                    RunStatus::Completed => None,
                    RunStatus::Failed { reason } => Some(reason.clone()),
                },
            })
            .collect();
        Self {
            model,
            task: task.to_string(),
            paradigm,
            seed,
            settings,
            grid,
            q_star: outcome.q_star,
            best_run_id: outcome.best_run_id.clone(),
            chance_level,
            runs,
        }
    }

    pub fn file_name(&self) -> String {
        summary_file_name(self.model, &self.task, self.paradigm, self.seed)
    }
}

pub fn summary_file_name(model: ModelFamily, task: &str, paradigm: Paradigm, seed: u64) -> String {
    format!("{}_{}_{}_s{}.json", model.name(), task, paradigm.name(), seed)
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("records always serialize");
    s.push('\n');
    s.into_bytes()
}

/// Output directory implementing [`RunStore`].
#[derive(Debug, Clone)]
pub struct DirStore {
    root: PathBuf,
}

impl DirStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn run_path(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(format!("{run_id}.json"))
    }

    pub fn curves_path(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(format!("{run_id}.curves.csv"))
    }

    pub fn summary_dir(&self) -> PathBuf {
        self.root.join("summaries")
    }

    fn tensor_path(&self, key: &str) -> PathBuf {
        self.root.join("tensors").join(format!("{key}.bin"))
    }

    pub fn save_summary(&self, summary: &ExperimentSummary) -> Result<PathBuf, ReportError> {
        let path = self.summary_dir().join(summary.file_name());
        write_atomic(&path, &to_json(summary))?;
        Ok(path)
    }

    pub fn read_run(&self, run_id: &str) -> Result<RunRecord, ReportError> {
        read_json(&self.run_path(run_id))
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ReportError> {
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })?;
    serde_json::from_str(&text).map_err(|e| ReportError::Corrupt(format!("{}: {e}", path.display())))
}

/// A file that could not be read, with the reason.
pub type Unreadable = (PathBuf, String);

/// Every `*.json` summary below `dir` (searched recursively): the readable
/// ones in path order, and the unreadable ones with their errors.
pub fn load_summaries(dir: &Path) -> Result<(Vec<ExperimentSummary>, Vec<Unreadable>), ReportError> {
    let mut paths = Vec::new();
    collect_json(dir, &mut paths)?;
    paths.sort();
    let mut good = Vec::new();
    let mut bad = Vec::new();
    for p in paths {
        // Run records live alongside summaries in an output directory.
        if p.parent().and_then(Path::file_name).is_some_and(|n| n == "runs") {
            continue;
        }
        match read_json::<ExperimentSummary>(&p) {
            Ok(s) => good.push(s),
            Err(e) => bad.push((p, e.to_string())),
        }
    }
    Ok((good, bad))
}

fn collect_json(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    let entries = fs::read_dir(dir).map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;
    for e in entries {
        let e = e.map_err(|source| ReportError::Io { path: dir.to_path_buf(), source })?;
        let path = e.path();
        if path.is_dir() {
            collect_json(&path, out)?;
        } else if path.extension().is_some_and(|x| x == "json") {
            out.push(path);
        }
    }
    Ok(())
}

fn store_err(e: ReportError) -> ProtocolError {
    ProtocolError::Store(e.to_string())
}

impl RunStore for DirStore {
    fn load_run(&self, run_id: &str) -> Option<RunRecord> {
        self.read_run(run_id).ok().filter(|r| r.run_id == run_id)
    }

    fn save_run(&self, record: &RunRecord) -> Result<(), ProtocolError> {
        write_atomic(&self.curves_path(&record.run_id), curves_csv(record).as_bytes()).map_err(store_err)?;
        write_atomic(&self.run_path(&record.run_id), &to_json(record)).map_err(store_err)
    }

    fn load_tensors(&self, key: &str) -> Option<Vec<Tensor>> {
        let bytes = fs::read(self.tensor_path(key)).ok()?;
        decode_tensors(&bytes).ok()
    }

    fn save_tensors(&self, key: &str, tensors: &[Tensor]) -> Result<(), ProtocolError> {
        write_atomic(&self.tensor_path(key), &encode_tensors(tensors)).map_err(store_err)
    }
}
