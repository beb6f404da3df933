use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::ReportError;
use crate::data::TaskPreset;
use crate::protocols::{
    ExperimentSettings, Grid, ModelFamily, Paradigm, DEFAULT_LAYERS, DEFAULT_LR_D1, DEFAULT_LR_D2, DEFAULT_SIZES,
};

/// Environment variable naming the MNIST directory.
pub const DATA_DIR_ENV: &str = "CFBENCH_DATA_DIR";

/// Partial settings from one source (config file, environment or command
/// line). Sources are layered with [`ConfigLayer::over`].
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    /// Comma-separated model names, or `all`.
    pub model: Option<String>,
    /// Comma-separated task presets, or `all`.
    pub task: Option<String>,
    /// `prescient`, `realistic` or `both`.
    pub paradigm: Option<String>,
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub tmax: Option<usize>,
    pub batch_size: Option<usize>,
    pub eval_every: Option<usize>,
    pub fisher_samples: Option<usize>,
    pub permute_d1: Option<bool>,
    pub parallel: Option<usize>,
    pub layers: Option<Vec<usize>>,
    pub sizes: Option<Vec<usize>>,
    pub lr_d1: Option<Vec<f64>>,
    pub lr_d2: Option<Vec<f64>>,
}

macro_rules! layer_fields {
    ($hi:ident, $lo:ident; $($f:ident),*) => {
        ConfigLayer { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl ConfigLayer {
    pub fn from_toml_file(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io { path: path.to_path_buf(), source })?;
        toml::from_str(&text).map_err(|e| ReportError::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_env() -> Self {
        Self {
            data_dir: std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
            ..Self::default()
        }
    }

    /// `self` wins wherever it has a value.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        let hi = self;
        let lo = lower;
        layer_fields!(hi, lo; model, task, paradigm, seed, replicas, data_dir, out_dir, tmax, batch_size,
            eval_every, fisher_samples, permute_d1, parallel, layers, sizes, lr_d1, lr_d2)
    }

    pub fn resolve(self) -> Result<ExperimentConfig, ReportError> {
        let defaults = ExperimentSettings::default();
        let settings = ExperimentSettings {
            t_max: self.tmax.unwrap_or(defaults.t_max),
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            eval_every: self.eval_every.unwrap_or(defaults.eval_every),
            momentum: defaults.momentum,
            fisher_samples: self.fisher_samples.unwrap_or(defaults.fisher_samples),
            permute_d1: self.permute_d1.unwrap_or(defaults.permute_d1),
        };
        settings.validate()?;
        let cfg = ExperimentConfig {
            models: parse_list(self.model.as_deref(), "model", &ModelFamily::ALL)?,
            tasks: parse_list(self.task.as_deref(), "task", &TaskPreset::all().collect::<Vec<_>>())?,
            paradigms: match self.paradigm.as_deref().map(str::trim) {
                None => return Err(ReportError::Config("missing paradigm (prescient, realistic or both)".into())),
                Some(p) if p.eq_ignore_ascii_case("both") => vec![Paradigm::Prescient, Paradigm::Realistic],
                Some(p) => vec![p.parse()?],
            },
            seed: self.seed.unwrap_or(1),
            replicas: self.replicas.unwrap_or(1),
            data_dir: self.data_dir.unwrap_or_else(|| PathBuf::from("data/mnist")),
            out_dir: self.out_dir.unwrap_or_else(|| PathBuf::from("results")),
            settings,
            parallel: self.parallel.unwrap_or(1),
            layers: self.layers.unwrap_or_else(|| DEFAULT_LAYERS.to_vec()),
            sizes: self.sizes.unwrap_or_else(|| DEFAULT_SIZES.to_vec()),
            lr_d1: self.lr_d1.unwrap_or_else(|| DEFAULT_LR_D1.to_vec()),
            lr_d2: self.lr_d2.unwrap_or_else(|| DEFAULT_LR_D2.to_vec()),
        };
        if cfg.replicas == 0 || cfg.parallel == 0 {
            return Err(ReportError::Config("replicas and parallel must be positive".into()));
        }
        for m in &cfg.models {
            cfg.grid(*m)?;
        }
        Ok(cfg)
    }
}

fn parse_list<T>(value: Option<&str>, what: &str, all: &[T]) -> Result<Vec<T>, ReportError>
where
    T: Copy + std::str::FromStr,
    T::Err: std::fmt::Display,
{
    let value = value.ok_or_else(|| ReportError::Config(format!("missing {what}")))?;
    if value.trim().eq_ignore_ascii_case("all") {
        return Ok(all.to_vec());
    }
    value
        .split(',')
        .map(|v| v.trim().parse::<T>().map_err(|e| ReportError::Config(e.to_string())))
        .collect()
}

/// Fully resolved settings of a `run` or `grid` invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub models: Vec<ModelFamily>,
    pub tasks: Vec<TaskPreset>,
    pub paradigms: Vec<Paradigm>,
    pub seed: u64,
    /// Experiments are repeated for seeds `seed .. seed + replicas`.
    pub replicas: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub settings: ExperimentSettings,
    pub parallel: usize,
    pub layers: Vec<usize>,
    pub sizes: Vec<usize>,
    pub lr_d1: Vec<f64>,
    pub lr_d2: Vec<f64>,
}

impl ExperimentConfig {
    pub fn grid(&self, model: ModelFamily) -> Result<Grid, ReportError> {
        Ok(Grid::new(model, &self.layers, &self.sizes, &self.lr_d1, &self.lr_d2)?)
    }
}
