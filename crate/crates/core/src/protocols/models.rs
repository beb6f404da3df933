use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::nn::{LayerSpec, NetworkSpec};

const INPUT_DROPOUT: f64 = 0.2;
const HIDDEN_DROPOUT: f64 = 0.5;
const CONV_DROPOUT: f64 = 0.5;
const LWTA_BLOCK: usize = 2;
const NUM_CLASSES: usize = 10;

/// The six model variants, in table row order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "EWC")]
    Ewc,
    #[serde(rename = "fc")]
    Fc,
    #[serde(rename = "D-fc")]
    DFc,
    #[serde(rename = "conv")]
    Conv,
    #[serde(rename = "D-conv")]
    DConv,
    #[serde(rename = "LWTA")]
    Lwta,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 6] = [Self::Ewc, Self::Fc, Self::DFc, Self::Conv, Self::DConv, Self::Lwta];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ewc => "EWC",
            Self::Fc => "fc",
            Self::DFc => "D-fc",
            Self::Conv => "conv",
            Self::DConv => "D-conv",
            Self::Lwta => "LWTA",
        }
    }

    /// Conv families have a fixed topology; only learning rates vary.
    pub fn is_conv(self) -> bool {
        matches!(self, Self::Conv | Self::DConv)
    }

    pub fn uses_ewc(self) -> bool {
        self == Self::Ewc
    }

    /// Layer list for this family. `input_shape` is `[h, w]`; conv families
    /// need both sides divisible by 4.
    pub fn network_spec(self, topology: Topology, input_shape: &[usize]) -> Result<NetworkSpec, ProtocolError> {
        let input_len: usize = input_shape.iter().product();
        let layers = match (self, topology) {
            (Self::Conv | Self::DConv, Topology::Fixed) => conv_layers(self == Self::DConv, input_shape)?,
            (Self::Conv | Self::DConv, t) => {
                return Err(ProtocolError::Config(format!("{self} has a fixed topology, got {t}")));
            }
            (_, Topology::Fixed) => {
                return Err(ProtocolError::Config(format!("{self} needs a layer count and size")));
            }
            (_, Topology::Dense { layers, size }) => {
                if layers == 0 || size == 0 {
                    return Err(ProtocolError::Config("layer count and size must be positive".into()));
                }
                self.dense_layers(input_len, layers, size)
            }
        };
        Ok(NetworkSpec::new(input_shape.to_vec(), layers))
    }

    fn dense_layers(self, input_len: usize, hidden: usize, size: usize) -> Vec<LayerSpec> {
        let dropout = matches!(self, Self::DFc | Self::Ewc);
        let mut layers = Vec::new();
        if dropout {
            layers.push(LayerSpec::Dropout { rate: INPUT_DROPOUT });
        }
        let mut width = input_len;
        for _ in 0..hidden {
            layers.push(LayerSpec::FullyConnected { in_dim: width, out_dim: size });
            if dropout {
                layers.push(LayerSpec::Dropout { rate: HIDDEN_DROPOUT });
            }
            layers.push(if self == Self::Lwta {
                LayerSpec::Lwta { block_size: LWTA_BLOCK }
            } else {
                LayerSpec::Relu
            });
            width = size;
        }
        layers.push(LayerSpec::FullyConnected { in_dim: width, out_dim: NUM_CLASSES });
        layers.push(LayerSpec::SoftmaxReadout { num_classes: NUM_CLASSES });
        layers
    }
}

/// In-(D)-C1-MP-(D)-ReLU-C2-MP-(D)-ReLU-FC-SM with 5×5 same-padded
/// convolutions; the dropout variant uses one rate for input and hidden layers.
fn conv_layers(dropout: bool, input_shape: &[usize]) -> Result<Vec<LayerSpec>, ProtocolError> {
    let [h, w] = *input_shape else {
        return Err(ProtocolError::Config(format!("conv models expect [h, w] inputs, got {input_shape:?}")));
    };
    if h % 4 != 0 || w % 4 != 0 {
        return Err(ProtocolError::Config(format!("conv models need sides divisible by 4, got {h}×{w}")));
    }
    let mut layers = Vec::new();
    if dropout {
        layers.push(LayerSpec::Dropout { rate: CONV_DROPOUT });
    }
    for filters in [32, 64] {
        layers.push(LayerSpec::Conv { num_filters: filters, kernel_size: 5, stride: 1, padding: 2 });
        layers.push(LayerSpec::MaxPool { window: 2 });
        if dropout {
            layers.push(LayerSpec::Dropout { rate: CONV_DROPOUT });
        }
        layers.push(LayerSpec::Relu);
    }
    layers.push(LayerSpec::FullyConnected { in_dim: 64 * (h / 4) * (w / 4), out_dim: NUM_CLASSES });
    layers.push(LayerSpec::SoftmaxReadout { num_classes: NUM_CLASSES });
    Ok(layers)
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelFamily {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .or(match s.to_ascii_lowercase().as_str() {
                "dfc" | "d_fc" => Some(Self::DFc),
                "dconv" | "d_conv" => Some(Self::DConv),
                "d-ewc" => Some(Self::Ewc),
                "lwta-fc" => Some(Self::Lwta),
                _ => None,
            })
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|m| m.name()).collect();
                ProtocolError::Config(format!("unknown model {s:?}; valid models: {}", valid.join(", ")))
            })
    }
}

/// Hidden-layer shape of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Dense { layers: usize, size: usize },
    /// The conv families' built-in topology.
    Fixed,
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Dense { layers, size } => write!(f, "L={layers} S={size}"),
            Self::Fixed => f.write_str("fixed"),
        }
    }
}

/// Everything that determines initial training on D1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase1Params {
    pub topology: Topology,
    pub lr_d1: f64,
}

/// One full parameter vector: initial training plus retraining rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub topology: Topology,
    pub lr_d1: f64,
    pub lr_d2: f64,
}

impl HyperParams {
    pub fn phase1(&self) -> Phase1Params {
        Phase1Params { topology: self.topology, lr_d1: self.lr_d1 }
    }
}

/// Hyperparameter grid, split into the D1 part and the retraining rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub phase1: Vec<Phase1Params>,
    pub retrain_rates: Vec<f64>,
}

pub const DEFAULT_LAYERS: [usize; 2] = [2, 3];
pub const DEFAULT_SIZES: [usize; 3] = [200, 400, 800];
pub const DEFAULT_LR_D1: [f64; 2] = [0.01, 0.001];
pub const DEFAULT_LR_D2: [f64; 3] = [0.001, 0.0001, 0.00001];

impl Grid {
    /// Cartesian grid in the order layers, sizes, ε_D1. Conv families ignore
    /// `layers` and `sizes`.
    pub fn new(
        family: ModelFamily,
        layers: &[usize],
        sizes: &[usize],
        lr_d1: &[f64],
        lr_d2: &[f64],
    ) -> Result<Self, ProtocolError> {
        let topologies: Vec<Topology> = if family.is_conv() {
            vec![Topology::Fixed]
        } else {
            layers
                .iter()
                .flat_map(|&l| sizes.iter().map(move |&s| Topology::Dense { layers: l, size: s }))
                .collect()
        };
        let phase1: Vec<Phase1Params> = topologies
            .iter()
            .flat_map(|&topology| lr_d1.iter().map(move |&lr_d1| Phase1Params { topology, lr_d1 }))
            .collect();
        let grid = Self { phase1, retrain_rates: lr_d2.to_vec() };
        grid.validate()?;
        Ok(grid)
    }

    /// The full grid: 12 × 3 for the dense families, 2 × 3 for conv.
    pub fn full(family: ModelFamily) -> Self {
        Self::new(family, &DEFAULT_LAYERS, &DEFAULT_SIZES, &DEFAULT_LR_D1, &DEFAULT_LR_D2).expect("default grid is valid")
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.phase1.is_empty() || self.retrain_rates.is_empty() {
            return Err(ProtocolError::Config("hyperparameter grid is empty".into()));
        }
        let rates = self.phase1.iter().map(|p| p.lr_d1).chain(self.retrain_rates.iter().copied());
        for r in rates {
            if !(r > 0.0 && r.is_finite()) {
                return Err(ProtocolError::Config(format!("learning rate must be positive, got {r}")));
            }
        }
        Ok(())
    }

    /// Every (phase-1, ε_D2) combination, phase-1 major.
    pub fn points(&self) -> Vec<HyperParams> {
        self.phase1
            .iter()
            .flat_map(|p| {
                self.retrain_rates.iter().map(move |&lr_d2| HyperParams {
                    topology: p.topology,
                    lr_d1: p.lr_d1,
                    lr_d2,
                })
            })
            .collect()
    }
}

/// Run-length and optimizer constants shared by every run of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    pub t_max: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub momentum: f64,
    pub fisher_samples: usize,
    /// DP10-10 only: give D1 its own random permutation as well.
    pub permute_d1: bool,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            t_max: 2500,
            batch_size: 100,
            eval_every: 100,
            momentum: 0.99,
            fisher_samples: 1000,
            permute_d1: false,
        }
    }
}

impl ExperimentSettings {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.t_max == 0 || self.batch_size == 0 || self.eval_every == 0 || self.fisher_samples == 0 {
            return Err(ProtocolError::Config(
                "t_max, batch size, eval interval and Fisher sample count must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ProtocolError::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    /// Evaluation iterations within one phase: 0, E, 2E, … and `t_max`.
    pub fn eval_points(&self) -> Vec<usize> {
        let mut pts: Vec<usize> = (0..self.t_max).step_by(self.eval_every).collect();
        pts.push(self.t_max);
        pts
    }
}
