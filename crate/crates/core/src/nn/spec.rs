use serde::{Deserialize, Serialize};

use super::NnError;

/// One stage of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    FullyConnected {
        in_dim: usize,
        out_dim: usize,
    },
    Conv {
        num_filters: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    /// Non-overlapping `window × window` max-pooling.
    MaxPool {
        window: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    /// Local winner-take-all over consecutive blocks of `block_size` units.
    Lwta {
        block_size: usize,
    },
    /// Terminal marker: the incoming activations are the class logits.
    SoftmaxReadout {
        num_classes: usize,
    },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, Self::FullyConnected { .. } | Self::Conv { .. })
    }
}

/// Per-sample input shape plus the ordered layer list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Resolved geometry of one layer.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerPlan {
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// Index of this layer's first parameter tensor (weights, then bias).
    pub param_offset: Option<usize>,
}

/// Interprets a per-sample shape as `[channels, height, width]`.
pub(crate) fn as_chw(shape: &[usize]) -> Option<(usize, usize, usize)> {
    match *shape {
        [h, w] => Some((1, h, w)),
        [c, h, w] => Some((c, h, w)),
        _ => None,
    }
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self {
            input_shape,
            layers,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxReadout { num_classes }) => *num_classes,
            _ => 0,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Validates the topology and resolves every layer's shapes.
    pub(crate) fn plan(&self) -> Result<(Vec<LayerPlan>, Vec<Vec<usize>>), NnError> {
        let bad = |i: usize, msg: String| NnError::InvalidSpec(format!("layer {i}: {msg}"));
        if self.layers.is_empty() {
            return Err(NnError::InvalidSpec("network has no layers".into()));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(NnError::InvalidSpec(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let last = self.layers.len() - 1;
        let mut shape = self.input_shape.clone();
        let mut plans = Vec::with_capacity(self.layers.len());
        let mut param_shapes = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let flat: usize = shape.iter().product();
            let mut offset = None;
            let out = match *layer {
                LayerSpec::FullyConnected { in_dim, out_dim } => {
                    if in_dim != flat {
                        return Err(bad(
                            i,
                            format!("fully connected expects {in_dim} inputs, receives {flat}"),
                        ));
                    }
                    if out_dim == 0 {
                        return Err(bad(i, "zero output width".into()));
                    }
                    offset = Some(param_shapes.len());
                    param_shapes.push(vec![in_dim, out_dim]);
                    param_shapes.push(vec![out_dim]);
                    vec![out_dim]
                }
                LayerSpec::Conv {
                    num_filters,
                    kernel_size,
                    stride,
                    padding,
                } => {
                    let (c, h, w) = as_chw(&shape)
                        .ok_or_else(|| bad(i, format!("conv needs an image input, got {shape:?}")))?;
                    if num_filters == 0 || kernel_size == 0 || stride == 0 {
                        return Err(bad(i, "conv extents must be positive".into()));
                    }
                    if h + 2 * padding < kernel_size || w + 2 * padding < kernel_size {
                        return Err(bad(i, "kernel larger than padded input".into()));
                    }
                    let oh = (h + 2 * padding - kernel_size) / stride + 1;
                    let ow = (w + 2 * padding - kernel_size) / stride + 1;
                    offset = Some(param_shapes.len());
                    param_shapes.push(vec![num_filters, c, kernel_size, kernel_size]);
                    param_shapes.push(vec![num_filters]);
                    vec![num_filters, oh, ow]
                }
                LayerSpec::MaxPool { window } => {
                    let (c, h, w) = as_chw(&shape).ok_or_else(|| {
                        bad(i, format!("max-pool needs an image input, got {shape:?}"))
                    })?;
                    if window == 0 || h < window || w < window {
                        return Err(bad(i, format!("pool window {window} does not fit {h}x{w}")));
                    }
                    vec![c, h / window, w / window]
                }
                LayerSpec::Relu => shape.clone(),
                LayerSpec::Dropout { rate } => {
                    if !(rate > 0.0 && rate < 1.0) {
                        return Err(bad(i, format!("dropout rate {rate} outside (0,1)")));
                    }
                    shape.clone()
                }
                LayerSpec::Lwta { block_size } => {
                    if block_size < 2 {
                        return Err(bad(i, "LWTA block size must be at least 2".into()));
                    }
                    if !flat.is_multiple_of(block_size) {
                        return Err(bad(
                            i,
                            format!("{flat} units not divisible into LWTA blocks of {block_size}"),
                        ));
                    }
                    shape.clone()
                }
                LayerSpec::SoftmaxReadout { num_classes } => {
                    if i != last {
                        return Err(bad(i, "softmax readout must be the final layer".into()));
                    }
                    if num_classes != flat {
                        return Err(bad(
                            i,
                            format!("readout over {num_classes} classes receives {flat} logits"),
                        ));
                    }
                    vec![num_classes]
                }
            };
            plans.push(LayerPlan {
                in_shape: shape.clone(),
                out_shape: out.clone(),
                param_offset: offset,
            });
            shape = out;
        }
        if !matches!(self.layers[last], LayerSpec::SoftmaxReadout { .. }) {
            return Err(NnError::InvalidSpec(
                "network must end in a softmax readout".into(),
            ));
        }
        Ok((plans, param_shapes))
    }
}
