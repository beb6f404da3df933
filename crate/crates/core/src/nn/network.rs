use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::kernels::{self, ConvGeom};
use super::spec::{as_chw, LayerPlan, LayerSpec, NetworkSpec};
use super::NnError;
use crate::tensor::Tensor;

/// Whether stochastic layers sample (train) or act as the identity (eval).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Trainable parameters and their momentum buffers.
///
/// Each fully-connected or conv layer owns two consecutive parameter tensors:
/// weights, then bias. FC weights are `[in, out]`; conv weights are
/// `[filters, channels, k, k]`.
#[derive(Debug)]
pub struct NetworkState {
    spec: NetworkSpec,
    plans: Vec<LayerPlan>,
    params: Vec<Tensor>,
    velocity: Vec<Tensor>,
    // Identity of the current parameter values; traces from any other
    // value are rejected by `backward`.
    stamp: u64,
}

impl Clone for NetworkState {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            plans: self.plans.clone(),
            params: self.params.clone(),
            velocity: self.velocity.clone(),
            stamp: fresh_stamp(),
        }
    }
}

impl PartialEq for NetworkState {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params && self.velocity == other.velocity
    }
}

/// One gradient tensor per parameter tensor, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(state: &NetworkState) -> Self {
        Self(state.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
    }

    pub fn add_scaled(&mut self, other: &Gradients, alpha: f64) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_scaled(b, alpha);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(Tensor::all_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().map(Tensor::max_abs).fold(0.0, f64::max)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.0.iter()
    }
}

#[derive(Debug, Clone)]
enum LayerCache {
    Input(Vec<f64>),
    Pool(Vec<usize>),
    Relu(Vec<bool>),
    Dropout(Option<Vec<f64>>),
    Lwta(Vec<usize>),
    Readout,
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    stamp: u64,
    batch: usize,
    caches: Vec<LayerCache>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Dropout masks in layer order (`None` for eval-mode passes).
    pub fn dropout_masks(&self) -> Vec<Option<&[f64]>> {
        self.caches
            .iter()
            .filter_map(|c| match c {
                LayerCache::Dropout(m) => Some(m.as_deref()),
                _ => None,
            })
            .collect()
    }

    /// Winner indices of each LWTA layer, flat over `[batch, units]`.
    pub fn lwta_winners(&self) -> Vec<&[usize]> {
        self.caches
            .iter()
            .filter_map(|c| match c {
                LayerCache::Lwta(w) => Some(w.as_slice()),
                _ => None,
            })
            .collect()
    }
}

impl NetworkState {
    /// Draws weights from `N(0, 2/fan_in)` and zeroes biases and momentum.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self, NnError> {
        let (plans, shapes) = spec.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(shapes.len());
        for (layer, plan) in spec.layers.iter().zip(&plans) {
            if let Some(off) = plan.param_offset {
                let wshape = &shapes[off];
                let fan_in: usize = match layer {
                    LayerSpec::FullyConnected { in_dim, .. } => *in_dim,
                    _ => wshape[1..].iter().product(),
                };
                let std = (2.0 / fan_in as f64).sqrt();
                let n: usize = wshape.iter().product();
                let data = (0..n)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                params.push(Tensor::new(wshape.clone(), data)?);
                params.push(Tensor::zeros(&shapes[off + 1]));
            }
        }
        let velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            spec: spec.clone(),
            plans,
            params,
            velocity,
            stamp: fresh_stamp(),
        })
    }

    /// Rebuilds a state from stored parameters; momentum starts at zero.
    pub fn from_params(spec: &NetworkSpec, params: Vec<Tensor>) -> Result<Self, NnError> {
        let (plans, shapes) = spec.plan()?;
        if params.len() != shapes.len() {
            return Err(NnError::InvalidSpec(format!(
                "{} parameter tensors supplied, topology needs {}",
                params.len(),
                shapes.len()
            )));
        }
        for (p, s) in params.iter().zip(&shapes) {
            if p.shape() != s.as_slice() {
                return Err(NnError::ShapeMismatch {
                    expected: s.clone(),
                    actual: p.shape().to_vec(),
                });
            }
        }
        let velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            spec: spec.clone(),
            plans,
            params,
            velocity,
            stamp: fresh_stamp(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding traces.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.stamp = fresh_stamp();
        &mut self.params
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn reset_momentum(&mut self) {
        self.velocity.iter_mut().for_each(|v| v.fill(0.0));
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize, NnError> {
        let shape = batch.shape();
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.spec.input_shape);
            return Err(NnError::ShapeMismatch {
                expected,
                actual: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    /// Runs the network on `batch` (`[n, ...input_shape]`), returning logits
    /// `[n, classes]` and the cache for `backward`.
    ///
    /// Dropout masks are drawn from a generator seeded by `rng_seed`; in eval
    /// mode the seed is unused.
    pub fn forward(&self, batch: &Tensor, mode: Mode, rng_seed: u64) -> Result<(Tensor, ForwardTrace), NnError> {
        let (logits, caches) = self.run(batch, mode, rng_seed, true, None)?;
        let n = logits.rows();
        Ok((
            logits,
            ForwardTrace {
                stamp: self.stamp,
                batch: n,
                caches,
            },
        ))
    }

    /// Eval-mode logits without keeping a trace.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor, NnError> {
        Ok(self.run(batch, Mode::Eval, 0, false, None)?.0)
    }

    /// Output of every layer, in order, for the given pass.
    pub fn activations(&self, batch: &Tensor, mode: Mode, rng_seed: u64) -> Result<Vec<Tensor>, NnError> {
        let mut outs = Vec::with_capacity(self.plans.len());
        self.run(batch, mode, rng_seed, false, Some(&mut outs))?;
        Ok(outs)
    }

    fn run(
        &self,
        batch: &Tensor,
        mode: Mode,
        rng_seed: u64,
        keep: bool,
        mut sink: Option<&mut Vec<Tensor>>,
    ) -> Result<(Tensor, Vec<LayerCache>), NnError> {
        let n = self.check_batch(batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut x: Vec<f64> = batch.data().to_vec();
        let mut caches = Vec::with_capacity(if keep { self.plans.len() } else { 0 });
        for (layer, plan) in self.spec.layers.iter().zip(&self.plans) {
            let (y, cache) = match *layer {
                LayerSpec::FullyConnected { in_dim, out_dim } => {
                    let off = plan.param_offset.expect("fc has params");
                    let y = kernels::fc_forward(
                        &x,
                        self.params[off].data(),
                        self.params[off + 1].data(),
                        n,
                        in_dim,
                        out_dim,
                    );
                    (y, keep.then(|| LayerCache::Input(std::mem::take(&mut x))))
                }
                LayerSpec::Conv { .. } => {
                    let off = plan.param_offset.expect("conv has params");
                    let g = conv_geom(layer, plan);
                    let y = kernels::conv_forward(&x, self.params[off].data(), self.params[off + 1].data(), n, &g);
                    (y, keep.then(|| LayerCache::Input(std::mem::take(&mut x))))
                }
                LayerSpec::MaxPool { window } => {
                    let chw = as_chw(&plan.in_shape).expect("validated image shape");
                    let (y, arg) = kernels::maxpool_forward(&x, n, chw, window);
                    (y, keep.then_some(LayerCache::Pool(arg)))
                }
                LayerSpec::Relu => {
                    let mask: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
                    let y = x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                    (y, keep.then_some(LayerCache::Relu(mask)))
                }
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Eval => (std::mem::take(&mut x), keep.then_some(LayerCache::Dropout(None))),
                    Mode::Train => {
                        let scale = 1.0 / (1.0 - rate);
                        let mask: Vec<f64> = (0..x.len())
                            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale })
                            .collect();
                        let y = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
                        (y, keep.then_some(LayerCache::Dropout(Some(mask))))
                    }
                },
                LayerSpec::Lwta { block_size } => {
                    let (y, winners) = kernels::lwta_forward(&x, block_size);
                    (y, keep.then_some(LayerCache::Lwta(winners)))
                }
                LayerSpec::SoftmaxReadout { .. } => (std::mem::take(&mut x), keep.then_some(LayerCache::Readout)),
            };
            if let Some(c) = cache {
                caches.push(c);
            }
            if let Some(outs) = sink.as_deref_mut() {
                let mut shape = vec![n];
                shape.extend_from_slice(&plan.out_shape);
                outs.push(Tensor::new(shape, y.clone())?);
            }
            x = y;
        }
        let classes = self.spec.num_classes();
        Ok((Tensor::new(vec![n, classes], x)?, caches))
    }

    /// Backpropagates `d_logits` through the pass recorded in `trace`.
    pub fn backward(&self, trace: &ForwardTrace, d_logits: &Tensor) -> Result<Gradients, NnError> {
        Ok(self.backward_with_input(trace, d_logits)?.0)
    }

    /// Like [`backward`](Self::backward) but also returns the gradient with
    /// respect to the input batch.
    pub fn backward_with_input(&self, trace: &ForwardTrace, d_logits: &Tensor) -> Result<(Gradients, Tensor), NnError> {
        if trace.stamp != self.stamp || trace.caches.len() != self.plans.len() {
            return Err(NnError::StaleTrace);
        }
        let n = trace.batch;
        let expected = vec![n, self.spec.num_classes()];
        if d_logits.shape() != expected.as_slice() {
            return Err(NnError::ShapeMismatch {
                expected,
                actual: d_logits.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.params.len()];
        let mut dy: Vec<f64> = d_logits.data().to_vec();
        for ((layer, plan), cache) in self.spec.layers.iter().zip(&self.plans).zip(&trace.caches).rev() {
            dy = match (layer, cache) {
                (LayerSpec::FullyConnected { in_dim, out_dim }, LayerCache::Input(x)) => {
                    let off = plan.param_offset.expect("fc has params");
                    let (dx, dw, db) = kernels::fc_backward(x, self.params[off].data(), &dy, n, *in_dim, *out_dim);
                    grads[off] = Some(Tensor::new(self.params[off].shape().to_vec(), dw)?);
                    grads[off + 1] = Some(Tensor::new(vec![*out_dim], db)?);
                    dx
                }
                (LayerSpec::Conv { .. }, LayerCache::Input(x)) => {
                    let off = plan.param_offset.expect("conv has params");
                    let g = conv_geom(layer, plan);
                    let (dx, dw, db) = kernels::conv_backward(x, self.params[off].data(), &dy, n, &g);
                    grads[off] = Some(Tensor::new(self.params[off].shape().to_vec(), dw)?);
                    grads[off + 1] = Some(Tensor::new(vec![g.f], db)?);
                    dx
                }
                (LayerSpec::MaxPool { .. }, LayerCache::Pool(arg)) => {
                    let in_len = plan.in_shape.iter().product();
                    kernels::maxpool_backward(&dy, arg, n, in_len)
                }
                (LayerSpec::Relu, LayerCache::Relu(mask)) => {
                    dy.iter().zip(mask).map(|(g, &on)| if on { *g } else { 0.0 }).collect()
                }
                (LayerSpec::Dropout { .. }, LayerCache::Dropout(mask)) => match mask {
                    None => dy,
                    Some(m) => dy.iter().zip(m).map(|(g, s)| g * s).collect(),
                },
                (LayerSpec::Lwta { .. }, LayerCache::Lwta(winners)) => kernels::lwta_backward(&dy, winners),
                (LayerSpec::SoftmaxReadout { .. }, LayerCache::Readout) => dy,
                _ => return Err(NnError::StaleTrace),
            };
        }
        let grads = grads
            .into_iter()
            .map(|g| g.expect("every parameter receives a gradient"))
            .collect();
        let mut in_shape = vec![n];
        in_shape.extend_from_slice(&self.spec.input_shape);
        Ok((Gradients(grads), Tensor::new(in_shape, dy)?))
    }

    /// Classical momentum: `v ← μ·v + g`, `θ ← θ − lr·v`.
    ///
    /// Non-finite gradients are rejected before any parameter is touched.
    pub fn sgd_momentum_step(&mut self, grads: &Gradients, learning_rate: f64, momentum: f64) -> Result<(), NnError> {
        if grads.0.len() != self.params.len() {
            return Err(NnError::InvalidSpec(format!(
                "{} gradients for {} parameters",
                grads.0.len(),
                self.params.len()
            )));
        }
        for (i, (g, p)) in grads.0.iter().zip(&self.params).enumerate() {
            if g.shape() != p.shape() {
                return Err(NnError::ShapeMismatch {
                    expected: p.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(NnError::NonFiniteGradient { param: i });
            }
        }
        for ((p, v), g) in self.params.iter_mut().zip(&mut self.velocity).zip(&grads.0) {
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = momentum * *vv + gv;
                *pv -= learning_rate * *vv;
            }
        }
        self.stamp = fresh_stamp();
        Ok(())
    }
}

fn conv_geom(layer: &LayerSpec, plan: &LayerPlan) -> ConvGeom {
    let LayerSpec::Conv {
        num_filters,
        kernel_size,
        stride,
        padding,
    } = *layer
    else {
        unreachable!("conv_geom on non-conv layer")
    };
    let (c, h, w) = as_chw(&plan.in_shape).expect("validated image shape");
    ConvGeom {
        c,
        h,
        w,
        f: num_filters,
        k: kernel_size,
        stride,
        pad: padding,
        oh: plan.out_shape[1],
        ow: plan.out_shape[2],
    }
}
