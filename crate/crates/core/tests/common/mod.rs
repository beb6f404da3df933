//! Test-only oracles, kept independent of the code paths they check.
#![allow(dead_code)]

use cfbench::data::LabeledSet;
use cfbench::nn::{cross_entropy_loss, LayerSpec, Mode, NetworkSpec, NetworkState};
use cfbench::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, floor)`. The floor keeps gradients that are
/// numerically zero from producing meaningless ratios.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Mean cross-entropy of a forward pass; the only thing the oracle calls.
pub fn loss_at(state: &NetworkState, x: &Tensor, labels: &[usize], mode: Mode, seed: u64) -> f64 {
    let (logits, _) = state.forward(x, mode, seed).unwrap();
    cross_entropy_loss(&logits, labels).unwrap().0
}

/// Central-difference derivative of the loss with respect to one parameter.
pub fn fd_param(state: &NetworkState, p: usize, i: usize, x: &Tensor, labels: &[usize], mode: Mode, seed: u64) -> f64 {
    let mut s = state.clone();
    let orig = s.params()[p].data()[i];
    s.params_mut()[p].data_mut()[i] = orig + FD_STEP;
    let up = loss_at(&s, x, labels, mode, seed);
    s.params_mut()[p].data_mut()[i] = orig - FD_STEP;
    let down = loss_at(&s, x, labels, mode, seed);
    (up - down) / (2.0 * FD_STEP)
}

pub fn fd_input(state: &NetworkState, i: usize, x: &Tensor, labels: &[usize], mode: Mode, seed: u64) -> f64 {
    let mut xp = x.clone();
    let orig = xp.data()[i];
    xp.data_mut()[i] = orig + FD_STEP;
    let up = loss_at(state, &xp, labels, mode, seed);
    xp.data_mut()[i] = orig - FD_STEP;
    let down = loss_at(state, &xp, labels, mode, seed);
    (up - down) / (2.0 * FD_STEP)
}

/// Smallest distance of any piecewise-linear unit from its kink for this
/// pass: |pre-activation| for ReLU, winner-vs-runner-up gap for LWTA blocks
/// and max-pool windows.
pub fn kink_margin(state: &NetworkState, x: &Tensor, mode: Mode, seed: u64) -> f64 {
    let acts = state.activations(x, mode, seed).unwrap();
    let mut margin = f64::INFINITY;
    for (li, layer) in state.spec().layers.iter().enumerate() {
        let input = if li == 0 { x } else { &acts[li - 1] };
        let vals = input.data();
        match *layer {
            LayerSpec::Relu => {
                // Exact zeros come from dropped units and stay zero under
                // parameter perturbation.
                for v in vals.iter().filter(|v| **v != 0.0) {
                    margin = margin.min(v.abs());
                }
            }
            LayerSpec::Lwta { block_size } => {
                for block in vals.chunks(block_size) {
                    margin = margin.min(top_two_gap(block.iter().copied()));
                }
            }
            LayerSpec::MaxPool { window } => {
                let shape = input.shape();
                let (c, h, w) = match shape.len() {
                    3 => (1, shape[1], shape[2]),
                    _ => (shape[1], shape[2], shape[3]),
                };
                for s in 0..shape[0] {
                    for ci in 0..c {
                        for oy in 0..h / window {
                            for ox in 0..w / window {
                                let it = (0..window * window).map(|k| {
                                    let (dy, dx) = (k / window, k % window);
                                    vals[((s * c + ci) * h + oy * window + dy) * w + ox * window + dx]
                                });
                                margin = margin.min(top_two_gap(it));
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    margin
}

fn top_two_gap(it: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = it.collect();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if v.len() < 2 {
        f64::INFINITY
    } else {
        v[0] - v[1]
    }
}

/// Compares every parameter gradient and every input gradient with central
/// differences. Returns the worst relative error.
pub fn worst_gradient_error(state: &NetworkState, x: &Tensor, labels: &[usize], mode: Mode, seed: u64) -> f64 {
    let (logits, trace) = state.forward(x, mode, seed).unwrap();
    let (_, d) = cross_entropy_loss(&logits, labels).unwrap();
    let (grads, dx) = state.backward_with_input(&trace, &d).unwrap();
    let mut worst: f64 = 0.0;
    for (p, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let num = fd_param(state, p, i, x, labels, mode, seed);
            worst = worst.max(rel_err(g.data()[i], num));
        }
    }
    for i in 0..x.len() {
        let num = fd_input(state, i, x, labels, mode, seed);
        worst = worst.max(rel_err(dx.data()[i], num));
    }
    worst
}

fn fc(i: usize, o: usize) -> LayerSpec {
    LayerSpec::FullyConnected { in_dim: i, out_dim: o }
}

/// A small network exercising some layer kinds, with the mode and first
/// seed to probe it at.
pub struct GradientCase {
    pub name: &'static str,
    pub spec: NetworkSpec,
    pub mode: Mode,
    pub seed: u64,
}

/// Together the cases cover every layer kind in both modes.
pub fn gradient_cases() -> Vec<GradientCase> {
    let case = |name, input: Vec<usize>, layers, mode, seed| GradientCase { name, spec: NetworkSpec::new(input, layers), mode, seed };
    let dropout = vec![
        LayerSpec::Dropout { rate: 0.2 },
        fc(6, 8),
        LayerSpec::Dropout { rate: 0.5 },
        LayerSpec::Relu,
        fc(8, 3),
        LayerSpec::SoftmaxReadout { num_classes: 3 },
    ];
    vec![
        case("fc+relu", vec![5], vec![fc(5, 6), LayerSpec::Relu, fc(6, 4), LayerSpec::SoftmaxReadout { num_classes: 4 }], Mode::Train, 1),
        case(
            "lwta",
            vec![4],
            vec![fc(4, 6), LayerSpec::Lwta { block_size: 2 }, fc(6, 6), LayerSpec::Lwta { block_size: 3 }, fc(6, 3), LayerSpec::SoftmaxReadout { num_classes: 3 }],
            Mode::Train,
            10,
        ),
        case("dropout (train)", vec![2, 3], dropout.clone(), Mode::Train, 20),
        case("dropout (eval)", vec![2, 3], dropout, Mode::Eval, 20),
        case(
            "conv+maxpool",
            vec![6, 6],
            vec![
                LayerSpec::Conv { num_filters: 2, kernel_size: 3, stride: 1, padding: 1 },
                LayerSpec::MaxPool { window: 2 },
                LayerSpec::Relu,
                LayerSpec::Conv { num_filters: 3, kernel_size: 2, stride: 1, padding: 0 },
                LayerSpec::Relu,
                fc(3 * 2 * 2, 4),
                LayerSpec::SoftmaxReadout { num_classes: 4 },
            ],
            Mode::Train,
            30,
        ),
        case(
            "strided conv",
            vec![2, 5, 5],
            vec![
                LayerSpec::Conv { num_filters: 2, kernel_size: 3, stride: 2, padding: 1 },
                LayerSpec::Relu,
                fc(2 * 3 * 3, 3),
                LayerSpec::SoftmaxReadout { num_classes: 3 },
            ],
            Mode::Train,
            40,
        ),
    ]
}

/// Worst relative gradient error of `case` at its first kink-free random
/// probe point, with the seed used.
pub fn probe(case: &GradientCase) -> (f64, u64) {
    let spec = &case.spec;
    for seed in case.seed..case.seed + 50 {
        let state = NetworkState::init(spec, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let mut shape = vec![3];
        shape.extend_from_slice(&spec.input_shape);
        let n: usize = shape.iter().product();
        let x = Tensor::new(shape, (0..n).map(|_| rng.random::<f64>()).collect()).unwrap();
        let classes = spec.num_classes();
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..classes)).collect();
        if kink_margin(&state, &x, case.mode, seed) <= 1e-3 {
            continue;
        }
        return (worst_gradient_error(&state, &x, &labels, case.mode, seed), seed);
    }
    panic!("{}: no kink-free probe point found", case.name);
}

/// Two inputs, two classes, a single affine layer: six parameters.
pub fn mini_spec() -> NetworkSpec {
    NetworkSpec::new(
        vec![2],
        vec![LayerSpec::FullyConnected { in_dim: 2, out_dim: 2 }, LayerSpec::SoftmaxReadout { num_classes: 2 }],
    )
}

pub fn mini_state() -> NetworkState {
    let w = Tensor::new(vec![2, 2], vec![0.7, -0.4, 0.2, 0.9]).unwrap();
    let b = Tensor::new(vec![2], vec![0.1, -0.3]).unwrap();
    NetworkState::from_params(&mini_spec(), vec![w, b]).unwrap()
}

pub fn mini_d1() -> LabeledSet {
    let x = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.5, 0.9, 0.05, 0.25]).unwrap();
    LabeledSet::new(x, vec![0, 1, 1]).unwrap()
}

/// Hand-derived gradients of `−log p_y` for `z = x·W + b`:
/// `∂/∂W_ik = x_i·(p_k − [k=y])`, `∂/∂b_k = p_k − [k=y]`.
pub fn hand_grads(w: &[f64], b: &[f64], x: &[f64], y: usize) -> ([f64; 4], [f64; 2]) {
    let z = [x[0] * w[0] + x[1] * w[2] + b[0], x[0] * w[1] + x[1] * w[3] + b[1]];
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let p = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];
    let d = [p[0] - (y == 0) as u8 as f64, p[1] - (y == 1) as u8 as f64];
    ([x[0] * d[0], x[0] * d[1], x[1] * d[0], x[1] * d[1]], d)
}

pub fn hand_probs(w: &[f64], b: &[f64], x: &[f64]) -> [f64; 2] {
    let z = [x[0] * w[0] + x[1] * w[2] + b[0], x[0] * w[1] + x[1] * w[3] + b[1]];
    let p1 = 1.0 / (1.0 + (z[0] - z[1]).exp());
    [1.0 - p1, p1]
}
