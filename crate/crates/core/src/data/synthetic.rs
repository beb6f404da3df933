//! A toy image dataset for smoke tests and demos that must not depend on the
//! MNIST files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledSet;
use crate::tensor::Tensor;

/// `classes × per_class` images of `side × side` pixels. Each class has a
/// fixed random prototype (drawn from a generator seeded independently of
/// `seed`, so train and test sets built with different seeds share
/// prototypes); samples add uniform noise of amplitude `noise`, clipped to
/// `[0,1]`. Samples are interleaved by class.
pub fn prototype_digits(classes: usize, per_class: usize, side: usize, noise: f64, seed: u64) -> LabeledSet {
    let pixels = side * side;
    let mut proto_rng = ChaCha8Rng::seed_from_u64(0x5EED_CAFE);
    let protos: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..pixels).map(|_| if proto_rng.random::<f64>() < 0.3 { 0.9 } else { 0.1 }).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * pixels);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..per_class {
        for (c, proto) in protos.iter().enumerate() {
            data.extend(proto.iter().map(|p| (p + noise * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0)));
            labels.push(c);
        }
    }
    let images = Tensor::new(vec![n, side, side], data).expect("consistent shape");
    LabeledSet::new(images, labels).expect("values clipped to [0,1]")
}
