//! Seeded inputs shared by the benchmarks.

use jointprune::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` values uniform in [-1, 1).
pub fn uniform(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Post-ReLU-like activations: about half exact zeros.
pub fn relu_like(n: usize, seed: u64) -> Vec<f32> {
    uniform(n, seed).into_iter().map(|v| v.max(0.0)).collect()
}

pub fn batch(shape: &[usize], seed: u64) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, uniform(n, seed)).expect("shape matches data")
}
