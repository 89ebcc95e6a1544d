//! Deterministic test-data synthesis for experiments and regression
//! baselines.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A seeded row-major Gaussian matrix. The same (rows, cols, seed, std)
/// always produces identical bits on every platform.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64, std: f32) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols)
        .map(|_| {
            let z: f32 = StandardNormal.sample(&mut rng);
            z * std
        })
        .collect()
}
