//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rac_core::fusion::Retrieved;

/// Random vectors in [-1, 1), row-major.
pub fn random_rows(rows: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// A retrieved set of `k` random keys and values.
pub fn random_neighbors(k: usize, d: usize, d_prime: usize, seed: u64) -> Retrieved<f32> {
    Retrieved::new(
        (0..k).collect(),
        d,
        d_prime,
        random_rows(k, d, seed),
        random_rows(k, d_prime, seed + 1),
    )
    .expect("consistent shapes")
}
