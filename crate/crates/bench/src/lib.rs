//! Seeded inputs shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn uniform_series(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random::<f64>()).collect()
}

/// Skin-conductance-like trace: slow drift plus sharp responses and noise.
pub fn eda_like(len: usize, sample_rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|i| {
            let t = i as f64 / sample_rate;
            2.0 + 0.3 * (t / 60.0).sin() + 0.1 * ((t * 0.7).sin()).max(0.0).powi(8) + 0.01 * rng.random::<f64>()
        })
        .collect()
}
