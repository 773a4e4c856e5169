//! Random pruning baselines.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::retained_count;

/// Random audio pruning: `round((1-rate)·n)` distinct indices sampled
/// uniformly without replacement.
pub fn rap_prune(n: usize, rate: f64, seed: u64) -> Vec<usize> {
    assert!((0.0..1.0).contains(&rate), "rate must lie in [0, 1)");
    let k = retained_count(n, rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = rand::seq::index::sample(&mut rng, n, k).into_vec();
    kept.sort_unstable();
    kept
}

/// Random audio cropping: one contiguous run of `round((1-rate)·n)` tokens
/// at a uniformly drawn start.
pub fn rac_crop(n: usize, rate: f64, seed: u64) -> Vec<usize> {
    assert!((0.0..1.0).contains(&rate), "rate must lie in [0, 1)");
    let k = retained_count(n, rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=n - k);
    (start..start + k).collect()
}
