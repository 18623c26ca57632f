//! Monte Carlo plumbing shared by the estimators.
//!
//! Path `i` draws from a ChaCha8 generator seeded with the root seed and
//! switched to stream `i`, so paths are independent of scheduling and of
//! each other. Standard normals use the ziggurat sampler of `rand_distr`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

#[inline]
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Sample mean and 95% confidence half-width, accumulated in index order.
pub fn mean_ci(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Evaluate `f` on every path index in parallel; output is in path order.
pub fn par_paths<T: Send>(paths: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..paths).into_par_iter().map(f).collect()
}
