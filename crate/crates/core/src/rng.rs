//! Seeded random streams.
//!
//! Every run uses PCG-64 (`Lcg128Xsl64`, O'Neill 2014) seeded through
//! `SeedableRng::seed_from_u64`. Independent sub-streams are derived from a
//! base seed and a stream index with one SplitMix64 finalizer round, so the
//! same `(seed, stream)` pair yields the same sequence on every platform.

use rand::{RngExt, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

use crate::linalg::Matrix;

pub type Rng = Pcg64;

/// Well-known stream indices so different stages never share draws.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const DIFFUSION_INIT: u64 = 2;
    pub const DIFFUSION_TRAIN: u64 = 3;
    pub const MANIFOLD_INIT: u64 = 4;
    pub const MANIFOLD_TRAIN: u64 = 5;
    pub const TARGET: u64 = 6;
    pub const SAMPLE: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const REFERENCE: u64 = 9;
}

pub fn seeded(seed: u64) -> Rng {
    Pcg64::seed_from_u64(seed)
}

pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    seeded(mix(seed, stream))
}

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| normal(rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape is consistent by construction")
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn index(rng: &mut Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Draws `k` distinct indices from `0..n` (partial Fisher-Yates).
pub fn choose_distinct(rng: &mut Rng, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = i + rng.random_range(0..n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Draws an index with probability proportional to `weights`.
pub fn categorical(rng: &mut Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}
