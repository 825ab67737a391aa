//! Uniformity and bias metrics: ε-ball neighbour counts, mode proportions,
//! and sample-set distances.

use log::warn;
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::linalg::{dot, sq_dist, Matrix};
use crate::rng::{self};

/// Radius multipliers applied to the average nearest-neighbour distance.
pub const RADIUS_MULTIPLIERS: [f64; 3] = [0.8, 1.0, 1.2];

/// Mean distance from each real sample to its nearest other real sample.
pub fn avg_nn_distance(real: &Matrix) -> Result<f64> {
    let n = real.rows();
    ensure!(n >= 2, Contract, "nearest-neighbour distance needs at least 2 samples, got {}", n);
    let mut total = 0.0;
    for i in 0..n {
        let mut best = f64::INFINITY;
        for j in 0..n {
            if i != j {
                best = best.min(sq_dist(real.row(i), real.row(j)));
            }
        }
        total += best.sqrt();
    }
    let eps = total / n as f64;
    if eps == 0.0 {
        warn!("every real sample has a duplicate; nearest-neighbour distance is 0");
    }
    Ok(eps)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeighborHistogram {
    pub multiplier: f64,
    pub base_radius: f64,
    /// `counts[i]`: generated samples within the radius of real sample `i`.
    pub counts: Vec<usize>,
    /// `histogram[k]`: real samples with exactly `k` generated neighbours.
    pub histogram: Vec<usize>,
}

impl NeighborHistogram {
    pub fn radius(&self) -> f64 {
        self.multiplier * self.base_radius
    }
}

/// Counts generated samples in the closed ball of `radius` around each real sample.
pub fn neighbor_counts(real: &Matrix, generated: &Matrix, radius: f64) -> Result<Vec<usize>> {
    ensure!(radius > 0.0, Contract, "radius must be positive, got {}", radius);
    if generated.rows() > 0 {
        ensure!(real.cols() == generated.cols(), Contract, "real and generated dimensions differ");
    }
    let r2 = radius * radius;
    Ok((0..real.rows())
        .map(|i| (0..generated.rows()).filter(|&g| sq_dist(real.row(i), generated.row(g)) <= r2).count())
        .collect())
}

pub fn neighbor_histogram(real: &Matrix, generated: &Matrix, base_radius: f64, multiplier: f64) -> Result<NeighborHistogram> {
    let counts = neighbor_counts(real, generated, base_radius * multiplier)?;
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut histogram = vec![0; if counts.is_empty() { 0 } else { max + 1 }];
    for &k in &counts {
        histogram[k] += 1;
    }
    Ok(NeighborHistogram { multiplier, base_radius, counts, histogram })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UniformityStats {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    /// `sqrt(variance) / mean`; 0 when every count is 0.
    pub cv: f64,
}

pub fn uniformity_stats(counts: &[usize]) -> Result<UniformityStats> {
    ensure!(!counts.is_empty(), Contract, "uniformity statistics need at least one count");
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&k| k as f64).sum::<f64>() / n;
    let variance = counts.iter().map(|&k| (k as f64 - mean).powi(2)).sum::<f64>() / n;
    let cv = if mean > 0.0 { variance.sqrt() / mean } else { 0.0 };
    Ok(UniformityStats { mean, variance, cv })
}

/// `½ Σ |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    ensure!(p.len() == q.len(), Contract, "distributions have {} and {} entries", p.len(), q.len());
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Index of the nearest centre for every row (ties go to the lower index).
pub fn assign_modes(samples: &Matrix, centers: &Matrix) -> Result<Vec<usize>> {
    ensure!(centers.rows() >= 1, Contract, "need at least one mode centre");
    ensure!(samples.rows() == 0 || samples.cols() == centers.cols(), Contract, "sample and centre dimensions differ");
    Ok((0..samples.rows())
        .map(|r| {
            let mut best = (0, f64::INFINITY);
            for c in 0..centers.rows() {
                let d = sq_dist(samples.row(r), centers.row(c));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect())
}

pub fn proportions(labels: &[usize], modes: usize) -> Vec<f64> {
    let mut p = vec![0.0; modes];
    for &l in labels {
        p[l] += 1.0;
    }
    let n = labels.len();
    if n > 0 {
        p.iter_mut().for_each(|v| *v /= n as f64);
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BiasReport {
    pub generated: Vec<f64>,
    pub training: Vec<f64>,
    pub uniform: Vec<f64>,
    pub tv_uniform: f64,
    pub tv_training: f64,
}

pub fn bias_report(generated: &[f64], training: &[f64]) -> Result<BiasReport> {
    let k = generated.len();
    ensure!(k >= 1, Contract, "bias report needs at least one mode");
    let uniform = vec![1.0 / k as f64; k];
    Ok(BiasReport {
        tv_uniform: tv_distance(generated, &uniform)?,
        tv_training: tv_distance(generated, training)?,
        generated: generated.to_vec(),
        training: training.to_vec(),
        uniform,
    })
}

/// Nearest-centre mode assignment followed by [`bias_report`].
pub fn mode_proportions(generated: &Matrix, centers: &Matrix, training: &[f64]) -> Result<BiasReport> {
    ensure!(training.len() == centers.rows(), Contract, "{} training proportions for {} centres", training.len(), centers.rows());
    let labels = assign_modes(generated, centers)?;
    bias_report(&proportions(&labels, centers.rows()), training)
}

/// Exact squared 2-Wasserstein distance between two 1-D empirical
/// distributions (uniform weights, possibly different sizes), by merging
/// the quantile breakpoints.
pub fn wasserstein2_sq_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    }
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        // next breakpoints at (i+1)/n and (j+1)/m, compared exactly via cross-multiplication
        let (ea, eb) = ((i + 1) * m, (j + 1) * n);
        let next = if ea <= eb { (i + 1) as f64 / n as f64 } else { (j + 1) as f64 / m as f64 };
        total += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if ea <= eb {
            i += 1;
        }
        if eb <= ea {
            j += 1;
        }
    }
    total
}

/// Unit directions drawn from `N(0, I)` and normalized.
pub fn random_directions(dim: usize, count: usize, seed: u64) -> Matrix {
    let mut rng = rng::seeded(seed);
    let mut dirs = Matrix::zeros(count, dim);
    for r in 0..count {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| rng::normal(&mut rng)).collect();
            let n = dot(&v, &v).sqrt();
            if n > 1e-12 {
                dirs.row_mut(r).iter_mut().zip(&v).for_each(|(d, x)| *d = x / n);
                break;
            }
        }
    }
    dirs
}

/// Mean over random projections of the 1-D 2-Wasserstein distance.
pub fn sliced_wasserstein(a: &Matrix, b: &Matrix, projections: usize, seed: u64) -> Result<f64> {
    ensure!(a.rows() > 0 && b.rows() > 0, Contract, "sliced Wasserstein needs non-empty sets");
    ensure!(a.cols() == b.cols(), Contract, "sets have dimensions {} and {}", a.cols(), b.cols());
    ensure!(projections > 0, Contract, "need at least one projection");
    let dirs = random_directions(a.cols(), projections, seed);
    let pa = a.matmul_nt(&dirs)?;
    let pb = b.matmul_nt(&dirs)?;
    let total: f64 = (0..projections).map(|k| wasserstein2_sq_1d(&pa.col(k), &pb.col(k)).sqrt()).sum();
    Ok(total / projections as f64)
}

fn mean_pair_distance(a: &Matrix, b: &Matrix) -> f64 {
    let mut s = 0.0;
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            s += sq_dist(a.row(i), b.row(j)).sqrt();
        }
    }
    s / (a.rows() * b.rows()) as f64
}

/// V-statistic `2 E‖a - b‖ - E‖a - a'‖ - E‖b - b'‖`, clamped at 0.
pub fn energy_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    ensure!(a.rows() > 0 && b.rows() > 0, Contract, "energy distance needs non-empty sets");
    ensure!(a.cols() == b.cols(), Contract, "sets have dimensions {} and {}", a.cols(), b.cols());
    let v = 2.0 * mean_pair_distance(a, b) - mean_pair_distance(a, a) - mean_pair_distance(b, b);
    Ok(v.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceReport {
    pub sliced_wasserstein: f64,
    pub energy: f64,
    pub projections: usize,
    pub seed: u64,
}

pub fn distance_report(a: &Matrix, b: &Matrix, projections: usize, seed: u64) -> Result<DistanceReport> {
    Ok(DistanceReport {
        sliced_wasserstein: sliced_wasserstein(a, b, projections, seed)?,
        energy: energy_distance(a, b)?,
        projections,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn brute_counts(real: &Matrix, gen: &Matrix, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        for i in 0..real.rows() {
            let mut k = 0;
            for g in 0..gen.rows() {
                let mut s = 0.0;
                for c in 0..real.cols() {
                    s += (real[(i, c)] - gen[(g, c)]).powi(2);
                }
                if s.sqrt() <= radius {
                    k += 1;
                }
            }
            out.push(k);
        }
        out
    }

    #[test]
    fn nn_distance_trivial_cases() {
        let two = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(avg_nn_distance(&two).unwrap(), 1.0);
        let grid = Matrix::from_rows(&[[0.0], [1.0], [2.0], [3.0], [4.0]]).unwrap();
        assert_eq!(avg_nn_distance(&grid).unwrap(), 1.0);
        assert!(avg_nn_distance(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn nn_distance_matches_brute_force() {
        let x = rng::normal_matrix(&mut seeded(1), 100, 3);
        let mut total = 0.0;
        for i in 0..100 {
            let mut best = f64::INFINITY;
            for j in 0..100 {
                if i != j {
                    let d = ((x[(i, 0)] - x[(j, 0)]).powi(2) + (x[(i, 1)] - x[(j, 1)]).powi(2) + (x[(i, 2)] - x[(j, 2)]).powi(2)).sqrt();
                    best = best.min(d);
                }
            }
            total += best;
        }
        assert!((avg_nn_distance(&x).unwrap() - total / 100.0).abs() < 1e-12);
    }

    #[test]
    fn neighbor_count_cases() {
        let real = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(neighbor_counts(&real, &real, 0.5).unwrap(), vec![1, 1, 1]);
        assert_eq!(neighbor_counts(&real, &Matrix::zeros(0, 2), 0.5).unwrap(), vec![0, 0, 0]);
        let mut rng = seeded(2);
        let a = rng::normal_matrix(&mut rng, 50, 2);
        let b = rng::normal_matrix(&mut rng, 50, 2);
        assert_eq!(neighbor_counts(&a, &b, 0.4).unwrap(), brute_counts(&a, &b, 0.4));
        let h = neighbor_histogram(&a, &b, 0.4, 1.0).unwrap();
        assert_eq!(h.histogram.iter().sum::<usize>(), 50);
    }

    #[test]
    fn uniformity_moments() {
        let s = uniformity_stats(&[3, 3, 3]).unwrap();
        assert_eq!((s.variance, s.cv), (0.0, 0.0));
        let s = uniformity_stats(&[0, 2]).unwrap();
        assert_eq!((s.mean, s.variance), (1.0, 1.0));
        // heavy tail: nine 1s and one 11 -> mean 2, variance (9*1 + 81)/10 = 9
        let mut k = vec![1; 9];
        k.push(11);
        let s = uniformity_stats(&k).unwrap();
        assert_eq!((s.mean, s.variance), (2.0, 9.0));
        assert!((s.cv - 1.5).abs() < 1e-15);
    }

    #[test]
    fn tv_formula_cases() {
        let mut all_one = vec![0.0; 8];
        all_one[0] = 1.0;
        let r = bias_report(&all_one, &[0.125; 8]).unwrap();
        assert!((r.tv_uniform - 0.875).abs() < 1e-15);
        assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let r = bias_report(&[0.71, 0.29], &[0.61, 0.39]).unwrap();
        assert!((r.tv_uniform - 0.21).abs() < 1e-12);
        assert!((r.tv_training - 0.10).abs() < 1e-12);
    }

    #[test]
    fn mode_assignment_uses_nearest_centre() {
        let centers = Matrix::from_rows(&[[-2.0, 0.0], [2.0, 0.0]]).unwrap();
        let g = Matrix::from_rows(&[[-1.9, 0.3], [0.1, 5.0], [-3.0, 0.0]]).unwrap();
        let r = mode_proportions(&g, &centers, &[0.5, 0.5]).unwrap();
        assert!((r.generated[0] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sliced_wasserstein_identities() {
        let a = rng::normal_matrix(&mut seeded(3), 200, 3);
        assert_eq!(sliced_wasserstein(&a, &a, 16, 1).unwrap(), 0.0);
        assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
        let line = rng::normal_matrix(&mut seeded(4), 300, 1);
        let shifted = line.map(|v| v + 0.7);
        let sw = sliced_wasserstein(&line, &shifted, 8, 2).unwrap();
        assert!((sw - 0.7).abs() < 0.007);
        assert!(sliced_wasserstein(&a, &line, 4, 0).is_err());
    }

    #[test]
    fn unequal_sizes_use_exact_quantiles() {
        // a = {0, 1}, b = {0, 0, 3}: quantile pieces [0,1/3):0-0, [1/3,1/2):0-0, [1/2,2/3):1-0, [2/3,1]:1-3
        let w = wasserstein2_sq_1d(&[0.0, 1.0], &[0.0, 0.0, 3.0]);
        assert!((w - (1.0 / 6.0 + 4.0 / 3.0)).abs() < 1e-15);
        // duplicating every sample leaves the distribution unchanged
        let a = [0.3, -1.0, 2.0];
        let b = [1.0, 0.5];
        let w1 = wasserstein2_sq_1d(&a, &b);
        let w2 = wasserstein2_sq_1d(&[0.3, -1.0, 2.0, 0.3, -1.0, 2.0], &b);
        assert!((w1 - w2).abs() < 1e-14);
    }

    #[test]
    fn sliced_wasserstein_matches_direct_implementation() {
        let mut rng = seeded(5);
        let a = rng::normal_matrix(&mut rng, 10_000, 2);
        let mut b = rng::normal_matrix(&mut rng, 10_000, 2);
        for r in 0..b.rows() {
            b[(r, 0)] += 3.0;
        }
        let got = sliced_wasserstein(&a, &b, 128, 9).unwrap();
        // direct: the same directions, each projection sorted and compared pairwise
        let dirs = random_directions(2, 128, 9);
        let mut total = 0.0;
        for k in 0..128 {
            let (c, s) = (dirs[(k, 0)], dirs[(k, 1)]);
            let mut pa: Vec<f64> = a.row_iter().map(|r| c * r[0] + s * r[1]).collect();
            let mut pb: Vec<f64> = b.row_iter().map(|r| c * r[0] + s * r[1]).collect();
            pa.sort_by(f64::total_cmp);
            pb.sort_by(f64::total_cmp);
            total += (pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / pa.len() as f64).sqrt();
        }
        let direct = total / 128.0;
        assert!((got - direct).abs() / direct < 0.02, "{got} vs {direct}");
        // population value is E|3 cos θ| = 6/π; 128 directions leave about 4% spread
        let exact = 6.0 / std::f64::consts::PI;
        assert!((got - exact).abs() / exact < 0.15, "{got} vs {exact}");
    }
}
