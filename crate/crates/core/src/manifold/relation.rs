use log::warn;

use crate::error::{ensure, MgsError, Result};
use crate::linalg::{sq_dist, Matrix};
use crate::rng::{self, Rng};

/// Symmetric `n x n` matrix of pairwise relations in `[0, 1]` with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationMatrix {
    m: Matrix,
}

const SYMMETRY_TOL: f64 = 1e-12;

impl RelationMatrix {
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        ensure!(m.rows() == m.cols(), Contract, "relation matrix must be square, got {:?}", m.shape());
        let n = m.rows();
        for i in 0..n {
            ensure!((m[(i, i)] - 1.0).abs() <= SYMMETRY_TOL, Contract, "relation diagonal entry {} is {}", i, m[(i, i)]);
            for j in 0..n {
                let v = m[(i, j)];
                ensure!((0.0..=1.0).contains(&v), Contract, "relation entry ({}, {}) = {} outside [0, 1]", i, j, v);
                ensure!((v - m[(j, i)]).abs() <= SYMMETRY_TOL, Contract, "relation matrix not symmetric at ({}, {})", i, j);
            }
        }
        Ok(RelationMatrix { m })
    }

    /// `R(i, j) = 1` when `labels[i] == labels[j]`, else 0.
    pub fn from_labels(labels: &[usize]) -> Self {
        let n = labels.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if labels[i] == labels[j] {
                    m[(i, j)] = 1.0;
                }
            }
        }
        RelationMatrix { m }
    }

    pub fn n(&self) -> usize {
        self.m.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.m
    }

    pub fn into_matrix(self) -> Matrix {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }
}

/// Gaussian-kernel relations `exp(-‖φ_i - φ_j‖² / τ)` between rows of `phi`.
pub fn kernel_relations(phi: &Matrix, tau: f64) -> Result<Matrix> {
    ensure!(tau > 0.0, Contract, "kernel temperature must be positive, got {}", tau);
    let n = phi.rows();
    let mut r = Matrix::zeros(n, n);
    for i in 0..n {
        r[(i, i)] = 1.0;
        for j in i + 1..n {
            let v = (-sq_dist(phi.row(i), phi.row(j)) / tau).exp();
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

/// Pulls `G = dL/dR` back through [`kernel_relations`]:
/// `dL/dφ_i = -(2/τ) (s_i φ_i - (W φ)_i)` with `W = G∘R + (G∘R)ᵀ`, `s = rowsum(W)`.
pub fn kernel_backward(phi: &Matrix, r: &Matrix, g: &Matrix, tau: f64) -> Result<Matrix> {
    let n = phi.rows();
    ensure!(r.shape() == (n, n) && g.shape() == (n, n), Contract, "relation gradient must be {}x{}", n, n);
    let gr = g.hadamard(r)?;
    let w = gr.add(&gr.transpose())?;
    let wphi = w.matmul(phi)?;
    let mut out = Matrix::zeros(n, phi.cols());
    let k = -2.0 / tau;
    for i in 0..n {
        let s: f64 = w.row(i).iter().sum();
        for c in 0..phi.cols() {
            out[(i, c)] = k * (s * phi[(i, c)] - wphi[(i, c)]);
        }
    }
    Ok(out)
}

/// Median of the pairwise squared distances between rows (`i < j`).
pub fn median_sq_distance(features: &Matrix) -> f64 {
    let n = features.rows();
    let mut d: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(features.row(i), features.row(j)));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

/// Median heuristic, falling back to 1 when every point coincides.
pub fn median_temperature(features: &Matrix) -> f64 {
    let tau = median_sq_distance(features);
    if tau > 0.0 {
        tau
    } else {
        warn!("all prior features coincide; using temperature 1");
        1.0
    }
}

/// Prior relations from encoder features.
pub fn prior_relations(features: &Matrix, tau: f64) -> Result<RelationMatrix> {
    Ok(RelationMatrix { m: kernel_relations(features, tau)? })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Matrix,
    pub inertia: f64,
}

pub const KMEANS_MAX_ITER: usize = 100;
const KMEANS_RESTARTS: usize = 4;

fn kmeans_pp(features: &Matrix, k: usize, rng: &mut Rng) -> Vec<usize> {
    let n = features.rows();
    let mut chosen = vec![rng::index(rng, n)];
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(features.row(i), features.row(chosen[0]))).collect();
    while chosen.len() < k {
        let next = if best.iter().sum::<f64>() > 0.0 {
            rng::categorical(rng, &best)
        } else {
            // remaining points all coincide with a centroid; take any unused one
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng::index(rng, free.len())]
        };
        chosen.push(next);
        for i in 0..n {
            best[i] = best[i].min(sq_dist(features.row(i), features.row(next)));
        }
    }
    chosen
}

fn lloyd(features: &Matrix, k: usize, rng: &mut Rng) -> KMeansResult {
    let (n, d) = features.shape();
    let mut centroids = features.select_rows(&kmeans_pp(features, k, rng));
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for i in 0..n {
            let mut arg = 0;
            let mut bd = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist(features.row(i), centroids.row(c));
                if dist < bd {
                    bd = dist;
                    arg = c;
                }
            }
            if labels[i] != arg {
                labels[i] = arg;
                changed = true;
            }
        }
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[labels[i]] += 1;
            sums.row_mut(labels[i]).iter_mut().zip(features.row(i)).for_each(|(s, x)| *s += x);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(features.row(a), centroids.row(labels[a]));
                        let db = sq_dist(features.row(b), centroids.row(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("n > 0");
                centroids.row_mut(c).copy_from_slice(features.row(far));
                labels[far] = c;
                changed = true;
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = (0..n).map(|i| sq_dist(features.row(i), centroids.row(labels[i]))).sum();
    KMeansResult { labels, centroids, inertia }
}

/// k-means++ seeding plus Lloyd iterations; the best of a few restarts by inertia.
pub fn kmeans(features: &Matrix, k: usize, rng: &mut Rng) -> Result<KMeansResult> {
    let n = features.rows();
    ensure!(k >= 1 && k <= n, Config, "k-means needs 1 <= k <= n, got k = {} for n = {}", k, n);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..KMEANS_RESTARTS {
        let r = lloyd(features, k, rng);
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| MgsError::numeric("k-means produced no result"))
}

/// Hard relations from a k-means partition.
pub fn kmeans_relations(features: &Matrix, k: usize, seed: u64) -> Result<(RelationMatrix, Vec<usize>)> {
    let mut rng = rng::seeded(seed);
    let labels = kmeans(features, k, &mut rng)?.labels;
    Ok((RelationMatrix::from_labels(&labels), labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check;
    use crate::rng::seeded;

    #[test]
    fn kernel_trivial_values() {
        let f = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]).unwrap();
        let r = prior_relations(&f, 2.0).unwrap();
        assert_eq!(r.get(0, 1), 1.0);
        assert!((r.get(0, 2) - (-1f64).exp()).abs() < 1e-15);
        assert!((r.get(0, 2) - 0.36788).abs() < 1e-5);
    }

    #[test]
    fn four_points_match_two_loop_oracle() {
        let f = Matrix::from_rows(&[[0.0, 1.0], [2.0, -1.0], [0.5, 0.5], [3.0, 3.0]]).unwrap();
        let mut d = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                if i < j {
                    d.push((f[(i, 0)] - f[(j, 0)]).powi(2) + (f[(i, 1)] - f[(j, 1)]).powi(2));
                }
            }
        }
        d.sort_by(f64::total_cmp);
        let tau = (d[2] + d[3]) / 2.0;
        assert!((median_sq_distance(&f) - tau).abs() < 1e-15);
        let r = prior_relations(&f, tau).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let dd = (f[(i, 0)] - f[(j, 0)]).powi(2) + (f[(i, 1)] - f[(j, 1)]).powi(2);
                assert!((r.get(i, j) - (-dd / tau).exp()).abs() < 1e-12);
            }
        }
        RelationMatrix::from_matrix(r.into_matrix()).unwrap();
    }

    #[test]
    fn validation_rejects_bad_matrices() {
        let asym = Matrix::from_rows(&[[1.0, 0.2], [0.3, 1.0]]).unwrap();
        assert!(RelationMatrix::from_matrix(asym).is_err());
        let diag = Matrix::from_rows(&[[0.9, 0.2], [0.2, 1.0]]).unwrap();
        assert!(RelationMatrix::from_matrix(diag).is_err());
        let range = Matrix::from_rows(&[[1.0, 1.2], [1.2, 1.0]]).unwrap();
        assert!(RelationMatrix::from_matrix(range).is_err());
    }

    #[test]
    fn kernel_backward_matches_finite_differences() {
        let mut rng = seeded(7);
        let phi = rng::normal_matrix(&mut rng, 6, 3);
        let g = rng::normal_matrix(&mut rng, 6, 6);
        let tau = 1.7;
        let r = kernel_relations(&phi, tau).unwrap();
        let dphi = kernel_backward(&phi, &r, &g, tau).unwrap();
        let rep = finite_diff_check(
            |v| Ok(kernel_relations(&Matrix::from_vec(6, 3, v.to_vec())?, tau)?.hadamard(&g)?.sum()),
            phi.data(),
            dphi.data(),
            1e-6,
        )
        .unwrap();
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    fn blobs(rng: &mut Rng) -> Matrix {
        let mut rows = Vec::new();
        for i in 0..10 {
            let c = if i < 5 { -5.0 } else { 5.0 };
            rows.push([c + 0.1 * rng::normal(rng), c + 0.1 * rng::normal(rng)]);
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let f = blobs(&mut seeded(1));
        let (r, _) = kmeans_relations(&f, 2, 3).unwrap();
        // brute-force partition: same blob iff same sign of first coordinate
        for i in 0..10 {
            for j in 0..10 {
                let same = (f[(i, 0)] > 0.0) == (f[(j, 0)] > 0.0);
                assert_eq!(r.get(i, j), if same { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn kmeans_with_k_equal_n_is_identity() {
        let f = blobs(&mut seeded(2));
        let (r, _) = kmeans_relations(&f, 10, 4).unwrap();
        assert_eq!(r.into_matrix(), Matrix::identity(10));
        assert!(kmeans_relations(&f, 11, 4).is_err());
    }

    #[test]
    fn kmeans_partition_survives_permutation() {
        let f = blobs(&mut seeded(3));
        let perm = [3, 7, 0, 9, 1, 5, 8, 2, 6, 4];
        let (r, _) = kmeans_relations(&f, 2, 11).unwrap();
        let (rp, _) = kmeans_relations(&f.select_rows(&perm), 2, 11).unwrap();
        for a in 0..10 {
            for b in 0..10 {
                assert_eq!(rp.get(a, b), r.get(perm[a], perm[b]));
            }
        }
    }
}
