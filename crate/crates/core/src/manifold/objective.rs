use crate::error::{ensure, MgsError, Result};
use crate::linalg::{spd_logdet, spd_logdet_inverse, Matrix};
use crate::manifold::relation::RelationMatrix;

/// Soft memberships of `n` samples in `k` groups: row `j` is the diagonal of `C^j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Membership {
    weights: Matrix,
}

impl Membership {
    pub fn new(weights: Matrix) -> Result<Self> {
        ensure!(
            weights.data().iter().all(|&w| w.is_finite() && w >= 0.0),
            Contract,
            "membership weights must be finite and non-negative"
        );
        Ok(Membership { weights })
    }

    /// One hard group per distinct label value.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut distinct: Vec<usize> = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let mut w = Matrix::zeros(distinct.len(), labels.len());
        for (i, l) in labels.iter().enumerate() {
            let j = distinct.binary_search(l).expect("label present");
            w[(j, i)] = 1.0;
        }
        Membership { weights: w }
    }

    /// One group per sample: `C^j(i, i) = R(j, i)`.
    pub fn from_relations(r: &RelationMatrix) -> Self {
        Membership { weights: r.matrix().clone() }
    }

    /// Same, from an unvalidated relation-shaped matrix.
    pub fn from_relation_rows(r: &Matrix) -> Result<Self> {
        ensure!(r.rows() == r.cols(), Contract, "relation rows must form a square matrix");
        Membership::new(r.clone())
    }

    /// A single group containing every sample.
    pub fn all_ones(n: usize) -> Self {
        Membership { weights: Matrix::filled(1, n, 1.0) }
    }

    pub fn groups(&self) -> usize {
        self.weights.rows()
    }

    pub fn samples(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObjectiveForm {
    /// `(1/2n)(Tr(ZZᵀ) - Σ_j Tr(Z C^j Zᵀ))`
    Trace,
    /// `½ logdet(I + α ZZᵀ) - Σ_j (γ_j/2) logdet(I + α_j Z C^j Zᵀ)`
    Logdet,
}

impl ObjectiveForm {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(ObjectiveForm::Trace),
            "logdet" => Ok(ObjectiveForm::Logdet),
            other => Err(MgsError::config(format!("unknown objective form `{other}` (trace|logdet)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveForm::Trace => "trace",
            ObjectiveForm::Logdet => "logdet",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmConfig {
    pub form: ObjectiveForm,
    /// Coding precision `ε²`.
    pub eps_sq: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig { form: ObjectiveForm::Logdet, eps_sq: 0.5 }
    }
}

/// Largest `ε²` for which the orthogonal-subspace optimum is guaranteed:
/// `ε⁴ < min_j (n_j/n)(d²/d_j²)`.
pub fn max_precision_eps_sq(group_sizes: &[usize], group_dims: &[usize], feature_dim: usize) -> f64 {
    let n: usize = group_sizes.iter().sum();
    group_sizes
        .iter()
        .zip(group_dims)
        .map(|(&nj, &dj)| (nj as f64 / n as f64) * (feature_dim as f64 / dj as f64).powi(2))
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Rate-reduction objective of features `z` (one sample per row, `n x d`)
/// and its gradient with respect to `z`.
pub fn lm_objective(z: &Matrix, c: &Membership, cfg: &LmConfig) -> Result<(f64, Matrix)> {
    let (n, d) = z.shape();
    ensure!(n > 0 && d > 0, Contract, "objective needs a non-empty feature matrix");
    ensure!(c.samples() == n, Contract, "membership covers {} samples, features have {}", c.samples(), n);
    ensure!(cfg.eps_sq > 0.0, Config, "coding precision must be positive");
    let nf = n as f64;
    match cfg.form {
        ObjectiveForm::Trace => {
            let mut value = 0.0;
            let mut grad = Matrix::zeros(n, d);
            for i in 0..n {
                let total: f64 = (0..c.groups()).map(|j| c.weights[(j, i)]).sum();
                let w = 1.0 - total;
                let sq: f64 = z.row(i).iter().map(|v| v * v).sum();
                value += w * sq;
                grad.row_mut(i).iter_mut().zip(z.row(i)).for_each(|(g, v)| *g = w * v / nf);
            }
            Ok((value / (2.0 * nf), grad))
        }
        ObjectiveForm::Logdet => {
            let alpha = d as f64 / (nf * cfg.eps_sq);
            let mut a = z.gram_cols().scaled(alpha);
            add_identity(&mut a);
            let (ld, a_inv) = spd_logdet_inverse(&a)?;
            let mut value = 0.5 * ld;
            let mut grad = z.matmul(&a_inv)?.scaled(alpha);
            for j in 0..c.groups() {
                let cj = c.weights.row(j);
                let tr: f64 = cj.iter().sum();
                if tr <= 0.0 {
                    continue;
                }
                let (aj, gj) = (d as f64 / (tr * cfg.eps_sq), tr / nf);
                let zc = z.scale_rows(cj);
                let mut b = zc.matmul_tn(z)?.scaled(aj);
                add_identity(&mut b);
                let (ldj, b_inv) = spd_logdet_inverse(&b)?;
                value -= 0.5 * gj * ldj;
                grad.axpy(-gj * aj, &zc.matmul(&b_inv)?)?;
            }
            Ok((value, grad))
        }
    }
}

fn add_identity(m: &mut Matrix) {
    for i in 0..m.rows() {
        m[(i, i)] += 1.0;
    }
}

/// For `M` with one sample per column: `(Tr(MMᵀ)/(2n), ½ logdet(I + MMᵀ/n))`.
pub fn compactness(m: &Matrix) -> Result<(f64, f64)> {
    let n = m.cols();
    ensure!(n > 0, Contract, "compactness needs at least one sample column");
    let trace = m.frobenius_sq() / (2.0 * n as f64);
    let mut g = m.matmul_nt(m)?.scaled(1.0 / n as f64);
    add_identity(&mut g);
    Ok((trace, 0.5 * spd_logdet(&g)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;
    use crate::nn::finite_diff_check;
    use crate::rng::{self, seeded};

    fn logdet_cfg(eps_sq: f64) -> LmConfig {
        LmConfig { form: ObjectiveForm::Logdet, eps_sq }
    }

    #[test]
    fn trace_form_vanishes_on_hard_partition() {
        let mut rng = seeded(1);
        let z = rng::normal_matrix(&mut rng, 9, 4);
        let c = Membership::from_labels(&[0, 1, 2, 0, 1, 2, 0, 1, 2]);
        let (v, g) = lm_objective(&z, &c, &LmConfig { form: ObjectiveForm::Trace, eps_sq: 0.5 }).unwrap();
        assert!(v.abs() < 1e-14);
        assert!(g.max_abs() < 1e-15);
    }

    #[test]
    fn logdet_two_singletons_closed_form() {
        let z = Matrix::identity(2);
        let c = Membership::from_labels(&[0, 1]);
        let (v, _) = lm_objective(&z, &c, &logdet_cfg(0.5)).unwrap();
        // direct evaluation of the diagonal matrices: diag(3,3), diag(5,1), diag(1,5)
        let direct = 0.5 * (3f64.ln() * 2.0) - 2.0 * 0.25 * 5f64.ln();
        assert!((v - direct).abs() < 1e-14);
        assert!((v - (3f64.ln() - 0.5 * 5f64.ln())).abs() < 1e-14);
        assert!((v - 0.29389).abs() < 1e-5);
    }

    #[test]
    fn single_all_ones_group_is_zero() {
        let z = rng::normal_matrix(&mut seeded(2), 7, 3);
        let (v, g) = lm_objective(&z, &Membership::all_ones(7), &logdet_cfg(0.3)).unwrap();
        assert!(v.abs() < 1e-13, "{v}");
        assert!(g.max_abs() < 1e-12);
    }

    #[test]
    fn logdet_gradient_matches_finite_differences() {
        let mut rng = seeded(3);
        for trial in 0..5 {
            let z = rng::normal_matrix(&mut rng, 8, 4);
            let c = if trial % 2 == 0 {
                Membership::from_labels(&[0, 0, 1, 1, 2, 2, 0, 1])
            } else {
                let w = Matrix::from_vec(3, 8, (0..24).map(|_| rng::uniform(&mut rng, 0.0, 1.0)).collect()).unwrap();
                Membership::new(w).unwrap()
            };
            for form in [ObjectiveForm::Logdet, ObjectiveForm::Trace] {
                let cfg = LmConfig { form, eps_sq: 0.5 };
                let (_, g) = lm_objective(&z, &c, &cfg).unwrap();
                let rep = finite_diff_check(
                    |v| Ok(lm_objective(&Matrix::from_vec(8, 4, v.to_vec())?, &c, &cfg)?.0),
                    z.data(),
                    g.data(),
                    1e-5,
                )
                .unwrap();
                assert!(rep.max_rel_error < 1e-4, "{form:?} {rep:?}");
            }
        }
    }

    #[test]
    fn invariant_under_orthogonal_feature_rotation() {
        let mut rng = seeded(4);
        let z = rng::normal_matrix(&mut rng, 10, 3);
        let (_, q) = sym_eigen(&rng::normal_matrix(&mut rng, 3, 3).gram_cols()).unwrap();
        let c = Membership::from_labels(&[0, 1, 0, 1, 2, 2, 2, 0, 1, 0]);
        for form in [ObjectiveForm::Logdet, ObjectiveForm::Trace] {
            let cfg = LmConfig { form, eps_sq: 0.5 };
            let a = lm_objective(&z, &c, &cfg).unwrap().0;
            let b = lm_objective(&z.matmul(&q).unwrap(), &c, &cfg).unwrap().0;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn compactness_trivial_cases() {
        assert_eq!(compactness(&Matrix::zeros(3, 5)).unwrap(), (0.0, 0.0));
        let m = rng::normal_matrix(&mut seeded(5), 3, 5);
        let (t1, _) = compactness(&m).unwrap();
        let (t2, _) = compactness(&m.scaled(3.0)).unwrap();
        assert!((t2 - 9.0 * t1).abs() < 1e-12);
    }

    #[test]
    fn precision_bound() {
        // three equal modes of dim 2 in an 8-dim feature space
        let e = max_precision_eps_sq(&[100, 100, 100], &[2, 2, 2], 8);
        assert!((e - (16.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
