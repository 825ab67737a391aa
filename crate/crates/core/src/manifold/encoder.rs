use log::warn;

use crate::error::{ensure, Result};
use crate::linalg::{sym_eigen, Matrix};

/// Mean-centred projection onto the top principal directions of the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorEncoder {
    mean: Vec<f64>,
    /// `D x p`, orthonormal columns.
    basis: Matrix,
    /// Eigenvalues of the sample covariance along each basis column.
    variances: Vec<f64>,
}

/// Eigenvalues below this fraction of the largest are treated as degenerate.
const DEGENERATE_RATIO: f64 = 1e-10;

pub fn fit_prior_encoder(data: &Matrix, p: usize) -> Result<PriorEncoder> {
    let (n, dim) = data.shape();
    ensure!(p >= 1 && p <= dim, Config, "prior dimension must lie in [1, {}], got {}", dim, p);
    ensure!(n >= p && n >= 2, Config, "prior encoder needs at least max(p, 2) = {} samples, got {}", p.max(2), n);
    let mean = data.col_means();
    let mut centred = data.clone();
    for r in 0..n {
        centred.row_mut(r).iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
    }
    let cov = centred.gram_cols().scaled(1.0 / (n - 1) as f64);
    let (vals, vecs) = sym_eigen(&cov)?;
    let top = vals[0].max(0.0);
    let keep = vals.iter().take(p).take_while(|&&v| top > 0.0 && v > DEGENERATE_RATIO * top).count().max(1);
    if keep < p {
        warn!("covariance is degenerate beyond {keep} directions; prior dimension reduced from {p}");
    }
    Ok(PriorEncoder { mean, basis: vecs.col_range(0, keep), variances: vals[..keep].to_vec() })
}

impl PriorEncoder {
    pub fn dim(&self) -> usize {
        self.basis.cols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn encode(&self, data: &Matrix) -> Result<Matrix> {
        ensure!(data.cols() == self.mean.len(), Contract, "encoder expects {}-dim data, got {}", self.mean.len(), data.cols());
        let mut centred = data.clone();
        for r in 0..data.rows() {
            centred.row_mut(r).iter_mut().zip(&self.mean).for_each(|(v, m)| *v -= m);
        }
        centred.matmul(&self.basis)
    }

    pub fn reconstruct(&self, features: &Matrix) -> Result<Matrix> {
        let mut out = features.matmul_nt(&self.basis)?;
        for r in 0..out.rows() {
            out.row_mut(r).iter_mut().zip(&self.mean).for_each(|(v, m)| *v += m);
        }
        Ok(out)
    }
}
