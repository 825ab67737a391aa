use crate::error::{ensure, MgsError, Result};
use crate::linalg::Matrix;
use crate::manifold::relation::{kernel_backward, kernel_relations, RelationMatrix};
use crate::nn::{Activation, FeedforwardNet, ForwardCache, ParamGrads};
use crate::rng::Rng;

const NORM_FLOOR: f64 = 1e-12;

/// Feature map `F: R^D -> R^d`, optionally projected onto the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedderF {
    pub net: FeedforwardNet,
    pub normalize: bool,
}

pub struct EmbedCache {
    net: ForwardCache,
    z: Matrix,
    norms: Vec<f64>,
}

impl EmbedderF {
    pub fn init(data_dim: usize, hidden: &[usize], feature_dim: usize, activation: Activation, normalize: bool, rng: &mut Rng) -> Result<Self> {
        let mut dims = vec![data_dim];
        dims.extend_from_slice(hidden);
        dims.push(feature_dim);
        Ok(EmbedderF { net: FeedforwardNet::mlp(&dims, activation, Activation::Identity, rng)?, normalize })
    }

    pub fn data_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.0)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, EmbedCache)> {
        let (y, net) = self.net.forward(x)?;
        if !self.normalize {
            return Ok((y.clone(), EmbedCache { net, z: y, norms: Vec::new() }));
        }
        let mut z = y;
        let mut norms = Vec::with_capacity(z.rows());
        for r in 0..z.rows() {
            let n = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
            z.row_mut(r).iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok((z.clone(), EmbedCache { net, z, norms }))
    }

    /// `dL/dZ -> (dL/dθ, dL/dX)`; through the sphere projection
    /// `dL/dy = (g - z (z·g)) / ‖y‖`.
    pub fn backward(&self, cache: EmbedCache, dz: &Matrix) -> Result<(ParamGrads, Matrix)> {
        ensure!(dz.shape() == cache.z.shape(), Contract, "feature gradient shape mismatch");
        let dy = if self.normalize {
            let mut dy = dz.clone();
            for r in 0..dy.rows() {
                let z = cache.z.row(r);
                let proj: f64 = z.iter().zip(dz.row(r)).map(|(a, b)| a * b).sum();
                let inv = 1.0 / cache.norms[r];
                dy.row_mut(r).iter_mut().zip(z).for_each(|(g, zi)| *g = (*g - zi * proj) * inv);
            }
            dy
        } else {
            dz.clone()
        };
        self.net.backward(cache.net, &dy)
    }
}

/// Relation network: a shared embedding `φ` and a Gaussian kernel,
/// `R(i, j) = exp(-‖φ(z_i) - φ(z_j)‖² / τ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationNetG {
    pub net: FeedforwardNet,
    pub tau: f64,
}

pub struct RelationCache {
    net: ForwardCache,
    phi: Matrix,
    r: Matrix,
}

impl RelationNetG {
    pub fn init(feature_dim: usize, hidden: usize, embed_dim: usize, tau: f64, rng: &mut Rng) -> Result<Self> {
        ensure!(tau > 0.0, Config, "relation temperature must be positive");
        let net = FeedforwardNet::mlp(&[feature_dim, hidden, hidden, embed_dim], Activation::Tanh, Activation::Identity, rng)?;
        Ok(RelationNetG { net, tau })
    }

    pub fn relations(&self, z: &Matrix) -> Result<Matrix> {
        kernel_relations(&self.net.predict(z)?, self.tau)
    }

    pub fn forward(&self, z: &Matrix) -> Result<(Matrix, RelationCache)> {
        let (phi, net) = self.net.forward(z)?;
        let r = kernel_relations(&phi, self.tau)?;
        Ok((r.clone(), RelationCache { net, phi, r }))
    }

    pub fn backward(&self, cache: RelationCache, dr: &Matrix) -> Result<(ParamGrads, Matrix)> {
        let dphi = kernel_backward(&cache.phi, &cache.r, dr, self.tau)?;
        self.net.backward(cache.net, &dphi)
    }
}

/// `‖R_pre - R_g(Z)‖²_F` with gradients for `g`'s parameters and for `Z`.
pub fn relation_loss(g: &RelationNetG, z: &Matrix, r_pre: &RelationMatrix) -> Result<(f64, ParamGrads, Matrix)> {
    ensure!(r_pre.n() == z.rows(), Contract, "prior relations are {}x{}, features have {} rows", r_pre.n(), r_pre.n(), z.rows());
    let (r, cache) = g.forward(z)?;
    let diff = r.sub(r_pre.matrix())?;
    let loss = diff.frobenius_sq();
    if !loss.is_finite() {
        return Err(MgsError::numeric("relation loss is not finite"));
    }
    let (pg, dz) = g.backward(cache, &diff.scaled(2.0))?;
    Ok((loss, pg, dz))
}

/// The trained pair; `H = g ∘ F`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldModel {
    pub f: EmbedderF,
    pub g: RelationNetG,
}

impl ManifoldModel {
    pub fn new(f: EmbedderF, g: RelationNetG) -> Result<Self> {
        ensure!(
            f.feature_dim() == g.net.input_dim(),
            Contract,
            "embedder outputs {} features but relation net expects {}",
            f.feature_dim(),
            g.net.input_dim()
        );
        Ok(ManifoldModel { f, g })
    }

    pub fn data_dim(&self) -> usize {
        self.f.data_dim()
    }

    pub fn relations(&self, x: &Matrix) -> Result<Matrix> {
        self.g.relations(&self.f.embed(x)?)
    }

    /// `dL/dR -> dL/dX` through both networks.
    pub fn relation_vjp(&self, x: &Matrix, dr: &Matrix) -> Result<(Matrix, Matrix)> {
        let (z, fc) = self.f.forward(x)?;
        let (r, gc) = self.g.forward(&z)?;
        let (_, dz) = self.g.backward(gc, dr)?;
        let (_, dx) = self.f.backward(fc, &dz)?;
        Ok((r, dx))
    }
}
