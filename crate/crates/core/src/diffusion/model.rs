use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{ensure, Result};
use crate::linalg::Matrix;
use crate::nn::{time_embed_matrix, Activation, FeedforwardNet, ForwardCache, ParamGrads};
use crate::rng::Rng;

/// Anything that predicts the injected noise `ε(x_t, t)` for a batch sharing
/// one timestep, and can pull a row-wise upstream gradient back to `x_t`.
pub trait NoisePredictor: Sync {
    fn data_dim(&self) -> usize;

    fn predict(&self, x: &Matrix, t: usize) -> Result<Matrix>;

    /// `U ↦ Uᵀ ∂ε/∂x` applied sample by sample (rows of `upstream`).
    fn input_vjp(&self, x: &Matrix, t: usize, upstream: &Matrix) -> Result<Matrix>;
}

/// Noise-prediction network: `ε_θ(x, t) = net([x, emb(t)])`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsModel {
    net: FeedforwardNet,
    data_dim: usize,
    embed_dim: usize,
}

impl EpsModel {
    pub fn new(net: FeedforwardNet, data_dim: usize, embed_dim: usize) -> Result<Self> {
        ensure!(embed_dim > 0 && embed_dim.is_multiple_of(2), Config, "time embedding dim must be positive and even");
        ensure!(
            net.input_dim() == data_dim + embed_dim,
            Contract,
            "eps network takes {} inputs, expected data {} + embedding {}",
            net.input_dim(),
            data_dim,
            embed_dim
        );
        ensure!(
            net.output_dim() == data_dim,
            Contract,
            "eps network outputs {} values for {}-dim data",
            net.output_dim(),
            data_dim
        );
        Ok(EpsModel { net, data_dim, embed_dim })
    }

    /// Glorot MLP with the given hidden widths and a linear output layer.
    pub fn init(data_dim: usize, embed_dim: usize, hidden: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut dims = vec![data_dim + embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(data_dim);
        let net = FeedforwardNet::mlp(&dims, activation, Activation::Identity, rng)?;
        EpsModel::new(net, data_dim, embed_dim)
    }

    pub fn net(&self) -> &FeedforwardNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut FeedforwardNet {
        &mut self.net
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    fn check_x(&self, x: &Matrix) -> Result<()> {
        ensure!(x.cols() == self.data_dim, Contract, "model expects {}-dim samples, got {}", self.data_dim, x.cols());
        Ok(())
    }

    fn input(&self, x: &Matrix, ts: &[usize]) -> Result<Matrix> {
        self.check_x(x)?;
        x.hstack(&time_embed_matrix(ts, self.embed_dim)?)
    }

    /// Prediction with a timestep per row.
    pub fn predict_rows(&self, x: &Matrix, ts: &[usize]) -> Result<Matrix> {
        self.net.predict(&self.input(x, ts)?)
    }

    pub fn forward_rows(&self, x: &Matrix, ts: &[usize]) -> Result<(Matrix, ForwardCache)> {
        self.net.forward(&self.input(x, ts)?)
    }

    /// Parameter gradients and `dL/dx` (embedding columns dropped).
    pub fn backward(&self, cache: ForwardCache, dy: &Matrix) -> Result<(ParamGrads, Matrix)> {
        let (g, dinput) = self.net.backward(cache, dy)?;
        Ok((g, dinput.col_range(0, self.data_dim)))
    }
}

impl NoisePredictor for EpsModel {
    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn predict(&self, x: &Matrix, t: usize) -> Result<Matrix> {
        self.predict_rows(x, &vec![t; x.rows()])
    }

    fn input_vjp(&self, x: &Matrix, t: usize, upstream: &Matrix) -> Result<Matrix> {
        let (_, cache) = self.forward_rows(x, &vec![t; x.rows()])?;
        Ok(self.backward(cache, upstream)?.1)
    }
}

/// Closed-form optimal noise predictor for data `N(μ, σ² I)`:
/// `ε*(x, t) = sqrt(1 - ᾱ) (x - sqrt(ᾱ) μ) / (ᾱ σ² + 1 - ᾱ)`.
#[derive(Clone, Debug)]
pub struct GaussianOracle {
    mean: Vec<f64>,
    var: f64,
    schedule: NoiseSchedule,
}

impl GaussianOracle {
    pub fn new(mean: Vec<f64>, std: f64, schedule: NoiseSchedule) -> Result<Self> {
        ensure!(!mean.is_empty(), Contract, "oracle mean must be non-empty");
        ensure!(std > 0.0, Contract, "oracle std must be positive");
        Ok(GaussianOracle { mean, var: std * std, schedule })
    }

    /// Marginal variance of `x_t`.
    pub fn marginal_var(&self, t: usize) -> f64 {
        let ab = self.schedule.alpha_bar(t);
        ab * self.var + 1.0 - ab
    }

    fn slope(&self, t: usize) -> f64 {
        (1.0 - self.schedule.alpha_bar(t)).sqrt() / self.marginal_var(t)
    }
}

impl NoisePredictor for GaussianOracle {
    fn data_dim(&self) -> usize {
        self.mean.len()
    }

    fn predict(&self, x: &Matrix, t: usize) -> Result<Matrix> {
        self.schedule.check_t(t)?;
        ensure!(x.cols() == self.mean.len(), Contract, "oracle expects {}-dim samples", self.mean.len());
        let (c, s) = (self.slope(t), self.schedule.alpha_bar(t).sqrt());
        let mut out = x.clone();
        for r in 0..out.rows() {
            out.row_mut(r).iter_mut().zip(&self.mean).for_each(|(v, m)| *v = c * (*v - s * m));
        }
        Ok(out)
    }

    fn input_vjp(&self, x: &Matrix, t: usize, upstream: &Matrix) -> Result<Matrix> {
        self.schedule.check_t(t)?;
        ensure!(upstream.shape() == x.shape(), Contract, "upstream shape does not match input");
        Ok(upstream.scaled(self.slope(t)))
    }
}
