use crate::diffusion::model::EpsModel;
use crate::diffusion::schedule::{q_sample_rows, NoiseSchedule};
use crate::error::{ensure, MgsError, Result};
use crate::linalg::Matrix;
use crate::nn::ParamGrads;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossWeighting {
    /// `η_t = 1`
    Simple,
    /// `η_t = β_t² / (α_t (1 - ᾱ_t))`
    Eta,
}

impl LossWeighting {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(LossWeighting::Simple),
            "eta" => Ok(LossWeighting::Eta),
            other => Err(MgsError::config(format!("unknown loss weighting `{other}` (simple|eta)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossWeighting::Simple => "simple",
            LossWeighting::Eta => "eta",
        }
    }

    fn weight(self, schedule: &NoiseSchedule, t: usize) -> f64 {
        match self {
            LossWeighting::Simple => 1.0,
            LossWeighting::Eta => schedule.eta(t),
        }
    }
}

/// Noise-prediction loss for explicit timesteps and noise draws:
/// `(1/B) Σ_i η_{t_i} ‖ε_i - ε_θ(x_{t_i}, t_i)‖²`, with exact parameter gradients.
pub fn training_loss_with(
    model: &EpsModel,
    x0: &Matrix,
    ts: &[usize],
    eps: &Matrix,
    schedule: &NoiseSchedule,
    weighting: LossWeighting,
) -> Result<(f64, ParamGrads)> {
    ensure!(x0.rows() > 0, Contract, "training batch is empty");
    let xt = q_sample_rows(x0, ts, eps, schedule)?;
    let (pred, cache) = model.forward_rows(&xt, ts)?;
    let b = x0.rows() as f64;
    let mut dy = Matrix::zeros(pred.rows(), pred.cols());
    let mut loss = 0.0;
    for (i, &t) in ts.iter().enumerate() {
        let w = weighting.weight(schedule, t);
        let mut sq = 0.0;
        for c in 0..pred.cols() {
            let r = eps[(i, c)] - pred[(i, c)];
            sq += r * r;
            dy[(i, c)] = -2.0 * w * r / b;
        }
        let li = w * sq;
        if !li.is_finite() {
            return Err(MgsError::numeric(format!("non-finite training loss at batch sample {i} (t = {t})")));
        }
        loss += li;
    }
    let (grads, _) = model.backward(cache, &dy)?;
    Ok((loss / b, grads))
}

/// Draws `t ~ U{1..N}` and `ε ~ N(0, I)` per sample, then evaluates the loss.
pub fn training_loss(
    model: &EpsModel,
    x0: &Matrix,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
    weighting: LossWeighting,
) -> Result<(f64, ParamGrads)> {
    let ts: Vec<usize> = (0..x0.rows()).map(|_| 1 + rng::index(rng, schedule.steps())).collect();
    let eps = rng::normal_matrix(rng, x0.rows(), x0.cols());
    training_loss_with(model, x0, &ts, &eps, schedule, weighting)
}
