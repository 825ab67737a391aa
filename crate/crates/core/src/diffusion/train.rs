use log::debug;

use crate::diffusion::loss::{training_loss, LossWeighting};
use crate::diffusion::model::EpsModel;
use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{ensure, MgsError, Result};
use crate::linalg::Matrix;
use crate::nn::AdamState;
use crate::rng::{self, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weighting: LossWeighting,
    /// Exponential moving average of the weights kept as the final model; 0 disables it.
    pub ema_decay: f64,
    /// Anneal the learning rate along a half cosine down to 1% of `lr`.
    pub cosine_decay: bool,
    pub log_every: usize,
}

/// Learning rate at 1-based `step` of `total`.
pub fn cosine_lr(lr: f64, step: usize, total: usize) -> f64 {
    const FLOOR: f64 = 0.01;
    let progress = (step - 1) as f64 / total.max(1) as f64;
    lr * (FLOOR + (1.0 - FLOOR) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        DiffusionTrainConfig {
            steps: 4000,
            batch_size: 256,
            lr: 2e-3,
            weighting: LossWeighting::Simple,
            ema_decay: 0.995,
            cosine_decay: true,
            log_every: 100,
        }
    }
}

/// Minibatch Adam on the noise-prediction loss. Returns `(step, loss)` at
/// every `log_every` steps (averaged over the window).
pub fn train_eps_model(
    model: &mut EpsModel,
    data: &Matrix,
    schedule: &NoiseSchedule,
    cfg: &DiffusionTrainConfig,
    rng: &mut Rng,
) -> Result<Vec<(usize, f64)>> {
    ensure!(data.rows() > 0, Contract, "cannot train on an empty dataset");
    ensure!(cfg.batch_size > 0 && cfg.lr > 0.0, Config, "diffusion batch size and learning rate must be positive");
    ensure!((0.0..1.0).contains(&cfg.ema_decay), Config, "ema decay must lie in [0, 1)");
    let mut params = model.net().params();
    let mut ema = params.clone();
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let log_every = cfg.log_every.max(1);
    let mut log = Vec::new();
    let mut window = 0.0;
    for step in 1..=cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng::index(rng, data.rows())).collect();
        let batch = data.select_rows(&idx);
        let (loss, grads) = training_loss(model, &batch, schedule, rng, cfg.weighting)
            .map_err(|e| MgsError::numeric(format!("diffusion training step {step}: {e}")))?;
        if cfg.cosine_decay {
            adam.lr = cosine_lr(cfg.lr, step, cfg.steps);
        }
        adam.step(&mut params, &grads.flatten())?;
        model.net_mut().set_params(&params)?;
        if cfg.ema_decay > 0.0 {
            let d = cfg.ema_decay;
            ema.iter_mut().zip(&params).for_each(|(e, p)| *e = d * *e + (1.0 - d) * p);
        }
        window += loss;
        if step % log_every == 0 || step == cfg.steps {
            let len = if step % log_every == 0 { log_every } else { step % log_every };
            let mean = window / len as f64;
            debug!("diffusion step {step}: loss {mean:.5}");
            log.push((step, mean));
            window = 0.0;
        }
    }
    if cfg.ema_decay > 0.0 && cfg.steps > 0 {
        model.net_mut().set_params(&ema)?;
    }
    Ok(log)
}
