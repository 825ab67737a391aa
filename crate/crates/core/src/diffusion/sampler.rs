use crate::diffusion::model::NoisePredictor;
use crate::diffusion::schedule::{tweedie_x0_with, NoiseSchedule};
use crate::error::{ensure, MgsError, Result};
use crate::linalg::Matrix;
use crate::rng::{self, streams, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    /// Stochastic reverse chain.
    Ancestral,
    /// Zero-noise DDIM-style update through `x̂0`.
    Deterministic,
}

impl SamplerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ancestral" => Ok(SamplerKind::Ancestral),
            "deterministic" => Ok(SamplerKind::Deterministic),
            other => Err(MgsError::config(format!("unknown sampler `{other}` (ancestral|deterministic)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ancestral => "ancestral",
            SamplerKind::Deterministic => "deterministic",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub sample_steps: usize,
    /// Strictly decreasing, from `N` down to 1.
    pub timesteps: Vec<usize>,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, sample_steps: usize, total_steps: usize, seed: u64) -> Result<Self> {
        Ok(SamplerConfig { kind, sample_steps, timesteps: evenly_spaced(total_steps, sample_steps)?, seed })
    }

    /// Timestep the chain moves to after step `index`; 0 after the last one.
    pub fn next_t(&self, index: usize) -> usize {
        self.timesteps.get(index + 1).copied().unwrap_or(0)
    }
}

/// `count` timesteps evenly spaced between `total` and 1 (rounded, both ends kept).
pub fn evenly_spaced(total: usize, count: usize) -> Result<Vec<usize>> {
    ensure!(total >= 2, Config, "schedule must have at least 2 steps");
    ensure!(
        count >= 2 && count <= total,
        Config,
        "sample_steps must lie in [2, {}], got {}",
        total,
        count
    );
    let span = (total - 1) as f64 / (count - 1) as f64;
    Ok((0..count).map(|k| (total as f64 - k as f64 * span).round() as usize).collect())
}

/// One reverse step `x_t -> x_prev` (`prev < t`). Between consecutive steps
/// this is the usual kernel; for skipped steps the per-step quantities are
/// replaced by their `ᾱ_t / ᾱ_prev` equivalents. `z` is ignored when `prev = 0`.
pub fn ancestral_step_between(
    xt: &Matrix,
    t: usize,
    prev: usize,
    eps: &Matrix,
    schedule: &NoiseSchedule,
    z: Option<&Matrix>,
) -> Result<Matrix> {
    schedule.check_t(t)?;
    ensure!(prev < t, Contract, "ancestral step must move to an earlier time ({} -> {})", t, prev);
    let ab = schedule.alpha_bar(t);
    let (alpha, beta, var) = if prev + 1 == t {
        (schedule.alpha(t), schedule.beta(t), schedule.bar_beta(t))
    } else {
        let a = ab / schedule.alpha_bar(prev);
        let b = 1.0 - a;
        (a, b, (1.0 - schedule.alpha_bar(prev)) / (1.0 - ab) * b)
    };
    let mut out = xt.clone();
    out.axpy(-beta / (1.0 - ab).sqrt(), eps)?;
    out.scale(1.0 / alpha.sqrt());
    if prev > 0 {
        if let Some(z) = z {
            out.axpy(var.sqrt(), z)?;
        }
    }
    Ok(out)
}

/// `x_{t-1} = (x_t - β_t / sqrt(1 - ᾱ_t) ε_θ) / sqrt(α_t) + sqrt(β̄_t) z`.
pub fn ancestral_step(
    xt: &Matrix,
    t: usize,
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    z: &Matrix,
) -> Result<Matrix> {
    let eps = model.predict(xt, t)?;
    ancestral_step_between(xt, t, t - 1, &eps, schedule, Some(z))
}

/// Re-noise the Tweedie estimate deterministically: `sqrt(ᾱ_to) x̂0 + sqrt(1 - ᾱ_to) ε`.
pub fn deterministic_step_with(
    xt: &Matrix,
    t_from: usize,
    t_to: usize,
    eps: &Matrix,
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    schedule.check_t(t_from)?;
    ensure!(t_to < t_from, Contract, "deterministic step must move to an earlier time ({} -> {})", t_from, t_to);
    let x0 = tweedie_x0_with(xt, eps, schedule.alpha_bar(t_from))?;
    if t_to == 0 {
        return Ok(x0);
    }
    let ab = schedule.alpha_bar(t_to);
    let mut out = x0.scaled(ab.sqrt());
    out.axpy((1.0 - ab).sqrt(), eps)?;
    Ok(out)
}

pub fn deterministic_step(
    xt: &Matrix,
    t_from: usize,
    t_to: usize,
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
) -> Result<Matrix> {
    let eps = model.predict(xt, t_from)?;
    deterministic_step_with(xt, t_from, t_to, &eps, schedule)
}

/// Called after every unguided update; may modify `x_prev` in place.
pub trait StepHook {
    fn after_step(&mut self, index: usize, t: usize, prev: usize, x_t: &Matrix, x_prev: &mut Matrix) -> Result<()>;
}

/// Draws `x_N ~ N(0, I)` from the config seed and runs the chain.
pub fn sample(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    batch_size: usize,
    hook: Option<&mut dyn StepHook>,
) -> Result<Matrix> {
    let mut rng = rng::stream(config.seed, streams::SAMPLE);
    let x_n = rng::normal_matrix(&mut rng, batch_size, model.data_dim());
    run_chain(model, schedule, config, x_n, &mut rng, hook)
}

/// Runs the chain from a given `x_N`; `rng` feeds the ancestral noise.
pub fn run_chain(
    model: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    config: &SamplerConfig,
    x_n: Matrix,
    rng: &mut Rng,
    mut hook: Option<&mut dyn StepHook>,
) -> Result<Matrix> {
    ensure!(
        config.timesteps.first() == Some(&schedule.steps()),
        Config,
        "sampler timesteps must start at N = {}",
        schedule.steps()
    );
    ensure!(x_n.cols() == model.data_dim(), Contract, "initial noise has {} columns, model expects {}", x_n.cols(), model.data_dim());
    if x_n.rows() == 0 {
        return Ok(x_n);
    }
    let mut x = x_n;
    for (index, &t) in config.timesteps.iter().enumerate() {
        let prev = config.next_t(index);
        let eps = model.predict(&x, t)?;
        let mut next = match config.kind {
            SamplerKind::Ancestral => {
                let z = if prev > 0 { Some(rng::normal_matrix(rng, x.rows(), x.cols())) } else { None };
                ancestral_step_between(&x, t, prev, &eps, schedule, z.as_ref())?
            }
            SamplerKind::Deterministic => deterministic_step_with(&x, t, prev, &eps, schedule)?,
        };
        if let Some(h) = hook.as_deref_mut() {
            h.after_step(index, t, prev, &x, &mut next)?;
        }
        if let Some(row) = next.first_non_finite_row() {
            return Err(MgsError::numeric(format!("sample {row} became non-finite at t = {t}")));
        }
        x = next;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::GaussianOracle;

    struct Zero(usize);

    impl NoisePredictor for Zero {
        fn data_dim(&self) -> usize {
            self.0
        }
        fn predict(&self, x: &Matrix, _t: usize) -> Result<Matrix> {
            Ok(Matrix::zeros(x.rows(), x.cols()))
        }
        fn input_vjp(&self, x: &Matrix, _t: usize, _u: &Matrix) -> Result<Matrix> {
            Ok(Matrix::zeros(x.rows(), x.cols()))
        }
    }

    struct Noop;

    impl StepHook for Noop {
        fn after_step(&mut self, _: usize, _: usize, _: usize, _: &Matrix, _: &mut Matrix) -> Result<()> {
            Ok(())
        }
    }

    #[test]
    fn subsequences_are_pinned_and_decreasing() {
        assert_eq!(evenly_spaced(1000, 2).unwrap(), vec![1000, 1]);
        assert_eq!(evenly_spaced(10, 10).unwrap(), (1..=10).rev().collect::<Vec<_>>());
        for s in [50, 100, 1000] {
            let ts = evenly_spaced(1000, s).unwrap();
            assert_eq!(ts.len(), s);
            assert_eq!((ts[0], ts[s - 1]), (1000, 1));
            assert!(ts.windows(2).all(|w| w[0] > w[1]));
        }
        assert!(evenly_spaced(1000, 1).is_err());
        assert!(evenly_spaced(1000, 1001).is_err());
    }

    #[test]
    fn zero_model_ancestral_step_rescales() {
        let s = NoiseSchedule::linear(100, 1e-3, 0.05).unwrap();
        let x = Matrix::from_rows(&[[1.0, -3.0]]).unwrap();
        let y = ancestral_step(&x, 50, &Zero(2), &s, &Matrix::zeros(1, 2)).unwrap();
        assert_eq!(y, x.scaled(1.0 / s.alpha(50).sqrt()));
    }

    #[test]
    fn zero_model_deterministic_step_rescales() {
        let s = NoiseSchedule::linear(100, 1e-3, 0.05).unwrap();
        let x = Matrix::from_rows(&[[1.0, -3.0]]).unwrap();
        let y = deterministic_step(&x, 80, 20, &Zero(2), &s).unwrap();
        let k = (s.alpha_bar(20) / s.alpha_bar(80)).sqrt();
        assert!((y[(0, 0)] - k).abs() < 1e-14 && (y[(0, 1)] + 3.0 * k).abs() < 1e-13);
    }

    #[test]
    fn skipped_step_equals_consecutive_kernel_when_adjacent() {
        let s = NoiseSchedule::linear(100, 1e-3, 0.05).unwrap();
        let mut r = rng::seeded(2);
        let x = rng::normal_matrix(&mut r, 3, 2);
        let e = rng::normal_matrix(&mut r, 3, 2);
        let z = rng::normal_matrix(&mut r, 3, 2);
        let a = ancestral_step_between(&x, 40, 39, &e, &s, Some(&z)).unwrap();
        let mut b = x.clone();
        b.axpy(-s.beta(40) / (1.0 - s.alpha_bar(40)).sqrt(), &e).unwrap();
        b.scale(1.0 / s.alpha(40).sqrt());
        b.axpy(s.bar_beta(40).sqrt(), &z).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_batch_is_empty() {
        let s = NoiseSchedule::linear(20, 1e-3, 0.05).unwrap();
        let cfg = SamplerConfig::new(SamplerKind::Ancestral, 20, 20, 1).unwrap();
        let out = sample(&Zero(3), &s, &cfg, 0, None).unwrap();
        assert_eq!(out.shape(), (0, 3));
    }

    #[test]
    fn deterministic_runs_repeat_bit_for_bit_and_hook_noop_is_invisible() {
        let s = NoiseSchedule::linear(200, 1e-4, 0.02).unwrap();
        let o = GaussianOracle::new(vec![1.0, 0.0], 0.3, s.clone()).unwrap();
        for kind in [SamplerKind::Deterministic, SamplerKind::Ancestral] {
            let cfg = SamplerConfig::new(kind, 40, 200, 9).unwrap();
            let a = sample(&o, &s, &cfg, 16, None).unwrap();
            let b = sample(&o, &s, &cfg, 16, None).unwrap();
            let mut noop = Noop;
            let c = sample(&o, &s, &cfg, 16, Some(&mut noop)).unwrap();
            assert_eq!(a, b);
            assert_eq!(a, c);
        }
    }

    #[test]
    fn deterministic_chain_depends_only_on_initial_noise() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let o = GaussianOracle::new(vec![0.5], 0.7, s.clone()).unwrap();
        let x_n = rng::normal_matrix(&mut rng::seeded(1), 8, 1);
        let c1 = SamplerConfig::new(SamplerKind::Deterministic, 10, 100, 1).unwrap();
        let c2 = SamplerConfig::new(SamplerKind::Deterministic, 10, 100, 999).unwrap();
        let a = run_chain(&o, &s, &c1, x_n.clone(), &mut rng::seeded(3), None).unwrap();
        let b = run_chain(&o, &s, &c2, x_n, &mut rng::seeded(4), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn few_step_deterministic_agrees_with_full_chain_on_gaussian() {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let mu = [2.0, -1.0];
        let o = GaussianOracle::new(mu.to_vec(), 0.5, s.clone()).unwrap();
        let full = SamplerConfig::new(SamplerKind::Deterministic, 1000, 1000, 5).unwrap();
        let few = SamplerConfig::new(SamplerKind::Deterministic, 50, 1000, 5).unwrap();
        let a = sample(&o, &s, &full, 4000, None).unwrap().col_means();
        let b = sample(&o, &s, &few, 4000, None).unwrap().col_means();
        for k in 0..2 {
            assert!((a[k] - b[k]).abs() / mu[k].abs() < 0.03, "{a:?} vs {b:?}");
            assert!((b[k] - mu[k]).abs() / mu[k].abs() < 0.03, "{b:?}");
        }
    }
}
