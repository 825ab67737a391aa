use crate::error::{ensure, Result};
use crate::linalg::Matrix;

/// Forward-process coefficients for timesteps `1..=N`.
///
/// Accessors take the 1-based timestep; `alpha_bar(0)` is defined as 1 so the
/// `t = 1` posterior collapses onto `x0`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta_start: f64,
    beta_end: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    bar_beta: Vec<f64>,
    coef_x0: Vec<f64>,
    coef_xt: Vec<f64>,
}

impl NoiseSchedule {
    /// `β_t` linearly interpolated from `beta_start` (t = 1) to `beta_end` (t = N).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        ensure!(steps >= 2, Config, "schedule needs at least 2 steps, got {}", steps);
        ensure!(
            0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0,
            Config,
            "need 0 < beta_start <= beta_end < 1, got {} .. {}",
            beta_start,
            beta_end
        );
        let span = (steps - 1) as f64;
        let betas = (0..steps).map(|i| beta_start + (beta_end - beta_start) * i as f64 / span).collect();
        let mut s = Self::from_betas(betas)?;
        s.beta_start = beta_start;
        s.beta_end = beta_end;
        Ok(s)
    }

    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        ensure!(!beta.is_empty(), Config, "empty beta schedule");
        ensure!(beta.iter().all(|&b| b > 0.0 && b < 1.0), Config, "every beta must lie in (0, 1)");
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let mut bar_beta = Vec::with_capacity(beta.len());
        let mut coef_x0 = Vec::with_capacity(beta.len());
        let mut coef_xt = Vec::with_capacity(beta.len());
        for i in 0..beta.len() {
            let ab_prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            let denom = 1.0 - alpha_bar[i];
            bar_beta.push((1.0 - ab_prev) / denom * beta[i]);
            coef_x0.push(ab_prev.sqrt() * beta[i] / denom);
            coef_xt.push(alpha[i].sqrt() * (1.0 - ab_prev) / denom);
        }
        Ok(NoiseSchedule {
            beta_start: beta[0],
            beta_end: beta[beta.len() - 1],
            beta,
            alpha,
            alpha_bar,
            bar_beta,
            coef_x0,
            coef_xt,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        ensure!(t >= 1 && t <= self.steps(), Contract, "timestep {} outside [1, {}]", t, self.steps());
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Posterior variance `β̄_t`.
    pub fn bar_beta(&self, t: usize) -> f64 {
        self.bar_beta[t - 1]
    }

    /// Posterior-mean weight on `x0`.
    pub fn coef_x0(&self, t: usize) -> f64 {
        self.coef_x0[t - 1]
    }

    /// Posterior-mean weight on `x_t`.
    pub fn coef_xt(&self, t: usize) -> f64 {
        self.coef_xt[t - 1]
    }

    /// Loss weight `η_t = β_t² / (α_t (1 - ᾱ_t))`.
    pub fn eta(&self, t: usize) -> f64 {
        let b = self.beta(t);
        b * b / (self.alpha(t) * (1.0 - self.alpha_bar(t)))
    }
}

/// `x_t = sqrt(ᾱ) x0 + sqrt(1 - ᾱ) ε` for an explicit `ᾱ`.
pub fn q_sample_with(x0: &Matrix, alpha_bar: f64, eps: &Matrix) -> Result<Matrix> {
    let mut xt = x0.scaled(alpha_bar.sqrt());
    xt.axpy((1.0 - alpha_bar).sqrt(), eps)?;
    Ok(xt)
}

pub fn q_sample(x0: &Matrix, t: usize, eps: &Matrix, schedule: &NoiseSchedule) -> Result<Matrix> {
    schedule.check_t(t)?;
    q_sample_with(x0, schedule.alpha_bar(t), eps)
}

/// Forward-noises row `i` of `x0` at timestep `ts[i]`.
pub fn q_sample_rows(x0: &Matrix, ts: &[usize], eps: &Matrix, schedule: &NoiseSchedule) -> Result<Matrix> {
    ensure!(ts.len() == x0.rows(), Contract, "{} timesteps for {} rows", ts.len(), x0.rows());
    ensure!(eps.shape() == x0.shape(), Contract, "noise shape does not match data");
    let mut xt = Matrix::zeros(x0.rows(), x0.cols());
    for (r, &t) in ts.iter().enumerate() {
        schedule.check_t(t)?;
        let (a, b) = (schedule.alpha_bar(t).sqrt(), (1.0 - schedule.alpha_bar(t)).sqrt());
        for c in 0..x0.cols() {
            xt[(r, c)] = a * x0[(r, c)] + b * eps[(r, c)];
        }
    }
    Ok(xt)
}

/// Mean and variance of `q(x_{t-1} | x_t, x0)`.
pub fn posterior_params(x0: &Matrix, xt: &Matrix, t: usize, schedule: &NoiseSchedule) -> Result<(Matrix, f64)> {
    schedule.check_t(t)?;
    let mut mean = x0.scaled(schedule.coef_x0(t));
    mean.axpy(schedule.coef_xt(t), xt)?;
    Ok((mean, schedule.bar_beta(t)))
}

/// `x̂0 = (x_t - sqrt(1 - ᾱ) ε̂) / sqrt(ᾱ)` for an explicit `ᾱ`.
pub fn tweedie_x0_with(xt: &Matrix, eps_hat: &Matrix, alpha_bar: f64) -> Result<Matrix> {
    let mut x0 = xt.clone();
    x0.axpy(-(1.0 - alpha_bar).sqrt(), eps_hat)?;
    x0.scale(1.0 / alpha_bar.sqrt());
    Ok(x0)
}

pub fn tweedie_x0(xt: &Matrix, eps_hat: &Matrix, t: usize, schedule: &NoiseSchedule) -> Result<Matrix> {
    schedule.check_t(t)?;
    tweedie_x0_with(xt, eps_hat, schedule.alpha_bar(t))
}
