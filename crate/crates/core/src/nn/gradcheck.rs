use crate::error::{ensure, MgsError, Result};

/// One-sided slopes differing by more than this (relative to
/// `max(1, |central slope|)`) mark a coordinate as sitting on a kink.
pub const KINK_TOLERANCE: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max_i |g_analytic,i - g_fd,i| / max(1e-12, |g_fd,i|)` over checked coordinates.
    pub max_rel_error: f64,
    pub argmax: usize,
    pub step: f64,
    /// Coordinates skipped because the loss is not differentiable there.
    pub excluded: Vec<usize>,
    /// Coordinates where both gradients are below the central-difference
    /// roundoff floor, i.e. indistinguishable from zero.
    pub below_noise: Vec<usize>,
}

/// Roundoff of a central difference is about `ε_mach |f| / h`; values under
/// this multiple of it carry no information.
pub const NOISE_MULTIPLE: f64 = 64.0;

/// Compares `analytic` against central differences of `loss` at `point`.
pub fn finite_diff_check<F>(mut loss: F, point: &[f64], analytic: &[f64], step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    ensure!(
        point.len() == analytic.len(),
        Contract,
        "gradient has {} entries, point has {}",
        analytic.len(),
        point.len()
    );
    ensure!(step > 0.0, Contract, "finite-difference step must be positive");
    let mut eval = |x: &[f64]| -> Result<f64> {
        let v = loss(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(MgsError::numeric("finite-difference check hit a non-finite loss"))
        }
    };
    let f0 = eval(point)?;
    let mut x = point.to_vec();
    let noise = NOISE_MULTIPLE * f64::EPSILON * f0.abs().max(1.0) / step;
    let mut report = GradCheckReport { max_rel_error: 0.0, argmax: 0, step, excluded: Vec::new(), below_noise: Vec::new() };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = eval(&x)?;
        x[i] = orig - step;
        let fm = eval(&x)?;
        x[i] = orig;
        let central = (fp - fm) / (2.0 * step);
        let forward = (fp - f0) / step;
        let backward = (f0 - fm) / step;
        if (forward - backward).abs() > KINK_TOLERANCE * central.abs().max(1.0) {
            report.excluded.push(i);
            continue;
        }
        if central.abs() <= noise && analytic[i].abs() <= noise {
            report.below_noise.push(i);
            continue;
        }
        let rel = (analytic[i] - central).abs() / central.abs().max(1e-12);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.argmax = i;
        }
    }
    Ok(report)
}
