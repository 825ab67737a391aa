use crate::error::{ensure, Result};
use crate::linalg::Matrix;

/// Frequency base: pair `i` of a `dim`-wide embedding oscillates at
/// `ω_i = TIME_EMBED_BASE^(-2i/dim)`, so the first pair always has `ω_0 = 1`.
pub const TIME_EMBED_BASE: f64 = 10_000.0;

/// Sinusoidal embedding `[sin(ω_0 t), cos(ω_0 t), sin(ω_1 t), cos(ω_1 t), ...]`
/// of a 1-based timestep. Its norm is exactly `sqrt(dim / 2)`.
pub fn time_embed(t: usize, dim: usize) -> Result<Vec<f64>> {
    ensure!(t >= 1, Contract, "timesteps are 1-based, got t = 0");
    ensure!(dim > 0 && dim.is_multiple_of(2), Contract, "time embedding dim must be positive and even, got {}", dim);
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let omega = TIME_EMBED_BASE.powf(-2.0 * i as f64 / dim as f64);
        let a = omega * t as f64;
        out.push(a.sin());
        out.push(a.cos());
    }
    Ok(out)
}

/// One embedding row per entry of `ts`.
pub fn time_embed_matrix(ts: &[usize], dim: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(ts.len(), dim);
    for (r, &t) in ts.iter().enumerate() {
        m.row_mut(r).copy_from_slice(&time_embed(t, dim)?);
    }
    Ok(m)
}
