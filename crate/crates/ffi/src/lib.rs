//! C ABI over `mgs-core`.
//!
//! Models are opaque handles created by `*_load` and released by `*_free`.
//! Every fallible call returns an [`MgsStatus`]; on failure
//! [`mgs_last_error`] holds a message for the calling thread. Matrices are
//! row-major `double` buffers with samples as rows. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mgs_core::checkpoint;
use mgs_core::diffusion::{sample, EpsModel, NoisePredictor, NoiseSchedule, SamplerConfig, SamplerKind};
use mgs_core::error::MgsError;
use mgs_core::eval;
use mgs_core::guidance::{estimate_manifold_target, sample_batches, GuidanceConfig, TargetProvenance};
use mgs_core::linalg::Matrix;
use mgs_core::manifold::ManifoldModel;
use mgs_core::rng;

/// Result of every fallible call. Values 2..=4 match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MgsStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or zero size.
    InvalidArgument = 1,
    Config = 2,
    /// Numeric failure or violated precondition.
    Numeric = 3,
    /// I/O or file-format error.
    Io = 4,
    Panic = 5,
}

/// Noise model and its schedule.
pub struct MgsEpsModel {
    model: EpsModel,
    schedule: NoiseSchedule,
}

/// Embedder `F` and relation net `g`.
pub struct MgsManifoldModel {
    model: ManifoldModel,
}

/// Guidance settings for [`mgs_guided_sample`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct MgsGuidanceParams {
    pub lambda: f64,
    /// Number of initial sampler steps that are guided.
    pub guidance_steps: usize,
    pub batch_size: usize,
    /// Nonzero: balanced target from the reference; zero: a random reference batch.
    pub balanced: u8,
    pub skip_eps_jacobian: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &MgsError) -> MgsStatus {
    match e.exit_code() {
        2 => MgsStatus::Config,
        3 => MgsStatus::Numeric,
        _ => MgsStatus::Io,
    }
}

enum Fail {
    Arg(String),
    Core(MgsError),
}

impl From<MgsError> for Fail {
    fn from(e: MgsError) -> Self {
        Fail::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MgsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MgsStatus::Ok,
        Ok(Err(Fail::Arg(m))) => {
            set_error(&m);
            MgsStatus::InvalidArgument
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            MgsStatus::Panic
        }
    }
}

fn arg(msg: &str) -> Fail {
    Fail::Arg(msg.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(arg(&format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| arg(&format!("{what} is not UTF-8")))
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, Fail> {
    if p.is_null() || rows == 0 || cols == 0 {
        return Err(arg(&format!("{what} must be a non-null, non-empty buffer")));
    }
    let data = std::slice::from_raw_parts(p, rows * cols).to_vec();
    Ok(Matrix::from_vec(rows, cols, data)?)
}

unsafe fn write_out(out: *mut f64, x: &Matrix) -> Result<(), Fail> {
    if out.is_null() {
        return Err(arg("output buffer is null"));
    }
    std::slice::from_raw_parts_mut(out, x.data().len()).copy_from_slice(x.data());
    Ok(())
}

/// Message of the last failed call on this thread (empty if none). Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mgs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a noise-model checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mgs_eps_load(path: *const c_char, out: *mut *mut MgsEpsModel) -> MgsStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        if out.is_null() {
            return Err(arg("out is null"));
        }
        let (model, schedule) = checkpoint::load_eps(Path::new(p))?;
        *out = Box::into_raw(Box::new(MgsEpsModel { model, schedule }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`mgs_eps_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mgs_eps_free(model: *mut MgsEpsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Data dimension of the model, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgs_eps_data_dim(model: *const MgsEpsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.data_dim())
}

/// Diffusion steps of the model's schedule, 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mgs_eps_schedule_steps(model: *const MgsEpsModel) -> usize {
    model.as_ref().map_or(0, |m| m.schedule.steps())
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mgs_manifold_load(path: *const c_char, out: *mut *mut MgsManifoldModel) -> MgsStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        if out.is_null() {
            return Err(arg("out is null"));
        }
        let model = checkpoint::load_manifold(Path::new(p))?;
        *out = Box::into_raw(Box::new(MgsManifoldModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`mgs_manifold_load`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn mgs_manifold_free(model: *mut MgsManifoldModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn sampler_arg(kind: *const c_char, steps: usize, total: usize, seed: u64) -> Result<SamplerConfig, Fail> {
    let kind = SamplerKind::parse(str_arg(kind, "sampler kind")?)?;
    Ok(SamplerConfig::new(kind, steps, total, seed)?)
}

/// Unguided samples: `n` rows written to `out` (`n * data_dim` doubles).
/// `kind` is "ancestral" or "deterministic".
///
/// # Safety
/// `model` must be a live handle, `kind` NUL-terminated and `out` large enough.
#[no_mangle]
pub unsafe extern "C" fn mgs_sample(
    model: *const MgsEpsModel,
    kind: *const c_char,
    steps: usize,
    seed: u64,
    n: usize,
    out: *mut f64,
) -> MgsStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| arg("model is null"))?;
        if n == 0 {
            return Err(arg("n must be positive"));
        }
        let cfg = sampler_arg(kind, steps, m.schedule.steps(), seed)?;
        let x = sample(&m.model, &m.schedule, &cfg, n, None)?;
        write_out(out, &x)
    })
}

/// Guided samples: the target relation matrix is estimated from
/// `reference` (`ref_rows x data_dim`), then `total` rows are drawn in
/// batches of `params.batch_size`. Batch noise matches [`mgs_sample_batches`]
/// with the same seed, so the two are directly comparable.
///
/// # Safety
/// Handles must be live, `reference` must hold `ref_rows * data_dim`
/// doubles and `out` room for `total * data_dim`.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mgs_guided_sample(
    eps: *const MgsEpsModel,
    manifold: *const MgsManifoldModel,
    reference: *const f64,
    ref_rows: usize,
    params: MgsGuidanceParams,
    kind: *const c_char,
    steps: usize,
    seed: u64,
    total: usize,
    out: *mut f64,
) -> MgsStatus {
    guard(|| {
        let e = eps.as_ref().ok_or_else(|| arg("eps model is null"))?;
        let h = manifold.as_ref().ok_or_else(|| arg("manifold model is null"))?;
        let reference = matrix_arg(reference, ref_rows, e.model.data_dim(), "reference")?;
        let sampler = sampler_arg(kind, steps, e.schedule.steps(), seed)?;
        let cfg = GuidanceConfig {
            lambda: params.lambda,
            guidance_steps: params.guidance_steps,
            batch_size: params.batch_size,
            skip_eps_jacobian: params.skip_eps_jacobian != 0,
            provenance: if params.balanced != 0 { TargetProvenance::BalancedReference } else { TargetProvenance::ReferenceBatch },
            ..GuidanceConfig::default()
        };
        cfg.validate(steps)?;
        let target = estimate_manifold_target(&h.model, &reference, &cfg, &mut rng::stream(seed, rng::streams::TARGET))?;
        let (x, _) = sample_batches(&e.model, Some((&h.model, &target, &cfg)), &e.schedule, &sampler, cfg.batch_size, total)?;
        write_out(out, &x)
    })
}

/// Unguided counterpart of [`mgs_guided_sample`]: `total` rows in batches of `batch_size`.
///
/// # Safety
/// `eps` must be a live handle, `kind` NUL-terminated and `out` large enough.
#[no_mangle]
pub unsafe extern "C" fn mgs_sample_batches(
    eps: *const MgsEpsModel,
    kind: *const c_char,
    steps: usize,
    seed: u64,
    batch_size: usize,
    total: usize,
    out: *mut f64,
) -> MgsStatus {
    guard(|| {
        let e = eps.as_ref().ok_or_else(|| arg("eps model is null"))?;
        let sampler = sampler_arg(kind, steps, e.schedule.steps(), seed)?;
        let (x, _) = sample_batches(&e.model, None, &e.schedule, &sampler, batch_size, total)?;
        write_out(out, &x)
    })
}

/// Sliced 2-Wasserstein distance between two point sets of dimension `dim`.
///
/// # Safety
/// `a`, `b` must hold `na * dim` and `nb * dim` doubles; `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mgs_sliced_wasserstein(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    dim: usize,
    projections: usize,
    seed: u64,
    out: *mut f64,
) -> MgsStatus {
    guard(|| {
        let (a, b) = (matrix_arg(a, na, dim, "a")?, matrix_arg(b, nb, dim, "b")?);
        let v = eval::sliced_wasserstein(&a, &b, projections, seed)?;
        *out.as_mut().ok_or_else(|| arg("out is null"))? = v;
        Ok(())
    })
}

/// Energy distance between two point sets.
///
/// # Safety
/// As for [`mgs_sliced_wasserstein`].
#[no_mangle]
pub unsafe extern "C" fn mgs_energy_distance(a: *const f64, na: usize, b: *const f64, nb: usize, dim: usize, out: *mut f64) -> MgsStatus {
    guard(|| {
        let (a, b) = (matrix_arg(a, na, dim, "a")?, matrix_arg(b, nb, dim, "b")?);
        let v = eval::energy_distance(&a, &b)?;
        *out.as_mut().ok_or_else(|| arg("out is null"))? = v;
        Ok(())
    })
}

/// Mean distance from each real sample to its nearest other sample.
///
/// # Safety
/// `real` must hold `n * dim` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mgs_avg_nn_distance(real: *const f64, n: usize, dim: usize, out: *mut f64) -> MgsStatus {
    guard(|| {
        let v = eval::avg_nn_distance(&matrix_arg(real, n, dim, "real")?)?;
        *out.as_mut().ok_or_else(|| arg("out is null"))? = v;
        Ok(())
    })
}

/// For each real sample, the number of generated samples within `radius`
/// (closed ball). `counts` receives `n_real` values.
///
/// # Safety
/// Buffers must hold `n_real * dim`, `n_gen * dim` and `n_real` elements.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn mgs_neighbor_counts(
    real: *const f64,
    n_real: usize,
    generated: *const f64,
    n_gen: usize,
    dim: usize,
    radius: f64,
    counts: *mut usize,
) -> MgsStatus {
    guard(|| {
        let real = matrix_arg(real, n_real, dim, "real")?;
        let generated = if n_gen == 0 { Matrix::zeros(0, dim) } else { matrix_arg(generated, n_gen, dim, "generated")? };
        let k = eval::neighbor_counts(&real, &generated, radius)?;
        if counts.is_null() {
            return Err(arg("counts is null"));
        }
        std::slice::from_raw_parts_mut(counts, k.len()).copy_from_slice(&k);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_arguments_are_rejected_not_dereferenced() {
        let mut out = 0.0;
        let s = unsafe { mgs_energy_distance(std::ptr::null(), 3, std::ptr::null(), 3, 2, &mut out) };
        assert_eq!(s, MgsStatus::InvalidArgument);
        let msg = unsafe { CStr::from_ptr(mgs_last_error()) }.to_str().unwrap();
        assert!(msg.contains("non-null"), "{msg}");
        assert_eq!(unsafe { mgs_eps_data_dim(std::ptr::null()) }, 0);
        unsafe { mgs_eps_free(std::ptr::null_mut()) };
    }

    #[test]
    fn core_errors_map_to_cli_codes() {
        assert_eq!(status_of(&MgsError::config("x")), MgsStatus::Config);
        assert_eq!(status_of(&MgsError::numeric("x")), MgsStatus::Numeric);
        assert_eq!(status_of(&MgsError::contract("x")), MgsStatus::Numeric);
        assert_eq!(status_of(&MgsError::format("x")), MgsStatus::Io);
    }
}
