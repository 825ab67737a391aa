use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use mgs_core::checkpoint;
use mgs_core::diffusion::{sample, EpsModel, NoiseSchedule, SamplerConfig, SamplerKind};
use mgs_core::eval;
use mgs_core::linalg::Matrix;
use mgs_core::manifold::{EmbedderF, ManifoldModel, RelationNetG};
use mgs_core::nn::Activation;
use mgs_core::rng::{normal_matrix, seeded};
use mgs_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    eps_path: CString,
    manifold_path: CString,
    model: EpsModel,
    schedule: NoiseSchedule,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = seeded(5);
    let model = EpsModel::init(2, 4, &[16, 16], Activation::Relu, &mut rng).unwrap();
    let schedule = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let f = EmbedderF::init(2, &[8], 3, Activation::Tanh, true, &mut rng).unwrap();
    let g = RelationNetG::init(3, 8, 3, 1.0, &mut rng).unwrap();
    let h = ManifoldModel::new(f, g).unwrap();
    let eps = dir.path().join("eps.bin");
    let man = dir.path().join("manifold.bin");
    checkpoint::save_eps(&eps, &model, &schedule).unwrap();
    checkpoint::save_manifold(&man, &h).unwrap();
    Fixture {
        eps_path: CString::new(eps.to_str().unwrap()).unwrap(),
        manifold_path: CString::new(man.to_str().unwrap()).unwrap(),
        _dir: dir,
        model,
        schedule,
    }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(mgs_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn sampling_through_the_handle_matches_the_library() {
    let fx = fixture();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { mgs_eps_load(fx.eps_path.as_ptr(), &mut h) }, MgsStatus::Ok);
    assert_eq!(unsafe { mgs_eps_data_dim(h) }, 2);
    assert_eq!(unsafe { mgs_eps_schedule_steps(h) }, 50);
    let kind = CString::new("ancestral").unwrap();
    let mut out = vec![0.0; 7 * 2];
    assert_eq!(unsafe { mgs_sample(h, kind.as_ptr(), 10, 42, 7, out.as_mut_ptr()) }, MgsStatus::Ok);
    let cfg = SamplerConfig::new(SamplerKind::Ancestral, 10, 50, 42).unwrap();
    let direct = sample(&fx.model, &fx.schedule, &cfg, 7, None).unwrap();
    assert_eq!(out, direct.data());
    unsafe { mgs_eps_free(h) };
}

#[test]
fn zero_lambda_guidance_equals_batched_unguided() {
    let fx = fixture();
    let (mut e, mut m) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(mgs_eps_load(fx.eps_path.as_ptr(), &mut e), MgsStatus::Ok);
        assert_eq!(mgs_manifold_load(fx.manifold_path.as_ptr(), &mut m), MgsStatus::Ok);
    }
    let reference = normal_matrix(&mut seeded(9), 40, 2);
    let kind = CString::new("deterministic").unwrap();
    let mut plain = vec![0.0; 20 * 2];
    let mut zero = vec![0.0; 20 * 2];
    let mut guided = vec![0.0; 20 * 2];
    let params = MgsGuidanceParams { lambda: 0.0, guidance_steps: 5, batch_size: 8, balanced: 1, skip_eps_jacobian: 0 };
    unsafe {
        assert_eq!(mgs_sample_batches(e, kind.as_ptr(), 10, 3, 8, 20, plain.as_mut_ptr()), MgsStatus::Ok);
        assert_eq!(mgs_guided_sample(e, m, reference.data().as_ptr(), 40, params, kind.as_ptr(), 10, 3, 20, zero.as_mut_ptr()), MgsStatus::Ok);
        let on = MgsGuidanceParams { lambda: 0.5, ..params };
        assert_eq!(mgs_guided_sample(e, m, reference.data().as_ptr(), 40, on, kind.as_ptr(), 10, 3, 20, guided.as_mut_ptr()), MgsStatus::Ok);
        mgs_eps_free(e);
        mgs_manifold_free(m);
    }
    assert_eq!(plain, zero);
    assert_ne!(plain, guided);
    assert!(guided.iter().all(|v| v.is_finite()));
}

#[test]
fn metrics_match_the_library() {
    let a = normal_matrix(&mut seeded(1), 30, 3);
    let b = normal_matrix(&mut seeded(2), 20, 3);
    let mut v = 0.0;
    unsafe {
        assert_eq!(mgs_sliced_wasserstein(a.data().as_ptr(), 30, b.data().as_ptr(), 20, 3, 16, 7, &mut v), MgsStatus::Ok);
        assert_eq!(v, eval::sliced_wasserstein(&a, &b, 16, 7).unwrap());
        assert_eq!(mgs_energy_distance(a.data().as_ptr(), 30, b.data().as_ptr(), 20, 3, &mut v), MgsStatus::Ok);
        assert_eq!(v, eval::energy_distance(&a, &b).unwrap());
        assert_eq!(mgs_avg_nn_distance(a.data().as_ptr(), 30, 3, &mut v), MgsStatus::Ok);
        assert_eq!(v, eval::avg_nn_distance(&a).unwrap());
        let mut k = vec![0usize; 30];
        assert_eq!(mgs_neighbor_counts(a.data().as_ptr(), 30, b.data().as_ptr(), 20, 3, 1.5, k.as_mut_ptr()), MgsStatus::Ok);
        assert_eq!(k, eval::neighbor_counts(&a, &b, 1.5).unwrap());
        assert_eq!(mgs_neighbor_counts(a.data().as_ptr(), 30, ptr::null(), 0, 3, 1.5, k.as_mut_ptr()), MgsStatus::Ok);
        assert!(k.iter().all(|&c| c == 0));
    }
}

#[test]
fn failures_report_status_and_message() {
    let fx = fixture();
    let mut h = ptr::null_mut();
    let missing = CString::new("/nonexistent/eps.bin").unwrap();
    assert_eq!(unsafe { mgs_eps_load(missing.as_ptr(), &mut h) }, MgsStatus::Io);
    assert!(h.is_null());
    assert!(!last_error().is_empty());
    // a manifold checkpoint is not a noise model
    assert_eq!(unsafe { mgs_eps_load(fx.manifold_path.as_ptr(), &mut h) }, MgsStatus::Io);
    assert!(last_error().contains("format"), "{}", last_error());

    assert_eq!(unsafe { mgs_eps_load(fx.eps_path.as_ptr(), &mut h) }, MgsStatus::Ok);
    let bad = CString::new("ddim").unwrap();
    let mut out = vec![0.0; 2];
    assert_eq!(unsafe { mgs_sample(h, bad.as_ptr(), 10, 0, 1, out.as_mut_ptr()) }, MgsStatus::Config);
    let kind = CString::new("ancestral").unwrap();
    assert_eq!(unsafe { mgs_sample(h, kind.as_ptr(), 10, 0, 1, ptr::null_mut()) }, MgsStatus::InvalidArgument);
    assert_eq!(unsafe { mgs_sample(h, kind.as_ptr(), 99, 0, 1, out.as_mut_ptr()) }, MgsStatus::Config);
    unsafe { mgs_eps_free(h) };

    let a = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
    let mut v = 0.0;
    // a single sample has no nearest neighbour
    assert_eq!(unsafe { mgs_avg_nn_distance(a.data().as_ptr(), 1, 2, &mut v) }, MgsStatus::Numeric);
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/mgs.h");
    assert!(std::path::Path::new(header).exists(), "missing generated header");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ MgsEpsModel *m = 0; MgsGuidanceParams p = {{0}}; (void)p; \
             return mgs_eps_load(\"x\", &m) == MGS_STATUS_OK ? 0 : (int)MGS_STATUS_IO; }}\n"
        ),
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).output() {
        Ok(o) => assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr)),
        Err(e) => eprintln!("skipping: no C compiler ({cc}: {e})"),
    }
}
