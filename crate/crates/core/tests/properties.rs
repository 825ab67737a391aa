//! Property tests for the documented invariants.
//!
//! Random instances come from the crate's own seeded generator; proptest
//! drives the seeds and sizes so failures shrink to small reproducible cases.

use mgs_core::config::RunConfig;
use mgs_core::diffusion::{q_sample, tweedie_x0, EpsModel, NoiseSchedule};
use mgs_core::eval;
use mgs_core::guidance::{guidance_gradient, GuidanceConfig};
use mgs_core::linalg::Matrix;
use mgs_core::manifold::{lm_objective, prior_relations, EmbedderF, LmConfig, ManifoldModel, Membership, ObjectiveForm, RelationNetG};
use mgs_core::nn::{Activation, FeedforwardNet};
use mgs_core::rng::{self, seeded};
use proptest::prelude::*;

fn points(seed: u64, n: usize, d: usize) -> Matrix {
    rng::normal_matrix(&mut seeded(seed), n, d)
}

fn simplex(seed: u64, k: usize) -> Vec<f64> {
    let mut r = seeded(seed);
    let w: Vec<f64> = (0..k).map(|_| rng::uniform(&mut r, 0.0, 1.0) + 1e-3).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Householder reflection `I - 2 v v^T / |v|^2`, an orthogonal matrix.
fn reflection(seed: u64, d: usize) -> Matrix {
    let v = points(seed, 1, d);
    let nv = v.frobenius_sq();
    let mut q = Matrix::identity(d);
    for i in 0..d {
        for j in 0..d {
            q.row_mut(i)[j] -= 2.0 * v.row(0)[i] * v.row(0)[j] / nv;
        }
    }
    q
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn schedule_invariants(steps in 2usize..400, lo in 1e-5f64..1e-2, span in 0.0f64..0.3) {
        let s = NoiseSchedule::linear(steps, lo, lo + span).unwrap();
        for t in 1..=steps {
            prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            prop_assert_eq!(s.alpha(t), 1.0 - s.beta(t));
            let prev = if t == 1 { 1.0 } else { s.alpha_bar(t - 1) };
            prop_assert!(s.alpha_bar(t) < prev);
            prop_assert!((s.alpha_bar(t) - prev * s.alpha(t)).abs() <= 1e-12);
            if t > 1 {
                let expect = (1.0 - prev) / (1.0 - s.alpha_bar(t)) * s.beta(t);
                prop_assert!((s.bar_beta(t) - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn noising_then_denoising_is_identity(seed in any::<u64>(), t in 1usize..=1000, n in 1usize..20, d in 1usize..6) {
        let s = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let x0 = points(seed, n, d);
        let eps = points(seed ^ 1, n, d);
        let back = tweedie_x0(&q_sample(&x0, t, &eps, &s).unwrap(), &eps, t, &s).unwrap();
        // the round trip divides by sqrt(abar_t), so roundoff grows with t
        let tol = 1e-12 / s.alpha_bar(t).sqrt();
        prop_assert!(back.sub(&x0).unwrap().max_abs() <= tol);
    }

    #[test]
    fn forward_is_pure_and_gradients_add(seed in any::<u64>(), n in 1usize..10) {
        let mut r = seeded(seed);
        let net = FeedforwardNet::mlp(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut r).unwrap();
        let x = rng::normal_matrix(&mut r, n, 3);
        prop_assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
        let da = rng::normal_matrix(&mut r, n, 2);
        let db = rng::normal_matrix(&mut r, n, 2);
        let (ga, _) = net.backward(net.forward(&x).unwrap().1, &da).unwrap();
        let (gb, _) = net.backward(net.forward(&x).unwrap().1, &db).unwrap();
        let (gs, _) = net.backward(net.forward(&x).unwrap().1, &da.add(&db).unwrap()).unwrap();
        for ((a, b), s) in ga.flatten().iter().zip(gb.flatten()).zip(gs.flatten()) {
            prop_assert!(rel_close(a + b, s, 1e-12));
        }
    }

    #[test]
    fn prior_relations_shape_and_shift_invariance(seed in any::<u64>(), n in 2usize..20, d in 1usize..6, tau in 0.1f64..5.0) {
        let z = points(seed, n, d);
        let r = prior_relations(&z, tau).unwrap();
        let shift = points(seed ^ 7, 1, d);
        let moved = Matrix::from_rows(&z.row_iter().map(|row| row.iter().zip(shift.row(0)).map(|(a, b)| a + 3.0 * b).collect::<Vec<_>>()).collect::<Vec<_>>()).unwrap();
        let r2 = prior_relations(&moved, tau).unwrap();
        for i in 0..n {
            prop_assert_eq!(r.get(i, i), 1.0);
            for j in 0..n {
                prop_assert_eq!(r.get(i, j), r.get(j, i));
                prop_assert!(r.get(i, j) >= 0.0 && r.get(i, j) <= 1.0);
                prop_assert!((r.get(i, j) - r2.get(i, j)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn rate_objective_is_rotation_invariant(seed in any::<u64>(), n in 2usize..16, d in 2usize..7, logdet in any::<bool>(), eps_sq in 0.05f64..2.0) {
        let z = points(seed, n, d);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let c = Membership::from_labels(&labels);
        let cfg = LmConfig { form: if logdet { ObjectiveForm::Logdet } else { ObjectiveForm::Trace }, eps_sq };
        let rotated = z.matmul(&reflection(seed ^ 3, d)).unwrap();
        let (a, _) = lm_objective(&z, &c, &cfg).unwrap();
        let (b, _) = lm_objective(&rotated, &c, &cfg).unwrap();
        prop_assert!(rel_close(a, b, 1e-9), "{} vs {}", a, b);
    }

    #[test]
    fn single_group_logdet_is_zero(seed in any::<u64>(), n in 1usize..16, d in 1usize..7, eps_sq in 0.05f64..2.0) {
        let z = points(seed, n, d);
        let (v, _) = lm_objective(&z, &Membership::all_ones(n), &LmConfig { form: ObjectiveForm::Logdet, eps_sq }).unwrap();
        prop_assert!(v.abs() <= 1e-10, "{}", v);
    }

    #[test]
    fn guidance_gradient_is_linear_in_lambda(seed in any::<u64>(), n in 2usize..8, t in 1usize..=20, lambda in 0.01f64..5.0) {
        let mut r = seeded(seed);
        let s = NoiseSchedule::linear(20, 1e-3, 0.2).unwrap();
        let eps = EpsModel::init(2, 4, &[6], Activation::Tanh, &mut r).unwrap();
        let f = EmbedderF::init(2, &[6], 3, Activation::Tanh, true, &mut r).unwrap();
        let h = ManifoldModel::new(f, RelationNetG::init(3, 6, 3, 1.0, &mut r).unwrap()).unwrap();
        let m = h.relations(&rng::normal_matrix(&mut r, n, 2)).unwrap();
        let xt = rng::normal_matrix(&mut r, n, 2);
        let cfg = |l: f64| GuidanceConfig { lambda: l, batch_size: n, ..GuidanceConfig::default() };
        let one = guidance_gradient(&xt, t, &eps, &h, &m, &s, &cfg(lambda)).unwrap().gradient;
        let two = guidance_gradient(&xt, t, &eps, &h, &m, &s, &cfg(2.0 * lambda)).unwrap().gradient;
        prop_assert_eq!(one.scaled(2.0), two);
    }

    #[test]
    fn tv_is_a_metric(seed in any::<u64>(), k in 1usize..10) {
        let (p, q, w) = (simplex(seed, k), simplex(seed ^ 1, k), simplex(seed ^ 2, k));
        let pq = eval::tv_distance(&p, &q).unwrap();
        prop_assert_eq!(pq, eval::tv_distance(&q, &p).unwrap());
        prop_assert_eq!(eval::tv_distance(&p, &p).unwrap(), 0.0);
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert!(pq <= eval::tv_distance(&p, &w).unwrap() + eval::tv_distance(&w, &q).unwrap() + 1e-15);
        if p != q {
            prop_assert!(pq > 0.0);
        }
    }

    #[test]
    fn bias_report_proportions_sum_to_one(seed in any::<u64>(), k in 1usize..10) {
        let rep = eval::bias_report(&simplex(seed, k), &simplex(seed ^ 5, k)).unwrap();
        for v in [&rep.generated, &rep.training, &rep.uniform] {
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        prop_assert!((0.0..=1.0).contains(&rep.tv_uniform) && (0.0..=1.0).contains(&rep.tv_training));
    }

    #[test]
    fn counts_are_monotone_in_radius(seed in any::<u64>(), n in 1usize..60, m in 0usize..60, r0 in 0.01f64..2.0, grow in 0.0f64..2.0) {
        let (real, gen) = (points(seed, n, 2), points(seed ^ 9, m, 2));
        let small = eval::neighbor_counts(&real, &gen, r0).unwrap();
        let large = eval::neighbor_counts(&real, &gen, r0 + grow).unwrap();
        prop_assert!(small.iter().zip(&large).all(|(a, b)| a <= b));
        let hist = eval::neighbor_histogram(&real, &gen, r0, 1.0).unwrap();
        prop_assert_eq!(hist.counts.len(), n);
        prop_assert_eq!(hist.histogram.iter().sum::<usize>(), n);
    }

    #[test]
    fn count_total_ignores_order_and_rotation(seed in any::<u64>(), n in 1usize..50, m in 1usize..50, radius in 0.05f64..2.0) {
        let (real, gen) = (points(seed, n, 3), points(seed ^ 4, m, 3));
        let total = |a: &Matrix, b: &Matrix| eval::neighbor_counts(a, b, radius).unwrap().iter().sum::<usize>();
        let base = total(&real, &gen);
        let mut r = seeded(seed ^ 8);
        let perm_real: Vec<usize> = rng::choose_distinct(&mut r, n, n);
        let perm_gen: Vec<usize> = rng::choose_distinct(&mut r, m, m);
        prop_assert_eq!(total(&real.select_rows(&perm_real), &gen.select_rows(&perm_gen)), base);
        let q = reflection(seed ^ 6, 3);
        let (rr, rg) = (real.matmul(&q).unwrap(), gen.matmul(&q).unwrap());
        // a pair sitting within roundoff of the radius may flip; allow for that explicitly
        let near = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| {
            let d: f64 = real.row(i).iter().zip(gen.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            (d - radius).abs() < 1e-12
        }).count();
        prop_assert!(total(&rr, &rg).abs_diff(base) <= near);
    }

    #[test]
    fn distances_nonnegative_and_zero_on_identical(seed in any::<u64>(), n in 2usize..60, d in 1usize..4) {
        let (a, b) = (points(seed, n, d), points(seed ^ 2, n + 3, d));
        let same = eval::distance_report(&a, &a, 16, seed).unwrap();
        prop_assert_eq!(same.sliced_wasserstein, 0.0);
        prop_assert!(same.energy.abs() <= 1e-12);
        let diff = eval::distance_report(&a, &b, 16, seed).unwrap();
        prop_assert!(diff.sliced_wasserstein >= 0.0 && diff.energy >= 0.0);
    }

    #[test]
    fn config_hash_tracks_values_not_layout(seed in any::<u64>(), lambda in 0.0f64..10.0) {
        let mut cfg = RunConfig { seed, ..RunConfig::default() };
        cfg.set("guidance.lambda", &lambda.to_string()).unwrap();
        // reversed order with comments parses to the same configuration
        let mut text = String::from("# shuffled\n");
        for line in cfg.canonical().lines().rev() {
            text.push_str(line);
            text.push_str("  # note\n\n");
        }
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
        let mut other = cfg.clone();
        other.set("guidance.lambda", &(lambda + 0.5).to_string()).unwrap();
        prop_assert_ne!(other.hash(), cfg.hash());
    }
}
