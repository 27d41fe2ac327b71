use faer::{Col, Mat};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use w2s_core::feature_lab::*;
use w2s_core::hermite::{
    hermite_coefficient, hermite_he, information_exponent, GaussHermite, LinkFunction,
    DEFAULT_ORDER,
};
use w2s_core::linalg;
use w2s_core::linear_lab::Dataset;

fn basis(d: usize, k: usize) -> Col<f64> {
    Col::from_fn(d, |i| if i == k { 1.0 } else { 0.0 })
}

fn small_target(d: usize, e: LinkFunction, h: LinkFunction) -> MultiIndexTarget {
    MultiIndexTarget::new_unchecked_links(basis(d, 0), basis(d, 1), e, h).unwrap()
}

fn default_config(d: usize) -> FeatureTransferConfig {
    FeatureTransferConfig {
        d,
        p_t: d,
        p_s: d,
        n_t: 8 * d,
        n_s: 8 * d,
        eta_t: 1.0,
        eta_s: 1.0,
        tau: 2f64.min((d as f64).sqrt() / 4.0),
        teacher_a_scale: 2.0,
        link_e: "identity".into(),
        link_h: "he2".into(),
    }
}

fn frobenius_inner(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * b[(i, j)];
        }
    }
    s
}

#[test]
fn coefficients_of_polynomial_links() {
    let id = LinkFunction::identity();
    assert!((hermite_coefficient(&id, 1).unwrap() - 1.0).abs() < 1e-10);
    assert!(hermite_coefficient(&id, 0).unwrap().abs() < 1e-10);
    assert!(hermite_coefficient(&id, 2).unwrap().abs() < 1e-10);

    let h2 = LinkFunction::hermite(2);
    for k in 0..=8 {
        let expected = if k == 2 { 1.0 } else { 0.0 };
        assert!(
            (hermite_coefficient(&h2, k).unwrap() - expected).abs() < 1e-10,
            "k={k}"
        );
    }
}

#[test]
fn tanh_first_coefficient_matches_monte_carlo() {
    let quad = hermite_coefficient(&LinkFunction::tanh(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000_000;
    let mc: f64 = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * z.tanh()
        })
        .sum::<f64>()
        / n as f64;
    assert!((quad - mc).abs() < 1e-3, "quadrature {quad} vs MC {mc}");
}

#[test]
fn hermite_orthogonality_under_quadrature() {
    let rule = GaussHermite::new(DEFAULT_ORDER).unwrap();
    let mut fact = 1.0;
    for j in 0..=8usize {
        if j > 0 {
            fact *= j as f64;
        }
        for k in 0..=8usize {
            let v = rule.expect(|x| hermite_he(j, x) * hermite_he(k, x));
            let expected = if j == k { fact } else { 0.0 };
            assert!((v - expected).abs() < 1e-8, "({j}, {k}): {v}");
        }
    }
}

#[test]
fn information_exponents() {
    for k in 1..=3 {
        assert_eq!(
            information_exponent(&LinkFunction::hermite(k), 30, 1e-8).unwrap(),
            k
        );
    }
    let mixed = LinkFunction::new("perturbed", |z| z + 0.01 * (z * z - 1.0));
    assert_eq!(information_exponent(&mixed, 30, 1e-4).unwrap(), 1);
    assert_eq!(
        information_exponent(&LinkFunction::tanh(), 30, 1e-8).unwrap(),
        1
    );
}

#[test]
fn target_validates_links_and_directions() {
    let d = 6;
    let ok = MultiIndexTarget::new(
        basis(d, 0),
        basis(d, 1),
        LinkFunction::identity(),
        LinkFunction::hermite(2),
    );
    assert!(ok.is_ok());
    let easy_hard = MultiIndexTarget::new(
        basis(d, 0),
        basis(d, 1),
        LinkFunction::identity(),
        LinkFunction::tanh(),
    );
    assert!(easy_hard.is_err());
    let slow_easy = MultiIndexTarget::new(
        basis(d, 0),
        basis(d, 1),
        LinkFunction::hermite(2),
        LinkFunction::hermite(3),
    );
    assert!(slow_easy.is_err());
    let parallel = MultiIndexTarget::new(
        basis(d, 0),
        basis(d, 0),
        LinkFunction::identity(),
        LinkFunction::hermite(2),
    );
    assert!(parallel.is_err());

    let random =
        MultiIndexTarget::random(50, LinkFunction::identity(), LinkFunction::hermite(2), 9)
            .unwrap();
    assert!((linalg::norm(random.beta_e.as_ref()) - 1.0).abs() < 1e-12);
    assert!((linalg::norm(random.beta_h.as_ref()) - 1.0).abs() < 1e-12);
    assert!(linalg::dot(random.beta_e.as_ref(), random.beta_h.as_ref()).abs() < 1e-12);
}

#[test]
fn zero_links_give_zero_labels() {
    let t = small_target(5, LinkFunction::zero(), LinkFunction::zero());
    let data = sample_multi_index(&t, 40, 1).unwrap();
    assert!((0..40).all(|i| data.labels[i] == 0.0));
}

#[test]
fn label_variance_matches_link_variances() {
    let e = LinkFunction::identity();
    let h = LinkFunction::hermite(2);
    let expected = e.variance().unwrap() + h.variance().unwrap();
    assert!((expected - 3.0).abs() < 1e-10);
    let target = MultiIndexTarget::random(10, e, h, 4).unwrap();
    let n = 100_000;
    let data = sample_multi_index(&target, n, 11).unwrap();
    let mean = (0..n).map(|i| data.labels[i]).sum::<f64>() / n as f64;
    let var = (0..n).map(|i| (data.labels[i] - mean).powi(2)).sum::<f64>() / n as f64;
    assert!(
        ((var - expected) / expected).abs() < 0.05,
        "{var} vs {expected}"
    );

    let pe = linalg::mat_vec(data.features.as_ref(), target.beta_e.as_ref());
    let ph = linalg::mat_vec(data.features.as_ref(), target.beta_h.as_ref());
    let corr = linalg::dot(pe.as_ref(), ph.as_ref())
        / (linalg::norm(pe.as_ref()) * linalg::norm(ph.as_ref()));
    assert!(corr.abs() < 0.05);
}

#[test]
fn sampling_is_deterministic() {
    let t = small_target(7, LinkFunction::identity(), LinkFunction::hermite(2));
    let a = sample_multi_index(&t, 30, 5).unwrap();
    let b = sample_multi_index(&t, 30, 5).unwrap();
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.features, b.features);
}

fn small_problem(
    d: usize,
    p: usize,
    n: usize,
    activation: LinkFunction,
    seed: u64,
) -> (TwoLayerNet, Dataset) {
    let teacher = init_teacher(p, d, 1.0, seed).unwrap();
    let net = TwoLayerNet::new(teacher.first_layer, teacher.second_layer, activation).unwrap();
    let target = MultiIndexTarget::random(
        d,
        LinkFunction::identity(),
        LinkFunction::hermite(2),
        seed + 1,
    )
    .unwrap();
    let data = sample_multi_index(&target, n, seed + 2).unwrap();
    (net, data)
}

#[test]
fn correlation_loss_matches_loop() {
    let (net, data) = small_problem(6, 4, 10, LinkFunction::tanh(), 3);
    let got = correlation_loss(&net, &data).unwrap();
    let mut naive = 0.0;
    for i in 0..10 {
        let mut f = 0.0;
        for j in 0..4 {
            let mut pre = 0.0;
            for k in 0..6 {
                pre += net.first_layer[(j, k)] * data.features[(i, k)];
            }
            f += net.second_layer[j] * pre.tanh();
        }
        naive += data.labels[i] * f;
    }
    naive /= -10.0;
    assert!((got - naive).abs() < 1e-12);
}

#[test]
fn correlation_loss_is_linear_in_second_layer() {
    let (net, data) = small_problem(6, 4, 10, LinkFunction::tanh(), 8);
    let zeroed =
        TwoLayerNet::new_unchecked(net.first_layer.clone(), Col::zeros(4), LinkFunction::tanh())
            .unwrap();
    assert_eq!(correlation_loss(&zeroed, &data).unwrap(), 0.0);
    let scaled = TwoLayerNet::new(
        net.first_layer.clone(),
        Col::from_fn(4, |i| 3.0 * net.second_layer[i]),
        LinkFunction::tanh(),
    )
    .unwrap();
    let base = correlation_loss(&net, &data).unwrap();
    assert!((correlation_loss(&scaled, &data).unwrap() - 3.0 * base).abs() < 1e-12);
}

#[test]
fn dimension_mismatch_is_reported() {
    let (net, _) = small_problem(6, 4, 10, LinkFunction::tanh(), 3);
    let other = sample_multi_index(
        &small_target(7, LinkFunction::identity(), LinkFunction::hermite(2)),
        5,
        0,
    )
    .unwrap();
    assert!(correlation_loss(&net, &other).is_err());
    assert!(correlation_loss_gradient(&net, &other).is_err());
}

#[test]
fn identity_activation_gradient_is_rank_one() {
    let (net, data) = small_problem(5, 3, 12, LinkFunction::identity(), 2);
    let grad = correlation_loss_gradient(&net, &data).unwrap();
    let xty = linalg::mat_t_vec(data.features.as_ref(), data.labels.as_ref());
    for i in 0..3 {
        for j in 0..5 {
            let expected = -net.second_layer[i] * xty[j] / 12.0;
            assert!((grad[(i, j)] - expected).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_labels_give_zero_gradient() {
    let (net, data) = small_problem(5, 3, 12, LinkFunction::tanh(), 2);
    let quiet = Dataset::new(data.features, Col::zeros(12)).unwrap();
    let grad = correlation_loss_gradient(&net, &quiet).unwrap();
    assert_eq!(frobenius_inner(&grad, &grad), 0.0);
}

#[test]
fn gradient_matches_finite_differences() {
    for activation in [LinkFunction::tanh(), LinkFunction::identity()] {
        let (net, data) = small_problem(20, 20, 50, activation.clone(), 17);
        let grad = correlation_loss_gradient(&net, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let mut dir = linalg::gaussian_matrix(&mut rng, 20, 20, 1.0);
            let scale = frobenius_inner(&dir, &dir).sqrt();
            dir = Mat::from_fn(20, 20, |i, j| dir[(i, j)] / scale);
            let h = 1e-5;
            let shifted = |s: f64| {
                let w = Mat::from_fn(20, 20, |i, j| net.first_layer[(i, j)] + s * dir[(i, j)]);
                let n = TwoLayerNet::new(w, net.second_layer.clone(), activation.clone()).unwrap();
                correlation_loss(&n, &data).unwrap()
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let analytic = frobenius_inner(&grad, &dir);
            assert!(
                (fd - analytic).abs() <= 1e-5 * analytic.abs().max(1e-3),
                "{}: fd={fd} analytic={analytic}",
                activation.name
            );
        }
    }
}

#[test]
fn update_is_linear_in_eta() {
    let (net, data) = small_problem(8, 6, 30, LinkFunction::tanh(), 21);
    let same = one_step_update(&net, &data, 0.0).unwrap();
    assert_eq!(same.first_layer, net.first_layer);
    assert_eq!(same.second_layer, net.second_layer);
    let one = one_step_update(&net, &data, 1.0).unwrap();
    let two = one_step_update(&net, &data, 2.5).unwrap();
    for i in 0..6 {
        for j in 0..8 {
            let d1 = one.first_layer[(i, j)] - net.first_layer[(i, j)];
            let d2 = two.first_layer[(i, j)] - net.first_layer[(i, j)];
            assert!((d2 - 2.5 * d1).abs() < 1e-14);
        }
    }
    assert_eq!(one.second_layer, net.second_layer);
}

#[test]
fn update_operator_norm_is_order_one() {
    let d = 512;
    let target =
        MultiIndexTarget::random(d, LinkFunction::identity(), LinkFunction::hermite(2), 1).unwrap();
    let data = sample_multi_index(&target, 4096, 2).unwrap();
    let net = init_teacher(d, d, 2.0, 3).unwrap();
    let after = one_step_update(&net, &data, 1.0).unwrap();
    let delta = Mat::from_fn(d, d, |i, j| {
        after.first_layer[(i, j)] - net.first_layer[(i, j)]
    });
    let top = delta
        .singular_values()
        .unwrap()
        .into_iter()
        .fold(0.0, f64::max);
    assert!((0.01..=100.0).contains(&top), "operator norm {top}");
}

#[test]
fn teacher_initialization_statistics() {
    let (p, d) = (64, 128);
    let beta = basis(d, 3);
    let mean_sq = (0..50u64)
        .map(|s| {
            let net = init_teacher(p, d, 1.0, s).unwrap();
            alignment(net.first_layer.as_ref(), beta.as_ref())
                .unwrap()
                .powi(2)
        })
        .sum::<f64>()
        / 50.0;
    let expected = p as f64 / d as f64;
    assert!(
        ((mean_sq - expected) / expected).abs() < 0.05,
        "{mean_sq} vs {expected}"
    );

    let net = init_teacher(p, d, 2.5, 4).unwrap();
    assert!((linalg::norm(net.second_layer.as_ref()) - 2.5).abs() < 1e-12);
    let again = init_teacher(p, d, 2.5, 4).unwrap();
    assert_eq!(net.first_layer, again.first_layer);
    assert_eq!(net.second_layer, again.second_layer);
    assert!(init_teacher(p, d, 20.0, 4).is_err());
}

#[test]
fn unspiked_student_matches_teacher_bulk() {
    let beta = basis(40, 2);
    let s = init_student(16, 40, 0.0, beta.as_ref(), 6).unwrap();
    let t = init_teacher(16, 40, 1.0, 6).unwrap();
    assert_eq!(s.first_layer, t.first_layer);
    assert_eq!(s.second_layer, t.second_layer);
}

#[test]
fn spiked_student_alignment() {
    let d = 512;
    let target =
        MultiIndexTarget::random(d, LinkFunction::identity(), LinkFunction::hermite(2), 5).unwrap();
    for tau in [2.0, 3.0, 5.0] {
        let s = init_student(d, d, tau, target.beta_h.as_ref(), 12).unwrap();
        let h = alignment(s.first_layer.as_ref(), target.beta_h.as_ref()).unwrap();
        let e = alignment(s.first_layer.as_ref(), target.beta_e.as_ref()).unwrap();
        assert!(h >= 0.9 * tau, "tau={tau}: {h}");
        assert!((e - 1.0).abs() < 0.1, "tau={tau}: {e}");
    }
}

#[test]
fn alignment_is_invariant_under_rotations_fixing_direction() {
    let d = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = linalg::gaussian_matrix(&mut rng, 7, d, 1.0);
    let beta = basis(d, 0);
    // Householder reflection through a unit vector orthogonal to beta.
    let mut v = linalg::gaussian_col(&mut rng, d, 1.0);
    v[0] = 0.0;
    let nv = linalg::norm(v.as_ref());
    let q = Mat::from_fn(d, d, |i, j| {
        (if i == j { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[j] / (nv * nv)
    });
    let rotated = linalg::product(w.as_ref(), q.as_ref(), 1.0);
    let a = alignment(w.as_ref(), beta.as_ref()).unwrap();
    let b = alignment(rotated.as_ref(), beta.as_ref()).unwrap();
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn student_labels_come_from_updated_teacher() {
    let cfg = default_config(32);
    let trace = run_feature_transfer_traced(&cfg, 7).unwrap();
    assert_eq!(trace.labeler.first_layer, trace.teacher_updated.first_layer);
    assert_ne!(trace.labeler.first_layer, trace.teacher_initial.first_layer);
    assert_eq!(
        trace.labeler.second_layer,
        trace.teacher_initial.second_layer
    );
}

#[test]
fn pipeline_is_deterministic() {
    let cfg = default_config(32);
    assert_eq!(
        run_feature_transfer(&cfg, 3).unwrap(),
        run_feature_transfer(&cfg, 3).unwrap()
    );
    assert_ne!(
        run_feature_transfer(&cfg, 3).unwrap(),
        run_feature_transfer(&cfg, 4).unwrap()
    );
}

#[test]
fn pipeline_rejects_bad_links_and_large_tau() {
    let mut cfg = default_config(32);
    cfg.link_h = "tanh".into();
    assert!(run_feature_transfer(&cfg, 0).is_err());
    let mut cfg = default_config(64);
    cfg.tau = 2.0;
    assert!(run_feature_transfer(&cfg, 0).is_ok());
    cfg.tau = 2.0 + 1e-9;
    assert!(run_feature_transfer(&cfg, 0).is_err());
}

fn seed_average(d: usize, seeds: u64) -> (f64, f64, f64, f64) {
    let mut acc = (0.0, 0.0, f64::INFINITY, 0.0);
    for s in 0..seeds {
        let (t, st) = run_feature_transfer(&default_config(d), s).unwrap();
        acc.0 += t.easy_gain() / seeds as f64;
        acc.1 += t.hard_gain() / seeds as f64;
        acc.2 = acc.2.min(st.align_h_after / st.align_h_before);
        acc.3 += st.easy_gain() / seeds as f64;
    }
    acc
}

#[test]
fn easy_hard_separation_and_spike_retention_at_scale() {
    let (t_easy, t_hard, retain, s_easy) = seed_average(512, 10);
    assert!(t_easy > 0.1, "teacher easy gain {t_easy}");
    assert!(t_hard < 0.02, "teacher hard gain {t_hard}");
    assert!(retain >= 0.9, "worst student hard retention {retain}");
    assert!(s_easy > 0.05, "student easy gain {s_easy}");
}

#[test]
fn hard_gain_shrinks_with_dimension() {
    let small = seed_average(128, 10).1;
    let large = seed_average(512, 10).1;
    assert!(large < small, "d=128: {small}, d=512: {large}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn alignments_are_nonnegative(seed in 0u64..1000, tau in 0.0f64..1.2) {
        let mut cfg = default_config(24);
        cfg.tau = tau;
        cfg.n_t = 50;
        cfg.n_s = 50;
        let (t, s) = run_feature_transfer(&cfg, seed).unwrap();
        for r in [t, s] {
            prop_assert!(r.align_e_before >= 0.0 && r.align_e_after >= 0.0);
            prop_assert!(r.align_h_before >= 0.0 && r.align_h_after >= 0.0);
        }
    }

    #[test]
    fn coefficients_of_scaled_hermite(k in 0usize..10, scale in -3.0f64..3.0) {
        let f = LinkFunction::new("scaled", move |x| scale * hermite_he(k, x));
        for j in 0..12 {
            let expected = if j == k { scale } else { 0.0 };
            prop_assert!((hermite_coefficient(&f, j).unwrap() - expected).abs() < 1e-9);
        }
    }
}
