#![allow(clippy::excessive_precision)]

use proptest::prelude::*;
use w2s_core::mp_stieltjes::{
    empirical_stieltjes, mp_m, mp_m_derivative, self_consistency_residual, stieltjes_pair,
    AspectRatio, WishartSpectrum,
};
use w2s_core::theory::log_grid;

fn g(x: f64) -> AspectRatio {
    AspectRatio::new(x).unwrap()
}

// (λ, γ, m, m₂) evaluated at 50 digits from the unsimplified radical form,
// with m₂ by high-precision numerical differentiation.
const HIGH_PRECISION: &[(f64, f64, f64, f64)] = &[
    (0.3, 0.25, 0.89514618821800749913, 0.92501378836454433955),
    (1.0, 1.0, 0.6180339887498948482, 0.44721359549995793928),
    (0.01, 3.0, 66.832095686821912828, 6666.7892104301493127),
    (5.0, 0.1, 0.16712452484700531388, 0.028006279553298579368),
    (0.001, 0.99, 26.708436876130174213, 11472.833391598151703),
    (0.002, 1.01, 24.317849846888076626, 6887.8647697187428676),
    (
        100.0,
        20.0,
        0.0099172421676228137114,
        0.000098486596370111767422,
    ),
];

#[test]
fn matches_high_precision_values() {
    for &(lam, gamma, m, m2) in HIGH_PRECISION {
        let p = stieltjes_pair(lam, g(gamma)).unwrap();
        assert!(
            ((p.m1 - m) / m).abs() < 1e-13,
            "m at ({lam}, {gamma}): {} vs {m}",
            p.m1
        );
        assert!(
            ((p.m2 - m2) / m2).abs() < 1e-12,
            "m2 at ({lam}, {gamma}): {} vs {m2}",
            p.m2
        );
    }
}

#[test]
fn self_consistency_on_log_grid() {
    let mut worst = 0f64;
    for &lam in &log_grid(1e-3, 1e3, 40) {
        for &gamma in &log_grid(0.05, 20.0, 40) {
            let m = mp_m(lam, g(gamma)).unwrap();
            worst = worst.max(self_consistency_residual(lam, g(gamma), m).abs());
        }
    }
    assert!(worst < 1e-10, "worst residual {worst:e}");
}

#[test]
fn derivative_matches_central_differences() {
    let h = 1e-6;
    let fd = mp_m(0.3 + h, g(0.25)).unwrap() - mp_m(0.3 - h, g(0.25)).unwrap();
    let fd = -fd / (2.0 * h);
    let m2 = mp_m_derivative(0.3, g(0.25)).unwrap();
    assert!(((fd - m2) / m2).abs() < 1e-6);

    for &lam in &log_grid(1e-3, 1e3, 40) {
        for &gamma in &log_grid(0.05, 20.0, 40) {
            let step = 1e-5 * lam;
            let up = mp_m(lam + step, g(gamma)).unwrap();
            let down = mp_m(lam - step, g(gamma)).unwrap();
            let fd = -(up - down) / (2.0 * step);
            let m2 = mp_m_derivative(lam, g(gamma)).unwrap();
            assert!(
                ((fd - m2) / m2).abs() < 1e-6,
                "({lam}, {gamma}): fd={fd} m2={m2}"
            );
        }
    }
}

#[test]
fn monotone_decreasing_in_lambda() {
    for &gamma in &[0.1, 0.5, 1.0, 2.0, 10.0] {
        let grid = log_grid(1e-4, 1e4, 200);
        let pairs: Vec<_> = grid
            .iter()
            .map(|&l| stieltjes_pair(l, g(gamma)).unwrap())
            .collect();
        for w in pairs.windows(2) {
            assert!(w[1].m1 < w[0].m1);
            assert!(w[1].m2 < w[0].m2);
        }
    }
}

#[test]
fn empirical_tracks_closed_form_at_moderate_size() {
    let spectrum = WishartSpectrum::sample(400, g(0.25), 5).unwrap();
    assert_eq!(spectrum.n, 1600);
    for lam in [0.1, 0.3, 1.0] {
        let emp = spectrum.stieltjes(lam).unwrap();
        let exact = mp_m(lam, g(0.25)).unwrap();
        assert!(
            ((emp - exact) / exact).abs() < 0.03,
            "lam={lam}: {emp} vs {exact}"
        );
    }
}

#[test]
fn empirical_is_dominated_by_huge_lambda() {
    let v = empirical_stieltjes(20, g(0.5), 1e6, 3).unwrap();
    assert!((v * 1e6 - 1.0).abs() < 1e-4);
}

#[test]
fn empirical_rejects_tiny_dimensions() {
    assert!(empirical_stieltjes(1, g(0.5), 0.3, 0).is_err());
    assert!(empirical_stieltjes(4, g(10.0), 0.3, 0).is_err());
}

#[test]
fn empirical_error_shrinks_with_dimension() {
    let gamma = g(0.25);
    let lam = 0.3;
    let exact = mp_m(lam, gamma).unwrap();
    let mean_err = |d: usize| {
        (0..5u64)
            .map(|seed| (empirical_stieltjes(d, gamma, lam, 100 + seed).unwrap() - exact).abs())
            .sum::<f64>()
            / 5.0
    };
    let errs: Vec<f64> = [500, 1000, 2000, 4000]
        .iter()
        .map(|&d| mean_err(d))
        .collect();
    assert!(errs[3] < errs[0], "errors by d: {errs:?}");
}

proptest! {
    #[test]
    fn pair_is_positive_and_finite(lam in 1e-4f64..1e4, gamma in 0.01f64..50.0) {
        let p = stieltjes_pair(lam, g(gamma)).unwrap();
        prop_assert!(p.m1 > 0.0 && p.m1.is_finite());
        prop_assert!(p.m2 > 0.0 && p.m2.is_finite());
        // m is a Stieltjes transform of a probability measure on [0, ∞).
        prop_assert!(p.m1 <= (1.0 / lam) * (1.0 + 1e-12));
    }

    #[test]
    fn residual_small_everywhere(lam in 1e-4f64..1e3, gamma in 0.05f64..20.0) {
        let m = mp_m(lam, g(gamma)).unwrap();
        prop_assert!(self_consistency_residual(lam, g(gamma), m).abs() < 1e-10);
    }
}
