use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use w2s_core::feature_lab::{init_teacher, one_step_update, sample_multi_index, MultiIndexTarget};
use w2s_core::hermite::LinkFunction;
use w2s_core::linear_lab::{run_w2s_grid_trial, PenaltyForm, TrialDesign};
use w2s_core::mp_stieltjes::{mp_m, mp_m_derivative, AspectRatio};
use w2s_core::theory::{log_grid, predict, LinearProblemParams};

fn stieltjes(c: &mut Criterion) {
    let lambdas = log_grid(1e-3, 1e3, 40);
    let gammas: Vec<AspectRatio> = log_grid(0.05, 20.0, 40)
        .into_iter()
        .map(|g| AspectRatio::new(g).unwrap())
        .collect();
    c.bench_function("mp_m 40x40", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for &l in &lambdas {
                for &g in &gammas {
                    acc += mp_m(black_box(l), g).unwrap() + mp_m_derivative(l, g).unwrap();
                }
            }
            acc
        })
    });
    let params = LinearProblemParams {
        gamma_t: AspectRatio::new(0.25).unwrap(),
        gamma_s: AspectRatio::new(0.25).unwrap(),
        sigma_eps: 1.0,
        lambda_t: 0.25,
        lambda_s: 1.0,
        zeta: 0.8,
    };
    c.bench_function("predict weighted", |b| {
        b.iter(|| predict(black_box(&params)).unwrap())
    });
}

fn grid_trial(c: &mut Criterion) {
    let mut group = c.benchmark_group("grid trial 30x30");
    group.sample_size(10);
    let grid = log_grid(1e-3, 10.0, 30);
    for d in [100, 250] {
        let design = TrialDesign {
            d,
            n_t: 4 * d,
            n_s: 4 * d,
            sigma_eps: 1.0,
        };
        group.bench_with_input(BenchmarkId::from_parameter(d), &design, |b, design| {
            b.iter(|| {
                run_w2s_grid_trial(design, &grid, &grid, &[None], PenaltyForm::Resolvent, 1)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn feature_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("feature one-step update");
    group.sample_size(10);
    for d in [128, 256] {
        let target =
            MultiIndexTarget::random(d, LinkFunction::identity(), LinkFunction::hermite(2), 1)
                .unwrap();
        let data = sample_multi_index(&target, 8 * d, 2).unwrap();
        let net = init_teacher(d, d, 2.0, 3).unwrap();
        group.bench_with_input(
            BenchmarkId::from_parameter(d),
            &(net, data),
            |b, (net, data)| b.iter(|| one_step_update(net, data, 1.0).unwrap()),
        );
    }
    group.finish();
}

criterion_group!(benches, stieltjes, grid_trial, feature_step);
criterion_main!(benches);
