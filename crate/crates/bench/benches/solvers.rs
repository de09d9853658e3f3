use criterion::{black_box, criterion_group, criterion_main, Criterion};
use stabreg::datasets::{generate_linear, standardize};
use stabreg::lasso::fit_path;
use stabreg::mest::fit_lad;
use stabreg::montecarlo::{draw_replicate, replicate_rng};
use stabreg::regime::solve_system;
use stabreg::{DesignCovariance, ErrorDist, LossSpec, PathConfig, SimConfig};

fn lasso_path(c: &mut Criterion) {
    let mut beta = vec![0.0; 150];
    for m in 0..10 {
        beta[m * 15] = 1.0;
    }
    let ds = generate_linear(&SimConfig {
        n: 100,
        p: 150,
        beta_true: beta,
        design_covariance: DesignCovariance::Equicorrelated { rho: 0.5 },
        error_dist: ErrorDist::gaussian(1.0),
        seed: 1,
    })
    .unwrap();
    let ds = standardize(&ds);
    let cfg = PathConfig::default();
    c.bench_function("lasso_path_100x150", |b| {
        b.iter(|| fit_path(black_box(&ds), &cfg).unwrap())
    });
}

fn regime(c: &mut Criterion) {
    let dist = ErrorDist::laplace(1.0);
    c.bench_function("regime_squared_0.5", |b| {
        b.iter(|| solve_system(LossSpec::Squared, &dist, black_box(0.5)).unwrap())
    });
    c.bench_function("regime_lad_0.5", |b| {
        b.iter(|| solve_system(LossSpec::Absolute, &dist, black_box(0.5)).unwrap())
    });
}

fn lad(c: &mut Criterion) {
    let dist = ErrorDist::laplace(1.0);
    let mut group = c.benchmark_group("lad_fit");
    group.sample_size(10);
    for (n, p) in [(200, 20), (500, 250)] {
        let ds = draw_replicate(&mut replicate_rng(3, 0), n, p, &dist);
        group.bench_function(format!("{n}x{p}"), |b| {
            b.iter(|| fit_lad(black_box(&ds)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, lasso_path, regime, lad);
criterion_main!(benches);
