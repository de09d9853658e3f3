use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stabreg::datasets::Dataset;
use stabreg::dist::ErrorDist;
use stabreg::loss::LossSpec;
use stabreg::mest::{fit_huber, fit_lad, fit_m, fit_ols, m_objective};

fn instance(seed: u64, n: usize, p: usize, errors: ErrorDist) -> (Dataset, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let beta: Vec<f64> = (0..p).map(|j| (j as f64 - 1.0) * 0.5).collect();
    let mut y = &x * DVector::from_column_slice(&beta);
    for v in y.iter_mut() {
        *v += errors.sample(&mut rng);
    }
    (Dataset::new(y, x).unwrap(), beta)
}

#[test]
fn noiseless_recovery() {
    let (ds, beta) = instance(1, 30, 4, ErrorDist::gaussian(0.0));
    for fit in [fit_ols(&ds).unwrap(), fit_lad(&ds).unwrap()] {
        for j in 0..4 {
            assert!((fit.beta_hat[j] - beta[j]).abs() < 1e-10);
        }
        assert!(fit.objective < 1e-18 + 1e-12 * fit.norm);
    }
}

#[test]
fn ols_matches_normal_equations() {
    let (ds, _) = instance(2, 50, 10, ErrorDist::gaussian(1.0));
    let fit = fit_ols(&ds).unwrap();
    let x = ds.x();
    let oracle = (x.transpose() * x)
        .cholesky()
        .unwrap()
        .solve(&(x.transpose() * ds.y()));
    for j in 0..10 {
        assert!((fit.beta_hat[j] - oracle[j]).abs() < 1e-8);
    }
    let r = ds.y() - x * DVector::from_column_slice(&fit.beta_hat);
    assert!((x.transpose() * &r).amax() <= 1e-8 * (x.transpose() * ds.y()).amax());
    assert!((fit.objective - r.norm_squared()).abs() < 1e-10 * fit.objective);
    assert!(fit.converged);
}

/// Minimum LAD objective over every line through two data points.
fn basic_solution_oracle(ds: &Dataset) -> f64 {
    let (x, y) = (ds.x(), ds.y());
    let mut best = f64::INFINITY;
    for i in 0..ds.n() {
        for k in i + 1..ds.n() {
            let a = DMatrix::from_row_slice(2, 2, &[x[(i, 0)], x[(i, 1)], x[(k, 0)], x[(k, 1)]]);
            let Some(b) = a.lu().solve(&DVector::from_vec(vec![y[i], y[k]])) else {
                continue;
            };
            best = best.min(m_objective(ds, LossSpec::Absolute, b.as_slice()));
        }
    }
    best
}

#[test]
fn lad_matches_basic_solution_oracle() {
    for seed in 0..10 {
        let (ds, _) = instance(100 + seed, 20, 2, ErrorDist::laplace(1.0));
        let fit = fit_lad(&ds).unwrap();
        let oracle = basic_solution_oracle(&ds);
        assert!(
            (fit.objective - oracle).abs() <= 1e-6 * oracle,
            "{} vs {oracle}",
            fit.objective
        );
        let direct = m_objective(&ds, LossSpec::Absolute, &fit.beta_hat);
        assert!((fit.objective - direct).abs() <= 1e-10 * direct.max(1.0));
    }
}

#[test]
fn lad_intercept_only_objective_is_median_deviation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y: Vec<f64> = (0..31)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let med = sorted[15];
    let want: f64 = y.iter().map(|v| (v - med).abs()).sum();
    let ds = Dataset::new(DVector::from_vec(y), DMatrix::from_element(31, 1, 1.0)).unwrap();
    let fit = fit_lad(&ds).unwrap();
    assert!((fit.objective - want).abs() < 1e-9);
}

#[test]
fn dispatch_and_huber_limits() {
    let (ds, _) = instance(5, 20, 2, ErrorDist::laplace(1.0));
    let ols = fit_ols(&ds).unwrap();
    let sq = fit_m(&ds, LossSpec::Squared).unwrap();
    for j in 0..2 {
        assert!((ols.beta_hat[j] - sq.beta_hat[j]).abs() < 1e-10);
    }
    let wide = fit_huber(&ds, 1e6).unwrap();
    for j in 0..2 {
        assert!((ols.beta_hat[j] - wide.beta_hat[j]).abs() < 1e-6);
    }
    let lad = fit_lad(&ds).unwrap();
    let narrow = fit_m(&ds, LossSpec::Huber { delta: 1e-4 }).unwrap();
    let l1 = m_objective(&ds, LossSpec::Absolute, &narrow.beta_hat);
    assert!((l1 / lad.objective - 1.0).abs() < 0.01);
}

#[test]
fn rotation_equivariance() {
    let (ds, _) = instance(6, 40, 4, ErrorDist::laplace(1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let q = DMatrix::<f64>::from_fn(4, 4, |_, _| rng.sample(StandardNormal))
        .qr()
        .q();
    let rotated = Dataset::new(ds.y().clone(), ds.x() * &q).unwrap();
    for loss in [
        LossSpec::Squared,
        LossSpec::Absolute,
        LossSpec::Huber { delta: 1.0 },
    ] {
        let a = fit_m(&ds, loss).unwrap();
        let b = fit_m(&rotated, loss).unwrap();
        let back = &q * DVector::from_column_slice(&b.beta_hat);
        for j in 0..4 {
            assert!((back[j] - a.beta_hat[j]).abs() < 1e-8, "{loss:?}");
        }
        assert!((a.norm - b.norm).abs() < 1e-8);
    }
}

#[test]
fn objective_is_minimal_along_directions() {
    let (ds, _) = instance(7, 60, 5, ErrorDist::laplace(1.0));
    let ols = fit_ols(&ds).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    for loss in [
        LossSpec::Squared,
        LossSpec::Absolute,
        LossSpec::Huber { delta: 0.5 },
    ] {
        let fit = fit_m(&ds, loss).unwrap();
        let f0 = m_objective(&ds, loss, &fit.beta_hat);
        assert!(f0 <= m_objective(&ds, loss, &[0.0; 5]));
        assert!(f0 <= m_objective(&ds, loss, &ols.beta_hat) + 1e-9);
        for _ in 0..10 {
            let d: Vec<f64> = (0..5)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut prev = f0;
            for t in [1e-4, 1e-3, 1e-2, 0.1, 1.0] {
                let b: Vec<f64> = fit
                    .beta_hat
                    .iter()
                    .zip(&d)
                    .map(|(b, d)| b + t * d)
                    .collect();
                let f = m_objective(&ds, loss, &b);
                assert!(f >= prev - 1e-9 * f0, "{loss:?} t={t}");
                prev = f;
            }
        }
    }
}
