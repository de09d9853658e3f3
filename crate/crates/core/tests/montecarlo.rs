use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stabreg::datasets::Dataset;
use stabreg::dist::ErrorDist;
use stabreg::loss::LossSpec;
use stabreg::mest::fit_m;
use stabreg::montecarlo::{
    compare_theory_mc, direction_uniformity_check, draw_replicate, replicate_rng, run_norm_mc,
    McConfig,
};
use stabreg::regime::solve_system;

fn cfg(n: usize, p: usize, loss: LossSpec, error_dist: ErrorDist, replicates: usize) -> McConfig {
    McConfig {
        n,
        p,
        loss,
        error_dist,
        replicates,
        seed: 20240917,
    }
}

#[test]
fn one_dimensional_ols_sanity_window() {
    let s = run_norm_mc(&cfg(
        100,
        1,
        LossSpec::Squared,
        ErrorDist::gaussian(1.0),
        200,
    ))
    .unwrap();
    assert!(s.norm_mean > 0.05 && s.norm_mean < 0.2, "{}", s.norm_mean);
    assert_eq!(s.failures, 0);
    assert!((s.norm_se - s.norm_sd / 200f64.sqrt()).abs() < 1e-15);
    let d = direction_uniformity_check(&s).unwrap();
    assert!(d.sign_pass.unwrap());
}

#[test]
fn noiseless_norms_are_zero() {
    for loss in [LossSpec::Squared, LossSpec::Absolute] {
        let s = run_norm_mc(&cfg(30, 5, loss, ErrorDist::laplace(0.0), 5)).unwrap();
        assert!(s.samples.iter().all(|r| r.norm == Some(0.0)));
        assert_eq!(s.norm_mean, 0.0);
    }
}

#[test]
fn seeded_runs_are_identical_across_thread_counts() {
    let c = cfg(60, 10, LossSpec::Absolute, ErrorDist::laplace(1.0), 12);
    let one = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let three = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let a = one.install(|| run_norm_mc(&c)).unwrap();
    let b = three.install(|| run_norm_mc(&c)).unwrap();
    assert_eq!(a, b);
    let other = run_norm_mc(&McConfig { seed: 1, ..c }).unwrap();
    assert_ne!(a.norm_mean, other.norm_mean);
}

#[test]
fn squared_loss_half_matches_closed_form() {
    let d = ErrorDist::laplace(1.0);
    let s = run_norm_mc(&cfg(500, 250, LossSpec::Squared, d, 200)).unwrap();
    let sol = solve_system(LossSpec::Squared, &d, 0.5).unwrap();
    let agree = compare_theory_mc(&s, &sol).unwrap();
    assert!(agree.pass, "z = {}", agree.z);
    assert!((agree.r_theory - 2f64.sqrt()).abs() < 1e-8);

    let wrong = solve_system(LossSpec::Squared, &d, 0.1).unwrap();
    let control = compare_theory_mc(&s, &wrong).unwrap();
    assert!(!control.pass && control.kappa_mismatch && control.z.abs() > 10.0);

    let lad = solve_system(LossSpec::Absolute, &d, 0.5).unwrap();
    assert!(compare_theory_mc(&s, &lad).is_err());
}

#[test]
fn lad_small_kappa_matches_solver() {
    let d = ErrorDist::laplace(1.0);
    let s = run_norm_mc(&cfg(500, 50, LossSpec::Absolute, d, 100)).unwrap();
    let sol = solve_system(LossSpec::Absolute, &d, 0.1).unwrap();
    let agree = compare_theory_mc(&s, &sol).unwrap();
    assert!(agree.pass, "z = {}", agree.z);
}

#[test]
fn directions_on_the_circle_look_uniform() {
    let s = run_norm_mc(&cfg(
        50,
        2,
        LossSpec::Squared,
        ErrorDist::gaussian(1.0),
        1000,
    ))
    .unwrap();
    let d = direction_uniformity_check(&s).unwrap();
    assert!(d.coordinates_pass && d.first_sq_pass, "{d:?}");
    assert!((d.first_sq_target - 0.5).abs() < 1e-15);
    let few = run_norm_mc(&cfg(50, 2, LossSpec::Squared, ErrorDist::gaussian(1.0), 20)).unwrap();
    assert!(direction_uniformity_check(&few).is_err());
}

#[test]
fn rotating_each_design_leaves_norms_unchanged() {
    let d = ErrorDist::laplace(1.0);
    let mut qrng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..5 {
        let ds = draw_replicate(&mut replicate_rng(9, i), 80, 8, &d);
        let q = DMatrix::<f64>::from_fn(8, 8, |_, _| StandardNormal.sample(&mut qrng))
            .qr()
            .q();
        let rotated = Dataset::new(ds.y().clone(), ds.x() * q).unwrap();
        for loss in [LossSpec::Squared, LossSpec::Absolute] {
            let a = fit_m(&ds, loss).unwrap().norm;
            let b = fit_m(&rotated, loss).unwrap().norm;
            assert!((a - b).abs() < 1e-8, "{loss:?}");
        }
    }
}
