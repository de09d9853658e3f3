use std::fs;
use std::io::Write;
use std::path::Path;

use log::warn;
use serde::Serialize;
use stabreg::datasets::{generate_linear, make_folds, standardize};
use stabreg::io::{fmt_f64, load_csv, save_csv, write_table, CsvOptions};
use stabreg::lasso::LassoOptions;
use stabreg::montecarlo::{
    compare_theory_mc, direction_uniformity_check, run_norm_mc, Agreement, DirectionCheck,
};
use stabreg::regime::{find_crossover, r_curve, solve_system};
use stabreg::stability::run_escv;
use stabreg::{
    Crossover, Dataset, DesignCovariance, Error, McConfig, McSummary, PathConfig, RegimeSolution,
    SimConfig, StabilityConfig,
};

use crate::config::{GenConfig, McRunConfig, RegimeConfig, SelectConfig};
use crate::CliError;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn prepare(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// `k` coefficients equal to `signal` at indices `⌊m·p/k⌋`.
fn spread_beta(p: usize, k: usize, signal: f64) -> Result<Vec<f64>, CliError> {
    if k > p {
        return Err(CliError::Usage(format!("nonzeros ({k}) exceeds p ({p})")));
    }
    let mut beta = vec![0.0; p];
    for m in 0..k {
        beta[m * p / k] = signal;
    }
    Ok(beta)
}

pub fn gen(cfg: &GenConfig, out: &Path) -> Result<(), CliError> {
    let beta = match &cfg.beta {
        Some(b) => b.clone(),
        None => spread_beta(cfg.p, cfg.nonzeros.unwrap_or(0), cfg.signal)?,
    };
    let design_covariance = if cfg.rho == 0.0 {
        DesignCovariance::Identity
    } else {
        DesignCovariance::Equicorrelated { rho: cfg.rho }
    };
    let sim = SimConfig {
        n: cfg.n,
        p: cfg.p,
        beta_true: beta.clone(),
        design_covariance,
        error_dist: cfg.error_dist,
        seed: cfg.seed,
    };
    let ds = generate_linear(&sim)?;
    let test = if cfg.test_n > 0 {
        Some(generate_linear(&SimConfig {
            n: cfg.test_n,
            seed: cfg.seed.wrapping_add(1),
            ..sim.clone()
        })?)
    } else {
        None
    };

    prepare(out)?;
    save_csv(&ds, out.join("data.csv"))?;
    if let Some(t) = &test {
        save_csv(t, out.join("test.csv"))?;
    }
    let mut f = fs::File::create(out.join("beta.csv"))?;
    writeln!(f, "predictor,beta")?;
    for (name, b) in ds.predictor_names().iter().zip(&beta) {
        writeln!(f, "{name},{}", fmt_f64(*b))?;
    }
    write_json(&out.join("config.json"), cfg)?;
    println!(
        "wrote {} rows x {} predictors to {}",
        cfg.n,
        cfg.p,
        out.join("data.csv").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TestReport {
    n: usize,
    mse_cv: f64,
    mse_escv: f64,
}

#[derive(Serialize)]
struct SelectReport {
    n: usize,
    p: usize,
    v: usize,
    d: usize,
    tau_cv: f64,
    tau_escv: f64,
    model_size_cv: usize,
    model_size_escv: usize,
    escv_fell_back: bool,
    intercept_cv: f64,
    intercept_escv: f64,
    selected_cv: Vec<String>,
    selected_escv: Vec<String>,
    test: Option<TestReport>,
}

fn selected(names: &[String], beta: &[f64]) -> Vec<String> {
    names
        .iter()
        .zip(beta)
        .filter(|(_, b)| b.abs() > stabreg::stability::SUPPORT_TOL)
        .map(|(n, _)| n.clone())
        .collect()
}

fn test_mse(test: &Dataset, intercept: f64, beta: &[f64]) -> f64 {
    let x = test.x();
    let sse: f64 = (0..test.n())
        .map(|i| {
            let fit = intercept + (0..beta.len()).map(|j| x[(i, j)] * beta[j]).sum::<f64>();
            (test.y()[i] - fit).powi(2)
        })
        .sum();
    sse / test.n() as f64
}

pub fn select(cfg: &SelectConfig, out: &Path) -> Result<(), CliError> {
    let opts = CsvOptions {
        response_column: cfg.response.clone(),
    };
    let data = cfg.data.as_ref().expect("resolved config has data");
    let ds = load_csv(data, &opts)?;
    let test = match &cfg.test {
        Some(path) => {
            let t = load_csv(path, &opts)?;
            if t.predictor_names() != ds.predictor_names() {
                return Err(CliError::Usage(
                    "test file columns differ from the training file".into(),
                ));
            }
            Some(t)
        }
        None => None,
    };
    let plan = make_folds(ds.n(), cfg.folds, cfg.seed)?;
    let scfg = StabilityConfig {
        tau_grid_size: cfg.tau_grid,
        path: PathConfig {
            grid_size: cfg.lambda_grid,
            floor_ratio: cfg.floor_ratio,
            solver: LassoOptions::default(),
        },
        median_filter: cfg.median_filter,
    };
    let std = standardize(&ds);
    let sel = run_escv(&std, &plan, &scfg)?;
    let (b0_cv, coef_cv) = std.to_original_units(&sel.beta_cv);
    let (b0_escv, coef_escv) = std.to_original_units(&sel.beta_escv);
    if sel.escv_fell_back {
        warn!("ES undefined below the CV choice; ES-CV falls back to CV");
    }

    prepare(out)?;
    let c = &sel.curves;
    let header: Vec<String> = ["tau", "es", "z2", "cv_error", "that"]
        .map(String::from)
        .to_vec();
    let rows = (0..c.tau_grid.len()).map(|k| {
        vec![
            c.tau_grid[k],
            c.es[k].unwrap_or(f64::NAN),
            c.z2[k].unwrap_or(f64::NAN),
            c.cv_error[k],
            c.that[k],
        ]
    });
    write_table(fs::File::create(out.join("curves.csv"))?, &header, rows)?;

    let mut f = fs::File::create(out.join("coefficients.csv"))?;
    writeln!(f, "predictor,beta_cv,beta_escv")?;
    writeln!(f, "(intercept),{},{}", fmt_f64(b0_cv), fmt_f64(b0_escv))?;
    for (j, name) in ds.predictor_names().iter().enumerate() {
        writeln!(
            f,
            "{name},{},{}",
            fmt_f64(coef_cv[j]),
            fmt_f64(coef_escv[j])
        )?;
    }

    let report = SelectReport {
        n: ds.n(),
        p: ds.p(),
        v: plan.v(),
        d: plan.d(),
        tau_cv: sel.tau_cv,
        tau_escv: sel.tau_escv,
        model_size_cv: sel.model_size_cv,
        model_size_escv: sel.model_size_escv,
        escv_fell_back: sel.escv_fell_back,
        intercept_cv: b0_cv,
        intercept_escv: b0_escv,
        selected_cv: selected(ds.predictor_names(), &coef_cv),
        selected_escv: selected(ds.predictor_names(), &coef_escv),
        test: test.as_ref().map(|t| TestReport {
            n: t.n(),
            mse_cv: test_mse(t, b0_cv, &coef_cv),
            mse_escv: test_mse(t, b0_escv, &coef_escv),
        }),
    };
    write_json(&out.join("report.json"), &report)?;
    write_json(&out.join("config.json"), cfg)?;
    println!(
        "tau_cv={} (size {})  tau_escv={} (size {})",
        sel.tau_cv, sel.model_size_cv, sel.tau_escv, sel.model_size_escv
    );
    if let Some(t) = &report.test {
        println!("test mse: cv={}  escv={}", t.mse_cv, t.mse_escv);
    }
    Ok(())
}

#[derive(Serialize)]
struct NoCrossover {
    kappa_lo: f64,
    kappa_hi: f64,
    gap_at_lo: f64,
    gap_at_hi: f64,
}

#[derive(Serialize)]
struct RegimeReport {
    solutions: Vec<RegimeSolution>,
    crossover: Option<Crossover>,
    /// Set when a crossover was requested and `r_LAD − r_LS` keeps its sign.
    no_crossover: Option<NoCrossover>,
}

pub fn regime(cfg: &RegimeConfig, out: &Path) -> Result<(), CliError> {
    let mut kappas = cfg.kappa.clone();
    kappas.sort_by(f64::total_cmp);
    kappas.dedup();
    let solutions = if kappas.is_empty() {
        Vec::new()
    } else {
        r_curve(cfg.loss, &cfg.error_dist, &kappas)?
    };
    let (mut crossover, mut no_crossover) = (None, None);
    if cfg.crossover {
        match find_crossover(&cfg.error_dist, cfg.kappa_lo, cfg.kappa_hi) {
            Ok(c) => crossover = Some(c),
            Err(Error::NoCrossover {
                kappa_lo,
                kappa_hi,
                g_lo,
                g_hi,
            }) => {
                no_crossover = Some(NoCrossover {
                    kappa_lo,
                    kappa_hi,
                    gap_at_lo: g_lo,
                    gap_at_hi: g_hi,
                })
            }
            Err(e) => return Err(e.into()),
        }
    }

    prepare(out)?;
    if !solutions.is_empty() {
        let mut f = fs::File::create(out.join("regime.csv"))?;
        writeln!(
            f,
            "kappa,loss,dist,r,c,residual_derivative,residual_variance,quadrature_error"
        )?;
        for s in &solutions {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(s.kappa),
                cfg.loss.name(),
                cfg.error_dist.name(),
                fmt_f64(s.r),
                fmt_f64(s.c),
                fmt_f64(s.residuals[0]),
                fmt_f64(s.residuals[1]),
                fmt_f64(s.quadrature_error_estimate)
            )?;
        }
    }
    for s in &solutions {
        println!("kappa={} r={} c={}", s.kappa, s.r, s.c);
    }
    if let Some(c) = &crossover {
        println!(
            "crossover kappa*={} bracket=[{}, {}]",
            c.kappa, c.bracket[0], c.bracket[1]
        );
    }
    if let Some(nc) = &no_crossover {
        println!(
            "no crossover on [{}, {}]: r_lad - r_ls = {} and {}",
            nc.kappa_lo, nc.kappa_hi, nc.gap_at_lo, nc.gap_at_hi
        );
    }
    write_json(
        &out.join("regime.json"),
        &RegimeReport {
            solutions,
            crossover,
            no_crossover,
        },
    )?;
    write_json(&out.join("config.json"), cfg)?;
    Ok(())
}

#[derive(Serialize)]
struct McReport {
    summary: McSummary,
    agreement: Option<Agreement>,
    direction: Option<DirectionCheck>,
}

pub fn mc(cfg: &McRunConfig, out: &Path) -> Result<(), CliError> {
    let p = cfg.p.expect("resolved config has p");
    let mcfg = McConfig {
        n: cfg.n,
        p,
        loss: cfg.loss,
        error_dist: cfg.error_dist,
        replicates: cfg.replicates,
        seed: cfg.seed,
    };
    let mut summary = run_norm_mc(&mcfg)?;
    if summary.failures > 0 {
        warn!(
            "{} of {} replicates failed",
            summary.failures, summary.replicates
        );
    }
    let agreement = if cfg.check_theory {
        let sol = solve_system(cfg.loss, &cfg.error_dist, summary.kappa)?;
        Some(compare_theory_mc(&summary, &sol)?)
    } else {
        None
    };
    let direction = if summary.direction_stats.count >= 100 {
        Some(direction_uniformity_check(&summary)?)
    } else {
        None
    };

    prepare(out)?;
    let mut f = fs::File::create(out.join("replicates.csv"))?;
    writeln!(f, "replicate,norm,converged")?;
    for s in &summary.samples {
        let norm = s.norm.map_or_else(|| "NaN".to_string(), fmt_f64);
        writeln!(f, "{},{norm},{}", s.index, u8::from(s.converged))?;
    }
    summary.samples.clear();

    println!(
        "{:<10} {:<8} {:>5} {:>5} {:>8} {:>5} {:>12} {:>10}",
        "loss", "dist", "n", "p", "kappa", "R", "norm_mean", "norm_se"
    );
    println!(
        "{:<10} {:<8} {:>5} {:>5} {:>8.4} {:>5} {:>12.6} {:>10.6}",
        cfg.loss.name(),
        cfg.error_dist.name(),
        summary.n,
        summary.p,
        summary.kappa,
        summary.replicates,
        summary.norm_mean,
        summary.norm_se
    );
    if let Some(a) = &agreement {
        println!(
            "theory r={:.6}  z={:+.3}  {}",
            a.r_theory,
            a.z,
            if a.pass { "PASS" } else { "FAIL" }
        );
    }
    write_json(
        &out.join("summary.json"),
        &McReport {
            summary,
            agreement,
            direction,
        },
    )?;
    write_json(&out.join("config.json"), cfg)?;
    Ok(())
}
