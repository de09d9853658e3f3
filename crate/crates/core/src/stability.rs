//! Estimation stability with cross-validation (ES-CV).
//!
//! Every fold fits a Lasso path on the rows outside its block. The paths are
//! aligned on a common grid of L1 norms τ. The spread of the fold fits around
//! their mean `m̂(τ)`, relative to `‖m̂(τ)‖²`, gives the stability curve
//! `ES(τ)`. The selected τ is the largest minimizer of ES that does not
//! exceed the cross-validation choice.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{standardize, Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::lasso::{fit_path, LassoPath, PathConfig};

/// `‖m̂‖²` below this leaves ES undefined.
pub const MHAT_FLOOR: f64 = 1e-12;
/// Grid points whose ES is this close to the minimum count as minimizers.
pub const ES_TIE_TOL: f64 = 1e-10;
/// Coefficients larger than this in magnitude count toward model size.
pub const SUPPORT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub tau_grid_size: usize,
    pub path: PathConfig,
    /// Apply a 3-point running median to ES before selecting.
    pub median_filter: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            tau_grid_size: 100,
            path: PathConfig::default(),
            median_filter: false,
        }
    }
}

/// Per-fold coefficients on the τ grid, indexed `[fold][grid point]`.
pub type FoldBetas = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCurve {
    pub tau_grid: Vec<f64>,
    pub mhat: Vec<Vec<f64>>,
    pub that: Vec<f64>,
    /// `None` where `‖m̂‖²` is below [`MHAT_FLOOR`].
    pub es: Vec<Option<f64>>,
    /// `‖m̂‖²/T̂`; `None` where ES is undefined or `T̂ = 0`.
    pub z2: Vec<Option<f64>>,
    pub cv_error: Vec<f64>,
    pub v: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub tau_cv: f64,
    pub tau_escv: f64,
    pub beta_cv: Vec<f64>,
    pub beta_escv: Vec<f64>,
    pub model_size_cv: usize,
    pub model_size_escv: usize,
    /// True when no defined ES value was available at or below `tau_cv`.
    pub escv_fell_back: bool,
    pub curves: StabilityCurve,
}

pub fn model_size(beta: &[f64]) -> usize {
    beta.iter().filter(|b| b.abs() > SUPPORT_TOL).count()
}

/// One Lasso path per fold, fitted on the rows outside the block.
pub fn fold_paths(ds: &Dataset, plan: &FoldPlan, cfg: &PathConfig) -> Result<Vec<LassoPath>> {
    check_plan(ds, plan)?;
    (0..plan.v())
        .into_par_iter()
        .map(|v| {
            let wrap = |e| Error::Fold {
                fold: v,
                source: Box::new(e),
            };
            let sub = ds.subset_rows(&plan.training(v)).map_err(wrap)?;
            fit_path(&sub, cfg).map_err(wrap)
        })
        .collect()
}

fn check_plan(ds: &Dataset, plan: &FoldPlan) -> Result<()> {
    if plan.n() != ds.n() {
        return Err(Error::InvalidInput(format!(
            "fold plan covers {} rows, dataset has {}",
            plan.n(),
            ds.n()
        )));
    }
    Ok(())
}

/// `size` equally spaced points from 0 to the smallest per-fold max τ.
pub fn common_tau_grid(paths: &[LassoPath], size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::InvalidInput(
            "tau grid needs at least 2 points".into(),
        ));
    }
    let upper = paths
        .iter()
        .map(LassoPath::max_tau)
        .fold(f64::INFINITY, f64::min);
    if !upper.is_finite() {
        return Err(Error::InvalidInput("no fold paths".into()));
    }
    Ok((0..size)
        .map(|k| {
            if k + 1 == size {
                upper
            } else {
                upper * k as f64 / (size - 1) as f64
            }
        })
        .collect())
}

/// Interpolates every fold path onto `tau_grid`.
pub fn fold_estimates(paths: &[LassoPath], tau_grid: &[f64]) -> Result<FoldBetas> {
    paths
        .iter()
        .enumerate()
        .map(|(v, path)| {
            tau_grid
                .iter()
                .map(|&t| path.interpolate_at_tau(t))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Fold {
                    fold: v,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Fitted values `Xβ̂_v(τ)` on the full design, indexed `[grid point]` as
/// `n × V` matrices.
fn fold_fits(fold_betas: &FoldBetas, ds: &Dataset) -> Result<Vec<DMatrix<f64>>> {
    let v = fold_betas.len();
    if v == 0 {
        return Err(Error::InvalidInput("no fold estimates".into()));
    }
    let g = fold_betas[0].len();
    let p = ds.p();
    if fold_betas
        .iter()
        .any(|f| f.len() != g || f.iter().any(|b| b.len() != p))
    {
        return Err(Error::InvalidInput(
            "fold estimates have inconsistent shapes".into(),
        ));
    }
    Ok((0..g)
        .map(|k| {
            let b = DMatrix::from_fn(p, v, |j, f| fold_betas[f][k][j]);
            ds.x() * b
        })
        .collect())
}

fn mean_columns(fits: &DMatrix<f64>) -> Vec<f64> {
    let v = fits.ncols() as f64;
    fits.row_iter().map(|r| r.sum() / v).collect()
}

/// Mean squared distance of the fold fits from their average.
fn spread(fits: &DMatrix<f64>, mhat: &[f64]) -> f64 {
    let v = fits.ncols() as f64;
    fits.column_iter()
        .map(|c| {
            c.iter()
                .zip(mhat)
                .map(|(a, m)| (a - m) * (a - m))
                .sum::<f64>()
        })
        .sum::<f64>()
        / v
}

/// `m̂(τ) = (1/V) Σ_v Xβ̂_v(τ)` with the full design.
pub fn compute_mhat(fold_betas: &FoldBetas, ds: &Dataset) -> Result<Vec<Vec<f64>>> {
    Ok(fold_fits(fold_betas, ds)?
        .iter()
        .map(mean_columns)
        .collect())
}

/// `T̂(τ) = ((n−d)/d) (1/V) Σ_v ‖Xβ̂_v(τ) − m̂(τ)‖²`.
pub fn compute_that(fold_betas: &FoldBetas, ds: &Dataset, plan: &FoldPlan) -> Result<Vec<f64>> {
    check_plan(ds, plan)?;
    let factor = jackknife_factor(ds.n(), plan.d());
    Ok(fold_fits(fold_betas, ds)?
        .iter()
        .map(|f| factor * spread(f, &mean_columns(f)))
        .collect())
}

fn jackknife_factor(n: usize, d: usize) -> f64 {
    (n - d) as f64 / d as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsCurve {
    pub es: Vec<Option<f64>>,
    pub z2: Vec<Option<f64>>,
    pub that: Vec<f64>,
    pub mhat: Vec<Vec<f64>>,
}

impl EsCurve {
    /// True when ES is undefined at every grid point.
    pub fn all_undefined(&self) -> bool {
        self.es.iter().all(Option::is_none)
    }
}

/// `ES(τ) = (1/V) Σ_v ‖Xβ̂_v − m̂‖² / ‖m̂‖²` together with `Z²` and `T̂`.
pub fn es_curve(fold_betas: &FoldBetas, ds: &Dataset, plan: &FoldPlan) -> Result<EsCurve> {
    check_plan(ds, plan)?;
    let factor = jackknife_factor(ds.n(), plan.d());
    let fits = fold_fits(fold_betas, ds)?;
    let mut out = EsCurve {
        es: Vec::with_capacity(fits.len()),
        z2: Vec::with_capacity(fits.len()),
        that: Vec::with_capacity(fits.len()),
        mhat: Vec::with_capacity(fits.len()),
    };
    for f in &fits {
        let m = mean_columns(f);
        let s = spread(f, &m);
        let that = factor * s;
        let norm2: f64 = m.iter().map(|v| v * v).sum();
        let defined = norm2 >= MHAT_FLOOR;
        out.es.push(defined.then(|| s / norm2));
        out.z2.push((defined && that > 0.0).then(|| norm2 / that));
        out.that.push(that);
        out.mhat.push(m);
    }
    Ok(out)
}

/// `(1/n) Σ_v Σ_{i ∈ block v} (y_i − x_iᵀβ̂_v(τ))²`.
pub fn cv_curve(fold_betas: &FoldBetas, ds: &Dataset, plan: &FoldPlan) -> Result<Vec<f64>> {
    check_plan(ds, plan)?;
    let fits = fold_fits(fold_betas, ds)?;
    Ok(cv_from_fits(&fits, ds, plan))
}

fn cv_from_fits(fits: &[DMatrix<f64>], ds: &Dataset, plan: &FoldPlan) -> Vec<f64> {
    let y = ds.y();
    let blocks = plan.assignments();
    fits.iter()
        .map(|f| {
            (0..ds.n())
                .map(|i| {
                    let r = y[i] - f[(i, blocks[i])];
                    r * r
                })
                .sum::<f64>()
                / ds.n() as f64
        })
        .collect()
}

/// Running median of width 3 over defined values. Points with an undefined
/// neighbour, and the two ends, are left as they are.
pub fn median_filter3(values: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut out = values.to_vec();
    for k in 1..values.len().saturating_sub(1) {
        if let (Some(a), Some(b), Some(c)) = (values[k - 1], values[k], values[k + 1]) {
            let mut w = [a, b, c];
            w.sort_by(f64::total_cmp);
            out[k] = Some(w[1]);
        }
    }
    out
}

/// Index of the largest grid τ minimizing CV (exact ties go to the larger τ).
pub fn cv_choice(cv_error: &[f64]) -> Option<usize> {
    let min = cv_error.iter().copied().fold(f64::INFINITY, f64::min);
    cv_error.iter().rposition(|&e| e == min)
}

/// Index of the largest grid τ at or below `cv_index` whose ES is within
/// [`ES_TIE_TOL`] of the minimum over that range, if any ES value there is
/// defined.
pub fn escv_choice(es: &[Option<f64>], cv_index: usize) -> Option<usize> {
    let eligible = &es[..=cv_index];
    let min = eligible
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return None;
    }
    eligible
        .iter()
        .rposition(|e| matches!(e, Some(v) if *v <= min + ES_TIE_TOL))
}

/// Builds the ES and CV curves from per-fold paths.
pub fn curves_from_paths(
    ds: &Dataset,
    plan: &FoldPlan,
    paths: &[LassoPath],
    tau_grid_size: usize,
) -> Result<StabilityCurve> {
    let tau_grid = common_tau_grid(paths, tau_grid_size)?;
    let betas = fold_estimates(paths, &tau_grid)?;
    let fits = fold_fits(&betas, ds)?;
    let cv_error = cv_from_fits(&fits, ds, plan);
    let es = es_curve(&betas, ds, plan)?;
    Ok(StabilityCurve {
        tau_grid,
        mhat: es.mhat,
        that: es.that,
        es: es.es,
        z2: es.z2,
        cv_error,
        v: plan.v(),
        d: plan.d(),
    })
}

/// Applies the ES-CV rule to `curves` and reads both selections off
/// `full_path`, the path fitted on all rows.
pub fn select_escv(
    curves: StabilityCurve,
    full_path: &LassoPath,
    median_filter: bool,
) -> Result<SelectionResult> {
    let k_cv = cv_choice(&curves.cv_error)
        .ok_or_else(|| Error::InvalidInput("empty stability curve".into()))?;
    let es = if median_filter {
        median_filter3(&curves.es)
    } else {
        curves.es.clone()
    };
    let (k_escv, fell_back) = match escv_choice(&es, k_cv) {
        Some(k) => (k, false),
        None => {
            warn!("ES undefined at every tau <= tau_cv; using the CV choice");
            (k_cv, true)
        }
    };
    let tau_cv = curves.tau_grid[k_cv];
    let tau_escv = curves.tau_grid[k_escv];
    let beta_cv = refit(full_path, tau_cv)?;
    let beta_escv = refit(full_path, tau_escv)?;
    Ok(SelectionResult {
        tau_cv,
        tau_escv,
        model_size_cv: model_size(&beta_cv),
        model_size_escv: model_size(&beta_escv),
        beta_cv,
        beta_escv,
        escv_fell_back: fell_back,
        curves,
    })
}

fn refit(path: &LassoPath, tau: f64) -> Result<Vec<f64>> {
    let max = path.max_tau();
    if tau > max {
        warn!("selected tau {tau} exceeds the full-data path ({max}); clamping");
        return path.interpolate_at_tau(max);
    }
    path.interpolate_at_tau(tau)
}

/// Standardizes `ds`, fits the fold and full-data paths, and selects.
pub fn run_escv(ds: &Dataset, plan: &FoldPlan, cfg: &StabilityConfig) -> Result<SelectionResult> {
    let ds = standardize(ds);
    let paths = fold_paths(&ds, plan, &cfg.path)?;
    let curves = curves_from_paths(&ds, plan, &paths, cfg.tau_grid_size)?;
    let full = fit_path(&ds, &cfg.path)?;
    select_escv(curves, &full, cfg.median_filter)
}
