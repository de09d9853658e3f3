//! Lasso by cyclic coordinate descent with active-set steps, over a λ grid,
//! indexed by the L1 norm.
//!
//! The objective is `‖y − Xβ‖² + λ‖β‖₁` with no `1/2` or `1/n` factor, so
//! every threshold below is `λ/2` and the all-zero solution starts at
//! `λ_max = 2·max_j |X_jᵀy|`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::io::write_table;

/// Squared ratio of the smallest to the largest Cholesky pivot below which
/// the support's Gram matrix counts as singular.
const SINGULAR_GRAM: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoOptions {
    /// Stop once no coordinate moves by more than this in a full sweep...
    pub tol: f64,
    /// ...and the KKT residual is below this.
    pub kkt_tol: f64,
    pub max_sweeps: usize,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            tol: 1e-9,
            kkt_tol: 1e-6,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub grid_size: usize,
    /// Smallest λ as a fraction of `λ_max`.
    pub floor_ratio: f64,
    pub solver: LassoOptions,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            grid_size: 100,
            floor_ratio: 1e-3,
            solver: LassoOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta: Vec<f64>,
    pub kkt_residual: f64,
    pub sweeps: usize,
}

/// Solutions over a descending λ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
    /// `‖β̂(λ)‖₁` for each λ.
    pub taus: Vec<f64>,
    pub objective_values: Vec<f64>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn soft(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn column(ds: &Dataset, j: usize) -> &[f64] {
    let n = ds.n();
    &ds.x().as_slice()[j * n..(j + 1) * n]
}

fn fitted_residual(ds: &Dataset, beta: &[f64]) -> Vec<f64> {
    let mut r = ds.y().as_slice().to_vec();
    for (j, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (ri, xi) in r.iter_mut().zip(column(ds, j)) {
                *ri -= b * xi;
            }
        }
    }
    r
}

/// Columns that take part in the fit: nonzero and not flagged constant.
fn fit_columns(ds: &Dataset) -> Vec<bool> {
    (0..ds.p())
        .map(|j| !ds.constant_columns()[j] && column(ds, j).iter().any(|&v| v != 0.0))
        .collect()
}

/// `2·max_j |X_jᵀy|`, the smallest λ whose solution is all zero.
pub fn lambda_max(ds: &Dataset) -> f64 {
    let y = ds.y().as_slice();
    let usable = fit_columns(ds);
    (0..ds.p())
        .filter(|&j| usable[j])
        .map(|j| 2.0 * dot(column(ds, j), y).abs())
        .fold(0.0, f64::max)
}

/// `‖y − Xβ‖² + λ‖β‖₁`.
pub fn objective(ds: &Dataset, beta: &[f64], lambda: f64) -> f64 {
    let r = fitted_residual(ds, beta);
    dot(&r, &r) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

/// Largest violation of the subgradient optimality conditions
/// `2X_jᵀ(y − Xβ) ∈ λ·∂|β_j|`.
pub fn kkt_residual(ds: &Dataset, beta: &[f64], lambda: f64) -> f64 {
    let r = fitted_residual(ds, beta);
    kkt_from_residual(ds, beta, lambda, &r)
}

fn kkt_from_residual(ds: &Dataset, beta: &[f64], lambda: f64, r: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..ds.p() {
        let g = 2.0 * dot(column(ds, j), r);
        let v = if beta[j] == 0.0 {
            (g.abs() - lambda).max(0.0)
        } else {
            (g - lambda * beta[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Minimizes the Lasso objective at one λ.
pub fn lasso_fit(
    ds: &Dataset,
    lambda: f64,
    warm_start: Option<&[f64]>,
    opts: &LassoOptions,
) -> Result<LassoFit> {
    let p = ds.p();
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let usable = fit_columns(ds);
    if lambda > 0.0 && lambda >= lambda_max(ds) {
        return Ok(LassoFit {
            beta: vec![0.0; p],
            kkt_residual: 0.0,
            sweeps: 0,
        });
    }
    let mut beta = match warm_start {
        Some(w) if w.len() == p => w
            .iter()
            .zip(&usable)
            .map(|(&b, &u)| if u { b } else { 0.0 })
            .collect(),
        Some(w) => {
            return Err(Error::InvalidInput(format!(
                "warm start has {} entries, p = {p}",
                w.len()
            )))
        }
        None => vec![0.0; p],
    };
    let norms: Vec<f64> = (0..p).map(|j| dot(column(ds, j), column(ds, j))).collect();
    let half = 0.5 * lambda;
    let mut r = fitted_residual(ds, &beta);

    let update = |j: usize, beta: &mut [f64], r: &mut [f64]| -> f64 {
        let xj = column(ds, j);
        let old = beta[j];
        let rho = dot(xj, r) + norms[j] * old;
        let new = soft(rho, half) / norms[j];
        let delta = new - old;
        if delta != 0.0 {
            for (ri, xi) in r.iter_mut().zip(xj) {
                *ri -= delta * xi;
            }
            beta[j] = new;
        }
        delta.abs()
    };

    let mut sweeps = 0;
    let mut kkt = f64::INFINITY;
    while sweeps < opts.max_sweeps {
        // full pass
        let mut change = 0.0f64;
        for j in 0..p {
            if usable[j] {
                change = change.max(update(j, &mut beta, &mut r));
            }
        }
        sweeps += 1;
        if change < opts.tol {
            r = fitted_residual(ds, &beta);
            kkt = kkt_from_residual(ds, &beta, lambda, &r);
            if kkt <= opts.kkt_tol {
                return Ok(LassoFit {
                    beta,
                    kkt_residual: kkt,
                    sweeps,
                });
            }
        }
        if let Some(b) = descend_sign_pattern(ds, &beta, half) {
            beta = b;
            r = fitted_residual(ds, &beta);
        }
    }
    if !kkt.is_finite() {
        kkt = kkt_residual(ds, &beta, lambda);
    }
    Err(Error::LassoNotConverged {
        lambda,
        sweeps,
        kkt_residual: kkt,
        last_iterate: beta,
    })
}

/// Primal active-set descent on the support of `beta` with its signs held
/// fixed. Each step moves toward the minimizer of `‖y − X_A β_A‖² + λ s_Aᵀβ_A`,
/// or along a null direction of `X_A` that does not raise `s_Aᵀβ_A` when
/// `X_A` is rank deficient, and stops at the first coefficient that reaches
/// zero, which then leaves the support. The objective never increases.
fn descend_sign_pattern(ds: &Dataset, beta: &[f64], half: f64) -> Option<Vec<f64>> {
    let y = ds.y().as_slice();
    let mut cur = beta.to_vec();
    let mut active: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
    if active.is_empty() {
        return None;
    }
    while !active.is_empty() {
        let k = active.len();
        let gram = DMatrix::from_fn(k, k, |a, b| {
            dot(column(ds, active[a]), column(ds, active[b]))
        });
        let signs = DVector::from_fn(k, |a, _| cur[active[a]].signum());
        let full_rank = gram.clone().cholesky().filter(|ch| {
            let d = ch.l_dirty().diagonal();
            let (lo, hi) = (d.min(), d.max());
            lo > 0.0 && lo * lo >= SINGULAR_GRAM * hi * hi
        });
        // target point for a step to the optimum, or a direction for a null step
        let (target, null_step) = match full_rank {
            Some(ch) => {
                let rhs =
                    DVector::from_fn(k, |a, _| dot(column(ds, active[a]), y) - half * signs[a]);
                (ch.solve(&rhs), false)
            }
            None => {
                let eig = gram.symmetric_eigen();
                let (imin, _) = eig.eigenvalues.argmin();
                let mut d = eig.eigenvectors.column(imin).into_owned();
                if d.dot(&signs) > 0.0 {
                    d = -d;
                }
                (d, true)
            }
        };
        if target.iter().any(|v| !v.is_finite()) {
            return Some(cur);
        }
        // direction of travel per active coordinate
        let dir = |a: usize| {
            if null_step {
                target[a]
            } else {
                target[a] - cur[active[a]]
            }
        };
        // shortest step at which a coefficient crosses zero
        let mut block: Option<(usize, f64)> = None;
        for (a, &j) in active.iter().enumerate() {
            let dj = dir(a);
            if dj * cur[j] < 0.0 {
                let t = -cur[j] / dj;
                if block.is_none_or(|(_, tb)| t < tb) {
                    block = Some((a, t));
                }
            }
        }
        match block {
            Some((hit, t)) if null_step || t < 1.0 => {
                let before = (null_step).then(|| objective(ds, &cur, 2.0 * half));
                let mut next = cur.clone();
                for (a, &j) in active.iter().enumerate() {
                    next[j] += t * dir(a);
                }
                next[active[hit]] = 0.0;
                if let Some(f0) = before {
                    if objective(ds, &next, 2.0 * half) > f0 * (1.0 + 1e-12) {
                        return Some(cur);
                    }
                }
                cur = next;
                active.retain(|&j| cur[j] != 0.0);
            }
            None if null_step => return Some(cur),
            _ => {
                for (a, &j) in active.iter().enumerate() {
                    cur[j] = target[a];
                }
                return Some(cur);
            }
        }
    }
    Some(cur)
}

/// Log-spaced grid from `λ_max` down to `λ_max·floor_ratio`.
pub fn lambda_grid(lmax: f64, cfg: &PathConfig) -> Vec<f64> {
    let g = cfg.grid_size;
    (0..g)
        .map(|k| {
            if k == 0 {
                lmax
            } else {
                lmax * cfg.floor_ratio.powf(k as f64 / (g - 1) as f64)
            }
        })
        .collect()
}

/// Fits the whole path with warm starts.
pub fn fit_path(ds: &Dataset, cfg: &PathConfig) -> Result<LassoPath> {
    if cfg.grid_size < 2 {
        return Err(Error::InvalidInput("grid_size must be at least 2".into()));
    }
    if !(cfg.floor_ratio > 0.0 && cfg.floor_ratio < 1.0) {
        return Err(Error::InvalidInput("floor_ratio must lie in (0, 1)".into()));
    }
    let lmax = lambda_max(ds);
    let lambdas = lambda_grid(lmax, cfg);
    let p = ds.p();
    let mut betas: Vec<Vec<f64>> = Vec::with_capacity(lambdas.len());
    let mut prev = vec![0.0; p];
    for &lam in &lambdas {
        let beta = if lam >= lmax {
            vec![0.0; p]
        } else {
            lasso_fit(ds, lam, Some(&prev), &cfg.solver)?.beta
        };
        prev.clone_from(&beta);
        betas.push(beta);
    }
    let taus: Vec<f64> = betas
        .iter()
        .map(|b| b.iter().map(|v| v.abs()).sum())
        .collect();
    for (k, w) in taus.windows(2).enumerate() {
        if w[1] < w[0] - 1e-8 {
            log::warn!(
                "tau decreased along the path at lambda={}: {} -> {}",
                lambdas[k + 1],
                w[0],
                w[1]
            );
        }
    }
    let objective_values = lambdas
        .iter()
        .zip(&betas)
        .map(|(&l, b)| objective(ds, b, l))
        .collect();
    Ok(LassoPath {
        lambdas,
        betas,
        taus,
        objective_values,
    })
}

impl LassoPath {
    pub fn max_tau(&self) -> f64 {
        self.taus.iter().copied().fold(0.0, f64::max)
    }

    pub fn p(&self) -> usize {
        self.betas.first().map_or(0, Vec::len)
    }

    /// Coefficients with L1 norm `tau`, by linear interpolation between the
    /// two path points that bracket it.
    ///
    /// Knots are returned verbatim. Between knots the interpolant is rescaled
    /// onto the L1 sphere of radius `tau`, which matters only when the two
    /// knots disagree in sign on some coordinate.
    pub fn interpolate_at_tau(&self, tau: f64) -> Result<Vec<f64>> {
        let max_tau = self.max_tau();
        if !(tau >= 0.0 && tau <= max_tau) {
            return Err(Error::TauOutOfRange { tau, max_tau });
        }
        if let Some(k) = self.taus.iter().position(|&t| t == tau) {
            return Ok(self.betas[k].clone());
        }
        let k = self
            .taus
            .windows(2)
            .position(|w| w[0] <= tau && tau <= w[1] && w[1] > w[0])
            .ok_or(Error::TauOutOfRange { tau, max_tau })?;
        let (t0, t1) = (self.taus[k], self.taus[k + 1]);
        let w = (tau - t0) / (t1 - t0);
        let mut beta: Vec<f64> = self.betas[k]
            .iter()
            .zip(&self.betas[k + 1])
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect();
        let l1: f64 = beta.iter().map(|v| v.abs()).sum();
        if l1 > 0.0 {
            let s = tau / l1;
            beta.iter_mut().for_each(|v| *v *= s);
        }
        Ok(beta)
    }

    /// One row per λ: `lambda, tau, objective`, then the coefficients.
    pub fn write_csv<W: Write>(&self, writer: W, names: Option<&[String]>) -> Result<()> {
        let mut header = vec!["lambda".to_string(), "tau".into(), "objective".into()];
        match names {
            Some(n) => header.extend(n.iter().cloned()),
            None => header.extend((1..=self.p()).map(|j| format!("b{j}"))),
        }
        let rows = (0..self.lambdas.len()).map(|k| {
            let mut row = vec![self.lambdas[k], self.taus[k], self.objective_values[k]];
            row.extend(&self.betas[k]);
            row
        });
        write_table(writer, &header, rows)
    }
}
