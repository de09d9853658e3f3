//! Unpenalized M-estimators: least squares, least absolute deviation and
//! Huber regression.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::loss::LossSpec;

/// Smallest singular value allowed, relative to the largest.
pub const RANK_TOL: f64 = 1e-10;
/// Smoothing levels for the LAD weights `1/max(|r|, η)`.
pub const LAD_ETA_SCHEDULE: [f64; 7] = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
/// Relative objective agreement required between the final LAD fit and a
/// rerun at one tenth of the final η.
pub const LAD_VERIFY_TOL: f64 = 1e-6;

const STEP_TOL: f64 = 1e-10;
const STAGE_ITERS: usize = 25;
const STAGE_OBJ_TOL: f64 = 1e-8;
const VERIFY_ITERS: usize = 50;
const HUBER_ITERS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    /// `‖β̂‖₂`.
    pub norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `Σᵢ ρ(yᵢ − xᵢᵀβ̂)`.
    pub objective: f64,
}

impl FitResult {
    fn new(beta: DVector<f64>, objective: f64, iterations: usize, converged: bool) -> Self {
        FitResult {
            norm: beta.norm(),
            beta_hat: beta.as_slice().to_vec(),
            iterations,
            converged,
            objective,
        }
    }
}

/// `Σᵢ ρ(yᵢ − xᵢᵀβ)`.
pub fn m_objective(ds: &Dataset, loss: LossSpec, beta: &[f64]) -> f64 {
    residuals(ds, &DVector::from_column_slice(beta))
        .iter()
        .map(|&r| loss.rho(r))
        .sum()
}

fn residuals(ds: &Dataset, beta: &DVector<f64>) -> DVector<f64> {
    ds.y() - ds.x() * beta
}

fn check_shape(ds: &Dataset) -> Result<()> {
    if ds.n() <= ds.p() {
        return Err(Error::InvalidInput(format!(
            "M-estimation needs n > p, got n={}, p={}",
            ds.n(),
            ds.p()
        )));
    }
    Ok(())
}

fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    let sv = x.clone().singular_values();
    let largest = sv.max();
    let smallest = sv.min();
    let tolerance = RANK_TOL * largest;
    if !(smallest > tolerance) {
        return Err(Error::RankDeficient {
            smallest,
            tolerance,
        });
    }
    Ok(())
}

fn qr_solve(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let p = x.ncols();
    let qr = x.clone().qr();
    let qty = qr.q().tr_mul(y);
    let rhs = qty.rows(0, p).into_owned();
    qr.r().solve_upper_triangular(&rhs)
}

/// Least squares through a QR factorization, with one refinement step when
/// the normal-equation residual is not small enough.
pub fn fit_ols(ds: &Dataset) -> Result<FitResult> {
    check_shape(ds)?;
    let x = ds.x();
    check_rank(x)?;
    let y = ds.y();
    let mut beta = qr_solve(x, y).ok_or_else(|| Error::RankDeficient {
        smallest: 0.0,
        tolerance: RANK_TOL,
    })?;
    let scale = x.tr_mul(y).amax();
    let mut r = residuals(ds, &beta);
    if x.tr_mul(&r).amax() > 1e-8 * scale {
        if let Some(delta) = qr_solve(x, &r) {
            beta += delta;
            r = residuals(ds, &beta);
        }
    }
    let converged = x.tr_mul(&r).amax() <= 1e-8 * scale.max(f64::MIN_POSITIVE);
    Ok(FitResult::new(beta, r.norm_squared(), 1, converged))
}

/// Solves `XᵀWX β = XᵀWy`.
fn weighted_solve(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Option<DVector<f64>> {
    let mut xw = x.clone();
    for mut col in xw.column_iter_mut() {
        col.component_mul_assign(w);
    }
    let gram = xw.tr_mul(x);
    let rhs = xw.tr_mul(y);
    if let Some(ch) = gram.cholesky() {
        return Some(ch.solve(&rhs));
    }
    // fall back to QR of √W·X
    let sw = w.map(f64::sqrt);
    let mut xs = x.clone();
    for mut col in xs.column_iter_mut() {
        col.component_mul_assign(&sw);
    }
    qr_solve(&xs, &y.component_mul(&sw))
}

struct Stage {
    beta: DVector<f64>,
    iterations: usize,
    converged: bool,
}

/// IRLS iterations with the given weight function until the largest
/// coefficient step is below tolerance.
fn irls<F>(ds: &Dataset, start: DVector<f64>, max_iter: usize, weight: F) -> Stage
where
    F: Fn(f64) -> f64,
{
    let x = ds.x();
    let y = ds.y();
    let mut beta = start;
    for it in 1..=max_iter {
        let r = residuals(ds, &beta);
        let w = r.map(&weight);
        let Some(next) = weighted_solve(x, y, &w) else {
            return Stage {
                beta,
                iterations: it,
                converged: false,
            };
        };
        let step = (&next - &beta).amax();
        beta = next;
        if step <= STEP_TOL * beta.amax().max(1.0) {
            return Stage {
                beta,
                iterations: it,
                converged: true,
            };
        }
    }
    Stage {
        beta,
        iterations: max_iter,
        converged: false,
    }
}

fn l1(r: &DVector<f64>) -> f64 {
    r.iter().map(|v| v.abs()).sum()
}

/// An optimal LAD vertex: `p` rows fitted exactly, with the dual bound
/// that certifies it.
struct Vertex {
    beta: DVector<f64>,
    objective: f64,
    dual_max: f64,
    pivots: usize,
}

const DUAL_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 50;

/// Simplex-type descent over LAD vertices, starting from the `p` rows that
/// `start` fits best.
///
/// At a vertex with basis `B`, the subgradient condition is `X_Bᵀd = −X_Nᵀs_N`
/// with `s` the residual signs off the basis; `|d|_∞ ≤ 1` proves optimality.
/// Otherwise the row with the largest `|d_k|` leaves and the line search
/// along the freed edge picks the entering row.
fn vertex_descent(ds: &Dataset, start: &DVector<f64>) -> Option<Vertex> {
    let (x, y) = (ds.x(), ds.y());
    let (n, p) = x.shape();
    const OUT: usize = usize::MAX;
    let r0 = residuals(ds, start);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| r0[a].abs().total_cmp(&r0[b].abs()));
    let mut basis: Vec<usize> = order[..p].to_vec();
    let mut slot = vec![OUT; n];
    for (s, &i) in basis.iter().enumerate() {
        slot[i] = s;
    }
    let refactor = |basis: &[usize]| -> Option<(DMatrix<f64>, DVector<f64>)> {
        let inv = x.select_rows(basis.iter()).try_inverse()?;
        let beta = &inv * DVector::from_iterator(p, basis.iter().map(|&i| y[i]));
        Some((inv, beta))
    };
    let (mut binv, mut beta) = refactor(&basis)?;
    let mut breakpoints: Vec<(f64, f64)> = Vec::with_capacity(n);
    for pivots in 0..10 * n + 100 {
        let mut r = y - x * &beta;
        let mut s = DVector::zeros(n);
        for i in 0..n {
            if slot[i] == OUT {
                if r[i] != 0.0 {
                    s[i] = r[i].signum();
                }
            } else {
                r[i] = 0.0;
            }
        }
        let d = -binv.tr_mul(&x.tr_mul(&s));
        let k = d.iamax();
        if d[k].abs() <= 1.0 + DUAL_TOL {
            return Some(Vertex {
                objective: l1(&r),
                dual_max: d[k].abs(),
                beta,
                pivots,
            });
        }
        let delta = binv.column(k) * -d[k].signum();
        let a = x * &delta;
        // slope of Σ|r_i − t·a_i| at t = 0⁺; the leaving row contributes 1
        let mut slope = 1.0;
        breakpoints.clear();
        for i in 0..n {
            if slot[i] != OUT || a[i] == 0.0 {
                continue;
            }
            if r[i] == 0.0 {
                slope += a[i].abs();
                continue;
            }
            slope -= s[i] * a[i];
            let t = r[i] / a[i];
            if t > 0.0 {
                breakpoints.push((t, i as f64));
            }
        }
        breakpoints.sort_by(|u, v| u.0.total_cmp(&v.0));
        let mut entering = None;
        for &(t, i) in &breakpoints {
            let i = i as usize;
            slope += 2.0 * a[i].abs();
            if slope >= 0.0 {
                entering = Some((t, i));
                break;
            }
        }
        let (t, j) = entering?;
        beta += &delta * t;
        let leaving = basis[k];
        slot[leaving] = OUT;
        slot[j] = k;
        basis[k] = j;
        if (pivots + 1) % REFACTOR_EVERY == 0 {
            (binv, beta) = refactor(&basis)?;
        } else {
            // Sherman–Morrison for replacing row k of X_B
            let u = (x.row(j) - x.row(leaving)).transpose();
            let col = binv.column(k).into_owned();
            let denom = 1.0 + u.dot(&col);
            if denom.abs() < 1e-14 {
                (binv, beta) = refactor(&basis)?;
            } else {
                let urow = u.tr_mul(&binv);
                binv -= &col * urow / denom;
            }
        }
    }
    None
}

/// Least absolute deviation by smoothed IRLS with continuation in η.
///
/// After each smoothing level the fit is handed to an exact vertex descent;
/// once a vertex is certified optimal the remaining levels are skipped. The
/// result must agree in objective with an IRLS rerun at one tenth of the
/// smallest η.
pub fn fit_lad(ds: &Dataset) -> Result<FitResult> {
    check_shape(ds)?;
    check_rank(ds.x())?;
    let (x, y) = (ds.x(), ds.y());
    let floor = 1e-12 * y.iter().map(|v| v.abs()).sum::<f64>();
    let mut beta = DVector::from_vec(fit_ols(ds)?.beta_hat);
    let mut best = l1(&residuals(ds, &beta));
    let mut iterations = 0;
    let mut certified = best <= floor;
    for &eta in LAD_ETA_SCHEDULE.iter() {
        if certified {
            break;
        }
        let mut f_prev = best;
        for _ in 0..STAGE_ITERS {
            let w = residuals(ds, &beta).map(|r| 1.0 / r.abs().max(eta));
            let Some(next) = weighted_solve(x, y, &w) else {
                break;
            };
            iterations += 1;
            let step = (&next - &beta).amax();
            beta = next;
            let f = l1(&residuals(ds, &beta));
            let settled =
                (f_prev - f).abs() <= STAGE_OBJ_TOL * f || step <= STEP_TOL * beta.amax().max(1.0);
            f_prev = f;
            if settled {
                break;
            }
        }
        best = f_prev;
        match vertex_descent(ds, &beta) {
            Some(v) if v.objective <= best => {
                debug!(
                    "LAD vertex at eta={eta:e}: {best} -> {} after {} pivots (dual {})",
                    v.objective, v.pivots, v.dual_max
                );
                iterations += v.pivots;
                best = v.objective;
                beta = v.beta;
                certified = true;
            }
            _ => debug!("LAD vertex descent gave no certificate at eta={eta:e}"),
        }
    }

    let eta = LAD_ETA_SCHEDULE[LAD_ETA_SCHEDULE.len() - 1] / 10.0;
    let check = irls(ds, beta.clone(), VERIFY_ITERS, |r| 1.0 / r.abs().max(eta));
    iterations += check.iterations;
    let verify = l1(&residuals(ds, &check.beta));
    let agree = (verify - best).abs() <= LAD_VERIFY_TOL * best + floor;
    if verify < best {
        best = verify;
        beta = check.beta;
    }
    if !agree {
        return Err(Error::NotConverged {
            method: "lad",
            objective: best,
            detail: format!(
                "verification at eta={eta:e} gave {verify} (vertex certified: {certified})"
            ),
            best_iterate: beta.as_slice().to_vec(),
        });
    }
    Ok(FitResult::new(beta, best, iterations, true))
}

/// Huber regression by IRLS with weights `min(1, δ/|r|)`.
pub fn fit_huber(ds: &Dataset, delta: f64) -> Result<FitResult> {
    LossSpec::Huber { delta }.validate()?;
    check_shape(ds)?;
    let start = DVector::from_vec(fit_ols(ds)?.beta_hat);
    let stage = irls(ds, start, HUBER_ITERS, |r| {
        let a = r.abs();
        if a <= delta {
            1.0
        } else {
            delta / a
        }
    });
    let loss = LossSpec::Huber { delta };
    let objective = m_objective(ds, loss, stage.beta.as_slice());
    if !stage.converged {
        return Err(Error::NotConverged {
            method: "huber",
            objective,
            detail: format!("{} IRLS iterations", stage.iterations),
            best_iterate: stage.beta.as_slice().to_vec(),
        });
    }
    Ok(FitResult::new(
        stage.beta,
        objective,
        stage.iterations,
        true,
    ))
}

/// Minimizes `Σᵢ ρ(yᵢ − xᵢᵀβ)` for the given loss.
pub fn fit_m(ds: &Dataset, loss: LossSpec) -> Result<FitResult> {
    loss.validate()?;
    match loss {
        LossSpec::Squared => fit_ols(ds),
        LossSpec::Absolute => fit_lad(ds),
        LossSpec::Huber { delta } => fit_huber(ds, delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(y: &[f64]) -> Dataset {
        Dataset::new(
            DVector::from_column_slice(y),
            DMatrix::from_element(y.len(), 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn intercept_only() {
        let ds = ones(&[3.0, -1.0, 4.0, 1.0, 5.0]);
        let ols = fit_ols(&ds).unwrap();
        assert!((ols.beta_hat[0] - 2.4).abs() < 1e-14);
        let lad = fit_lad(&ds).unwrap();
        // median 3: |0| + 4 + 1 + 2 + 2
        assert!((lad.objective - 9.0).abs() < 1e-9);
    }

    #[test]
    fn even_sample_median_objective() {
        let ds = ones(&[1.0, 2.0, 10.0, 11.0]);
        let lad = fit_lad(&ds).unwrap();
        assert!((lad.objective - 18.0).abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_rejected() {
        let x = DMatrix::from_fn(5, 2, |i, _| i as f64);
        let ds = Dataset::new(DVector::from_element(5, 1.0), x).unwrap();
        assert!(matches!(fit_ols(&ds), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn needs_more_rows_than_columns() {
        let x = DMatrix::from_fn(2, 2, |i, j| (i + j * 3) as f64);
        let ds = Dataset::new(DVector::from_element(2, 1.0), x).unwrap();
        assert!(matches!(fit_lad(&ds), Err(Error::InvalidInput(_))));
    }
}
