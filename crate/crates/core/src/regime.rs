//! Limiting norm of unpenalized M-estimators when `p/n → κ ∈ (0, 1)`.
//!
//! With `Σ = I` and `β = 0`, the estimator norm converges to `r`, which
//! solves, jointly with some `c ≥ 0`,
//!
//! ```text
//! E[ prox_c(ρ)'(ẑ) ]            = 1 − κ
//! E[ (ẑ − prox_c(ρ)(ẑ))² ]      = κ r²,      ẑ = ε + r·Z
//! ```
//!
//! The first equation is solved for `c` at fixed `r` (its left side falls
//! monotonically in `c`), the second by a bracketed scalar search in `r`.
//! Every prox derivative handled here is a step function, so the first
//! expectation is a sum of interval probabilities of `ẑ`; the second is a
//! Gauss–Kronrod integral against the density of `ẑ`, split where the prox
//! has corners.

use roots::{find_root_brent, Convergency};
use serde::{Deserialize, Serialize};

use crate::dist::{Convolved, ErrorDist};
use crate::error::{Error, Result};
use crate::loss::{LossSpec, ProxSpec};
use crate::quadrature::{integrate_real_line, Estimate, QuadOptions};

/// Absolute tolerance required of both equation residuals.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Largest acceptable quadrature error estimate, relative to `max(1, |value|)`.
pub const QUAD_TOL: f64 = 1e-10;

impl From<LossSpec> for ProxSpec {
    fn from(loss: LossSpec) -> Self {
        ProxSpec::new(loss)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeSolution {
    pub kappa: f64,
    pub loss: LossSpec,
    pub loss_scale: f64,
    pub error_dist: ErrorDist,
    pub r: f64,
    pub c: f64,
    pub residuals: [f64; 2],
    pub quadrature_error_estimate: f64,
}

/// `E[g(ε + r·Z)]`, integrating against the density of the sum.
///
/// `breakpoints` are points where `g` is not smooth.
pub fn zhat_expectation<G: Fn(f64) -> f64>(
    g: G,
    r: f64,
    dist: &ErrorDist,
    breakpoints: &[f64],
) -> Result<Estimate> {
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "r must be nonnegative, got {r}"
        )));
    }
    dist.validate()?;
    let law = dist.convolve(r);
    if law.is_degenerate() {
        return Ok(Estimate {
            value: g(0.0),
            error: 0.0,
        });
    }
    let mut pts = breakpoints.to_vec();
    pts.extend(law.kinks());
    // anchor the partition on the bulk of the density so that far-out
    // breakpoints cannot produce one wide panel that skips the mass
    let sd = law.variance().sqrt();
    pts.push(0.0);
    for k in [1.0, 4.0, 16.0, 64.0] {
        pts.push(k * sd);
        pts.push(-k * sd);
    }
    let est = integrate_real_line(|x| g(x) * law.pdf(x), &pts, &QuadOptions::default())?;
    if est.error > QUAD_TOL * est.value.abs().max(1.0) {
        return Err(Error::Quadrature {
            estimate: est.value,
            error: est.error,
        });
    }
    Ok(est)
}

/// `E[prox_c'(ẑ)]`, exact up to the tail-function accuracy.
pub fn expected_prox_derivative(spec: &ProxSpec, c: f64, law: &Convolved) -> f64 {
    spec.derivative_pieces(c)
        .iter()
        .map(|p| p.slope * law.prob_between(p.lo, p.hi))
        .sum()
}

/// `E[(ẑ − prox_c(ẑ))²]`.
pub fn expected_sq_prox_residual(
    spec: &ProxSpec,
    c: f64,
    r: f64,
    dist: &ErrorDist,
) -> Result<Estimate> {
    zhat_expectation(
        |x| {
            let d = spec.prox_residual(c, x);
            d * d
        },
        r,
        dist,
        &spec.breakpoints(c),
    )
}

/// `r² = κσ²/(1 − κ)` for squared loss.
pub fn squared_loss_r(kappa: f64, variance: f64) -> f64 {
    (kappa * variance / (1.0 - kappa)).sqrt()
}

/// `c = κ/(2(1 − κ))` for `ρ(y) = y²`.
pub fn squared_loss_c(kappa: f64) -> f64 {
    kappa / (2.0 * (1.0 - kappa))
}

struct Tol {
    f_tol: f64,
    x_rel: f64,
    max_iter: usize,
}

impl Convergency<f64> for Tol {
    fn is_root_found(&mut self, y: f64) -> bool {
        y.abs() <= self.f_tol
    }
    fn is_converged(&mut self, x1: f64, x2: f64) -> bool {
        (x1 - x2).abs() <= self.x_rel * x1.abs().max(x2.abs()).max(f64::MIN_POSITIVE)
    }
    fn is_iteration_limit_reached(&mut self, iter: usize) -> bool {
        iter >= self.max_iter
    }
}

/// Solves the first equation for `c` with `r` held fixed.
fn solve_c(spec: &ProxSpec, law: &Convolved, kappa: f64, guess: f64) -> Result<f64> {
    let target = 1.0 - kappa;
    let f = |c: f64| expected_prox_derivative(spec, c, law) - target;
    // f(0+) = κ > 0 and f decreases to −(1 − κ)
    let mut lo = (guess * 0.5).max(1e-300);
    let mut hi = guess.max(1e-12) * 2.0;
    let mut tries = 0;
    while f(lo) < 0.0 {
        lo *= 0.01;
        tries += 1;
        if tries > 200 {
            return Err(Error::Bracket {
                lo,
                hi,
                detail: "first equation: no positive value near c = 0".into(),
            });
        }
    }
    tries = 0;
    while f(hi) > 0.0 {
        hi *= 4.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::Bracket {
                lo,
                hi,
                detail: "first equation: no negative value for large c".into(),
            });
        }
    }
    let mut tol = Tol {
        f_tol: 1e-15,
        x_rel: 4.0 * f64::EPSILON,
        max_iter: 400,
    };
    find_root_brent(lo, hi, f, &mut tol).map_err(|e| Error::Bracket {
        lo,
        hi,
        detail: format!("first equation: {e:?}"),
    })
}

fn default_c_guess(spec: &ProxSpec, kappa: f64) -> f64 {
    squared_loss_c(kappa) / spec.scale
}

/// Solves the two-equation system at one `κ`.
pub fn solve_system(
    spec: impl Into<ProxSpec>,
    dist: &ErrorDist,
    kappa: f64,
) -> Result<RegimeSolution> {
    solve_system_from(spec.into(), dist, kappa, None)
}

/// As [`solve_system`], with an optional warm start `(r, c)`.
pub fn solve_system_from(
    spec: ProxSpec,
    dist: &ErrorDist,
    kappa: f64,
    warm: Option<(f64, f64)>,
) -> Result<RegimeSolution> {
    solve_inner(spec, dist, kappa, warm).map_err(|e| Error::Regime {
        kappa,
        source: Box::new(e),
    })
}

fn solve_inner(
    spec: ProxSpec,
    dist: &ErrorDist,
    kappa: f64,
    warm: Option<(f64, f64)>,
) -> Result<RegimeSolution> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::InvalidInput(format!(
            "kappa must lie in (0, 1), got {kappa}"
        )));
    }
    spec.loss.validate()?;
    dist.validate()?;
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(Error::InvalidInput("loss scale must be positive".into()));
    }
    let variance = dist.variance();
    if variance <= 0.0 {
        return Err(Error::InvalidInput(
            "error distribution must have positive variance".into(),
        ));
    }

    let c_seed = warm
        .map(|w| w.1)
        .unwrap_or_else(|| default_c_guess(&spec, kappa));
    let c_cell = std::cell::Cell::new(c_seed);
    let first_err = std::cell::RefCell::new(None::<Error>);

    // second-equation residual with c eliminated through the first
    let h = |r: f64| -> f64 {
        let law = dist.convolve(r);
        let c = match solve_c(&spec, &law, kappa, c_cell.get()) {
            Ok(c) => c,
            Err(e) => {
                first_err.borrow_mut().get_or_insert(e);
                return f64::NAN;
            }
        };
        c_cell.set(c);
        match expected_sq_prox_residual(&spec, c, r, dist) {
            Ok(e) => e.value - kappa * r * r,
            Err(e) => {
                first_err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        }
    };

    let r0 = warm
        .map(|w| w.0)
        .unwrap_or_else(|| squared_loss_r(kappa, variance));
    let (mut lo, mut hi) = match warm {
        Some(_) => (r0 / 1.25, r0 * 1.25),
        None => (r0 / 4.0, r0 * 4.0),
    };
    let scanned = |lo: f64, hi: f64, what: &str| Error::Bracket {
        lo,
        hi,
        detail: format!("second equation: {what}"),
    };
    let mut h_lo = h(lo);
    let mut expansions = 0;
    while h_lo <= 0.0 {
        if let Some(e) = first_err.borrow_mut().take() {
            return Err(e);
        }
        lo /= 4.0;
        h_lo = h(lo);
        expansions += 1;
        if expansions > 60 {
            return Err(scanned(lo, hi, "no positive residual at small r"));
        }
    }
    let mut h_hi = h(hi);
    expansions = 0;
    while h_hi >= 0.0 {
        if let Some(e) = first_err.borrow_mut().take() {
            return Err(e);
        }
        hi *= 4.0;
        h_hi = h(hi);
        expansions += 1;
        if expansions > 60 {
            return Err(scanned(lo, hi, "no negative residual at large r"));
        }
    }
    if h_lo.is_nan() || h_hi.is_nan() {
        if let Some(e) = first_err.borrow_mut().take() {
            return Err(e);
        }
    }

    let mut tol = Tol {
        f_tol: 1e-12,
        x_rel: 2.0 * f64::EPSILON,
        max_iter: 400,
    };
    let r = find_root_brent(lo, hi, h, &mut tol).map_err(|e| scanned(lo, hi, &format!("{e:?}")))?;
    if let Some(e) = first_err.borrow_mut().take() {
        return Err(e);
    }

    // certificate at the returned point
    let law = dist.convolve(r);
    let c = solve_c(&spec, &law, kappa, c_cell.get())?;
    let res1 = expected_prox_derivative(&spec, c, &law) - (1.0 - kappa);
    let second = expected_sq_prox_residual(&spec, c, r, dist)?;
    let res2 = second.value - kappa * r * r;
    if res1.abs() > RESIDUAL_TOL || res2.abs() > RESIDUAL_TOL {
        return Err(Error::NotConverged {
            method: "regime system",
            objective: res2,
            detail: format!("residuals ({res1:e}, {res2:e}) at r={r}, c={c}"),
            best_iterate: vec![r, c],
        });
    }
    Ok(RegimeSolution {
        kappa,
        loss: spec.loss,
        loss_scale: spec.scale,
        error_dist: *dist,
        r,
        c,
        residuals: [res1, res2],
        quadrature_error_estimate: second.error,
    })
}

/// Sweeps an increasing `κ` grid, warm-starting each solve from the last.
pub fn r_curve(
    spec: impl Into<ProxSpec>,
    dist: &ErrorDist,
    kappa_grid: &[f64],
) -> Result<Vec<RegimeSolution>> {
    let spec = spec.into();
    if kappa_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "kappa grid must be strictly increasing".into(),
        ));
    }
    let mut out: Vec<RegimeSolution> = Vec::with_capacity(kappa_grid.len());
    for &k in kappa_grid {
        let warm = out.last().map(|s| (s.r, s.c));
        let sol = match solve_system_from(spec, dist, k, warm) {
            Ok(s) => s,
            // a poor warm start should not sink a solvable point
            Err(_) if warm.is_some() => solve_system_from(spec, dist, k, None)?,
            Err(e) => return Err(e),
        };
        if let Some(prev) = out.last() {
            if sol.r < prev.r {
                log::warn!(
                    "r decreased along the kappa grid: r({})={} < r({})={}",
                    k,
                    sol.r,
                    prev.kappa,
                    prev.r
                );
            }
        }
        out.push(sol);
    }
    Ok(out)
}

/// Result of a crossover search between absolute and squared loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Crossover {
    pub kappa: f64,
    pub bracket: [f64; 2],
    pub gap_at_lo: f64,
    pub gap_at_hi: f64,
    pub bisections: usize,
}

/// `r_LAD(κ) − r_LS(κ)`.
pub fn lad_ls_gap(dist: &ErrorDist, kappa: f64) -> Result<f64> {
    let lad = solve_system(LossSpec::Absolute, dist, kappa)?;
    let ls = solve_system(LossSpec::Squared, dist, kappa)?;
    Ok(lad.r - ls.r)
}

/// Width at which the crossover bisection stops.
pub const CROSSOVER_WIDTH: f64 = 1e-3;

/// Bisects `r_LAD − r_LS` on `[kappa_lo, kappa_hi]`.
pub fn find_crossover(dist: &ErrorDist, kappa_lo: f64, kappa_hi: f64) -> Result<Crossover> {
    if !(kappa_lo < kappa_hi) {
        return Err(Error::InvalidInput(format!(
            "crossover bracket must satisfy lo < hi, got [{kappa_lo}, {kappa_hi}]"
        )));
    }
    let g_lo = lad_ls_gap(dist, kappa_lo)?;
    let g_hi = lad_ls_gap(dist, kappa_hi)?;
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::NoCrossover {
            kappa_lo,
            kappa_hi,
            g_lo,
            g_hi,
        });
    }
    let (mut a, mut b, mut ga) = (kappa_lo, kappa_hi, g_lo);
    let mut steps = 0;
    while b - a > CROSSOVER_WIDTH {
        let m = 0.5 * (a + b);
        let gm = lad_ls_gap(dist, m)?;
        if gm == 0.0 {
            a = m;
            b = m;
            break;
        }
        if gm.signum() == ga.signum() {
            a = m;
            ga = gm;
        } else {
            b = m;
        }
        steps += 1;
    }
    Ok(Crossover {
        kappa: 0.5 * (a + b),
        bracket: [a, b],
        gap_at_lo: g_lo,
        gap_at_hi: g_hi,
        bisections: steps,
    })
}
