//! Monte Carlo checks of the regime predictions.
//!
//! Each replicate draws a fresh `n × p` standard Gaussian design and pure
//! noise responses (`β = 0`), fits the M-estimator and records `‖β̂‖₂`.
//! Replicate `i` uses `ChaCha8Rng::seed_from_u64(seed)` moved to stream `i`,
//! so replicates are independent and the result does not depend on the
//! thread count or scheduling.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::dist::ErrorDist;
use crate::error::{Error, Result};
use crate::loss::LossSpec;
use crate::mest::fit_m;
use crate::regime::RegimeSolution;

/// `|z|` at or below this counts as agreement.
pub const Z_PASS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n: usize,
    pub p: usize,
    pub loss: LossSpec,
    pub error_dist: ErrorDist,
    pub replicates: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p < 1 || self.n <= self.p {
            return Err(Error::InvalidInput(format!(
                "need n > p >= 1, got n={}, p={}",
                self.n, self.p
            )));
        }
        if self.replicates < 2 {
            return Err(Error::InvalidInput("need at least 2 replicates".into()));
        }
        self.loss.validate()?;
        self.error_dist.validate()
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub index: usize,
    /// `‖β̂‖₂`, `None` when the fit failed.
    pub norm: Option<f64>,
    pub converged: bool,
    /// `β̂/‖β̂‖`, `None` when the fit failed or `β̂ = 0`.
    #[serde(skip)]
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionStats {
    /// Replicates with a defined direction.
    pub count: usize,
    /// Coordinate-wise mean of `β̂/‖β̂‖`.
    pub coordinate_means: Vec<f64>,
    /// First coordinate of `β̂/‖β̂‖`, one per replicate with a direction.
    pub first_coordinate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n: usize,
    pub p: usize,
    /// `p/n` as a float; the exact ratio is `p` over `n`.
    pub kappa: f64,
    pub loss: LossSpec,
    pub error_dist: ErrorDist,
    pub replicates: usize,
    pub failures: usize,
    pub norm_mean: f64,
    pub norm_sd: f64,
    pub norm_se: f64,
    pub seed: u64,
    pub direction_stats: DirectionStats,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub samples: Vec<Replicate>,
}

/// Generator for replicate `index`.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws the design row by row, then the errors.
pub fn draw_replicate<R: Rng>(rng: &mut R, n: usize, p: usize, errors: &ErrorDist) -> Dataset {
    let mut x = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let y = DVector::from_fn(n, |_, _| errors.sample(rng));
    Dataset::new(y, x).expect("simulated dataset is valid")
}

fn run_one(cfg: &McConfig, index: usize) -> Replicate {
    let mut rng = replicate_rng(cfg.seed, index);
    let ds = draw_replicate(&mut rng, cfg.n, cfg.p, &cfg.error_dist);
    match fit_m(&ds, cfg.loss) {
        Ok(fit) => {
            let direction =
                (fit.norm > 0.0).then(|| fit.beta_hat.iter().map(|b| b / fit.norm).collect());
            Replicate {
                index,
                norm: Some(fit.norm),
                converged: fit.converged,
                direction,
            }
        }
        Err(e) => {
            warn!("replicate {index} failed: {e}");
            Replicate {
                index,
                norm: None,
                converged: false,
                direction: None,
            }
        }
    }
}

/// Runs `cfg.replicates` fits in parallel and summarizes `‖β̂‖`.
pub fn run_norm_mc(cfg: &McConfig) -> Result<McSummary> {
    cfg.validate()?;
    let samples: Vec<Replicate> = (0..cfg.replicates)
        .into_par_iter()
        .map(|i| run_one(cfg, i))
        .collect();
    summarize(cfg, samples)
}

fn summarize(cfg: &McConfig, samples: Vec<Replicate>) -> Result<McSummary> {
    let norms: Vec<f64> = samples.iter().filter_map(|s| s.norm).collect();
    let failures = samples.len() - norms.len();
    if norms.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "only {} of {} replicates succeeded",
            norms.len(),
            samples.len()
        )));
    }
    let k = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / k;
    let var = norms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    let sd = var.sqrt();

    let dirs: Vec<&Vec<f64>> = samples
        .iter()
        .filter_map(|s| s.direction.as_ref())
        .collect();
    let mut coordinate_means = vec![0.0; cfg.p];
    for d in &dirs {
        for (m, v) in coordinate_means.iter_mut().zip(d.iter()) {
            *m += v;
        }
    }
    if !dirs.is_empty() {
        coordinate_means
            .iter_mut()
            .for_each(|m| *m /= dirs.len() as f64);
    }
    let direction_stats = DirectionStats {
        count: dirs.len(),
        coordinate_means,
        first_coordinate: dirs.iter().map(|d| d[0]).collect(),
    };
    Ok(McSummary {
        n: cfg.n,
        p: cfg.p,
        kappa: cfg.p as f64 / cfg.n as f64,
        loss: cfg.loss,
        error_dist: cfg.error_dist,
        replicates: cfg.replicates,
        failures,
        norm_mean: mean,
        norm_sd: sd,
        norm_se: sd / k.sqrt(),
        seed: cfg.seed,
        direction_stats,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub r_theory: f64,
    pub norm_mean: f64,
    pub norm_se: f64,
    pub z: f64,
    /// The summary's `p/n` differs from the solution's κ.
    pub kappa_mismatch: bool,
    pub pass: bool,
}

/// z-score of the simulated mean norm against the predicted `r`.
///
/// A different loss or error law is rejected. A different κ is allowed and
/// always fails, which is what a negative control needs.
pub fn compare_theory_mc(summary: &McSummary, solution: &RegimeSolution) -> Result<Agreement> {
    if summary.loss != solution.loss {
        return Err(Error::Mismatch(format!(
            "simulated {:?}, solved {:?}",
            summary.loss, solution.loss
        )));
    }
    if summary.error_dist != solution.error_dist {
        return Err(Error::Mismatch(format!(
            "simulated {:?}, solved {:?}",
            summary.error_dist, solution.error_dist
        )));
    }
    let kappa_mismatch = (summary.kappa - solution.kappa).abs() > 1e-12;
    let z = if summary.norm_se > 0.0 {
        (summary.norm_mean - solution.r) / summary.norm_se
    } else if summary.norm_mean == solution.r {
        0.0
    } else {
        f64::INFINITY.copysign(summary.norm_mean - solution.r)
    };
    Ok(Agreement {
        r_theory: solution.r,
        norm_mean: summary.norm_mean,
        norm_se: summary.norm_se,
        z,
        kappa_mismatch,
        pass: z.abs() <= Z_PASS && !kappa_mismatch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub replicates: usize,
    pub max_abs_coordinate_mean: f64,
    /// `4/√(R·p)`.
    pub coordinate_bound: f64,
    pub coordinates_pass: bool,
    pub first_sq_mean: f64,
    /// `1/p`.
    pub first_sq_target: f64,
    /// Four standard errors of the mean of `u₁²` under the uniform law,
    /// `Var(u₁²) = 2(p−1)/(p²(p+2))`.
    pub first_sq_bound: f64,
    pub first_sq_pass: bool,
    /// For `p = 1`: share of positive directions, and whether it lies within
    /// `4·√(0.25/R)` of one half.
    pub positive_share: Option<f64>,
    pub sign_pass: Option<bool>,
    pub pass: bool,
}

/// Moment checks of `β̂/‖β̂‖` against the uniform law on the sphere.
pub fn direction_uniformity_check(summary: &McSummary) -> Result<DirectionCheck> {
    let stats = &summary.direction_stats;
    let r = stats.count;
    if r < 100 {
        return Err(Error::InvalidInput(format!(
            "direction check needs at least 100 directions, got {r}"
        )));
    }
    let p = summary.p as f64;
    let rf = r as f64;
    let max_abs = stats
        .coordinate_means
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let coordinate_bound = 4.0 / (rf * p).sqrt();
    let first_sq_mean = stats.first_coordinate.iter().map(|u| u * u).sum::<f64>() / rf;
    let var = 2.0 * (p - 1.0) / (p * p * (p + 2.0));
    let first_sq_bound = (4.0 * (var / rf).sqrt()).max(1e-12);
    let first_sq_pass = (first_sq_mean - 1.0 / p).abs() <= first_sq_bound;
    let (positive_share, sign_pass) = if summary.p == 1 {
        let share = stats.first_coordinate.iter().filter(|&&u| u > 0.0).count() as f64 / rf;
        (
            Some(share),
            Some((share - 0.5).abs() <= 4.0 * (0.25 / rf).sqrt()),
        )
    } else {
        (None, None)
    };
    let coordinates_pass = max_abs <= coordinate_bound;
    Ok(DirectionCheck {
        replicates: r,
        max_abs_coordinate_mean: max_abs,
        coordinate_bound,
        coordinates_pass,
        first_sq_mean,
        first_sq_target: 1.0 / p,
        first_sq_bound,
        first_sq_pass,
        positive_share,
        sign_pass,
        pass: coordinates_pass && first_sq_pass && sign_pass.unwrap_or(true),
    })
}
