//! Error distributions and their convolution with an independent Gaussian.
//!
//! The asymptotic system for M-estimators works with `ẑ = ε + r·Z`, where
//! `Z ~ N(0, 1)` is independent of the regression error `ε`. For Gaussian
//! errors the sum is again Gaussian. For double-exponential errors the sum is
//! the normal-Laplace law, whose density and tail function have closed forms
//! in terms of the Gaussian tail `Q(z) = P(Z > z)`. Everything here is
//! evaluated in log space where the naive products over- or underflow.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Distribution of the i.i.d. regression errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ErrorDist {
    /// `N(0, sigma²)`.
    Gaussian { sigma: f64 },
    /// Double-exponential with density `exp(-|x|/scale) / (2·scale)`.
    Laplace { scale: f64 },
}

impl ErrorDist {
    pub fn gaussian(sigma: f64) -> Self {
        ErrorDist::Gaussian { sigma }
    }

    pub fn laplace(scale: f64) -> Self {
        ErrorDist::Laplace { scale }
    }

    /// Checks the scale parameter. Zero is allowed (a point mass at 0);
    /// only the asymptotic solver needs strictly positive spread.
    pub fn validate(&self) -> Result<()> {
        let s = self.scale();
        if !s.is_finite() || s < 0.0 {
            return Err(Error::InvalidInput(format!(
                "error distribution scale must be finite and nonnegative, got {s}"
            )));
        }
        Ok(())
    }

    /// `σ` for Gaussian errors, `b` for Laplace errors.
    pub fn scale(&self) -> f64 {
        match *self {
            ErrorDist::Gaussian { sigma } => sigma,
            ErrorDist::Laplace { scale } => scale,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ErrorDist::Gaussian { sigma } => sigma * sigma,
            ErrorDist::Laplace { scale } => 2.0 * scale * scale,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ErrorDist::Gaussian { .. } => "gaussian",
            ErrorDist::Laplace { .. } => "laplace",
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ErrorDist::Gaussian { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            }
            ErrorDist::Laplace { scale } => {
                // difference of two unit exponentials is standard Laplace
                let a: f64 = rng.sample(Exp1);
                let b: f64 = rng.sample(Exp1);
                scale * (a - b)
            }
        }
    }

    /// Law of `ε + r·Z`.
    pub fn convolve(&self, r: f64) -> Convolved {
        Convolved { dist: *self, r }
    }
}

/// `P(Z > z)` for standard normal `Z`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn normal_cdf(z: f64) -> f64 {
    normal_sf(-z)
}

pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `ln P(Z > z)`, accurate far into the upper tail.
pub fn ln_normal_sf(z: f64) -> f64 {
    if z < 30.0 {
        normal_sf(z).ln()
    } else {
        // asymptotic Mills-ratio series; the first omitted term is below 1e-12
        let w = 1.0 / (z * z);
        let series = 1.0 - w * (1.0 - 3.0 * w * (1.0 - 5.0 * w * (1.0 - 7.0 * w)));
        -0.5 * z * z - z.ln() - LN_SQRT_2PI + series.ln()
    }
}

/// The law of `ẑ = ε + r·Z`.
#[derive(Debug, Clone, Copy)]
pub struct Convolved {
    pub dist: ErrorDist,
    pub r: f64,
}

impl Convolved {
    /// True when `ẑ` is a point mass at zero.
    pub fn is_degenerate(&self) -> bool {
        self.dist.scale() == 0.0 && self.r == 0.0
    }

    pub fn variance(&self) -> f64 {
        self.dist.variance() + self.r * self.r
    }

    /// Points where the density is not smooth.
    pub fn kinks(&self) -> Vec<f64> {
        match self.dist {
            ErrorDist::Laplace { .. } if self.r == 0.0 => vec![0.0],
            _ => Vec::new(),
        }
    }

    /// Normal-Laplace helper `exp(r²/2b² − x/b) · Q(r/b − x/r)`.
    fn laplace_term(b: f64, r: f64, x: f64) -> f64 {
        let a = 0.5 * (r / b) * (r / b);
        (a - x / b + ln_normal_sf(r / b - x / r)).exp()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self.dist {
            ErrorDist::Gaussian { sigma } => {
                let s = (sigma * sigma + self.r * self.r).sqrt();
                normal_pdf(x / s) / s
            }
            ErrorDist::Laplace { scale: b } => {
                if self.r == 0.0 {
                    (-(x.abs()) / b).exp() / (2.0 * b)
                } else if b == 0.0 {
                    normal_pdf(x / self.r) / self.r
                } else {
                    let r = self.r;
                    (Self::laplace_term(b, r, x) + Self::laplace_term(b, r, -x)) / (2.0 * b)
                }
            }
        }
    }

    /// `P(ẑ > x)`.
    pub fn sf(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            return if x < 0.0 { 1.0 } else { 0.0 };
        }
        match self.dist {
            ErrorDist::Gaussian { sigma } => {
                let s = (sigma * sigma + self.r * self.r).sqrt();
                normal_sf(x / s)
            }
            ErrorDist::Laplace { scale: b } => {
                if self.r == 0.0 {
                    if x >= 0.0 {
                        0.5 * (-x / b).exp()
                    } else {
                        1.0 - 0.5 * (x / b).exp()
                    }
                } else if b == 0.0 {
                    normal_sf(x / self.r)
                } else {
                    let r = self.r;
                    let v = normal_sf(x / r)
                        + 0.5 * (Self::laplace_term(b, r, x) - Self::laplace_term(b, r, -x));
                    v.clamp(0.0, 1.0)
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        // both families are symmetric about zero
        self.sf(-x)
    }

    /// `P(lo < ẑ < hi)`; infinite endpoints are allowed.
    pub fn prob_between(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let upper = if hi == f64::INFINITY {
            0.0
        } else {
            self.sf(hi)
        };
        let lower = if lo == f64::NEG_INFINITY {
            1.0
        } else {
            self.sf(lo)
        };
        // work in the tail that keeps precision
        if lo >= 0.0 {
            lower - upper
        } else if hi <= 0.0 {
            let a = if lo == f64::NEG_INFINITY {
                0.0
            } else {
                self.cdf(lo)
            };
            let b = if hi == f64::INFINITY {
                1.0
            } else {
                self.cdf(hi)
            };
            b - a
        } else {
            (lower - upper).clamp(0.0, 1.0)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.dist.sample(rng) + self.r * z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tail_log_matches_direct_where_both_work() {
        for z in [-3.0, 0.0, 1.5, 8.0, 25.0, 29.9] {
            let direct = normal_sf(z).ln();
            assert!((ln_normal_sf(z) - direct).abs() < 1e-12 * direct.abs().max(1.0));
        }
        // continuity across the series switch
        let below = normal_sf(29.999_999).ln();
        let above = ln_normal_sf(30.000_001);
        assert!((below - above).abs() < 1e-3);
    }

    #[test]
    fn normal_laplace_density_integrates_to_one() {
        let c = ErrorDist::laplace(1.0).convolve(0.7);
        // trapezoid on a fine grid; tails beyond ±40 are negligible
        let h = 1e-3;
        let mut s = 0.0;
        let mut x = -40.0;
        while x < 40.0 {
            s += 0.5 * h * (c.pdf(x) + c.pdf(x + h));
            x += h;
        }
        assert!((s - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn normal_laplace_sf_is_consistent_with_density() {
        let c = ErrorDist::laplace(1.3).convolve(0.4);
        // P(0 < ẑ < 0.9) by Simpson vs sf difference
        let m = 2000;
        let h = 0.9 / m as f64;
        let mut s = c.pdf(0.0) + c.pdf(0.9);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * c.pdf(i as f64 * h);
        }
        s *= h / 3.0;
        assert!((s - (c.sf(0.0) - c.sf(0.9))).abs() < 1e-12);
        assert!((c.sf(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn extreme_arguments_stay_finite() {
        for r in [1e-6, 1e-3, 0.5, 10.0, 80.0] {
            let c = ErrorDist::laplace(1.0).convolve(r);
            for x in [-1e4, -500.0, -3.0, 0.0, 3.0, 500.0, 1e4] {
                let p = c.pdf(x);
                let s = c.sf(x);
                assert!(p.is_finite() && p >= 0.0, "pdf r={r} x={x}: {p}");
                assert!((0.0..=1.0).contains(&s), "sf r={r} x={x}: {s}");
            }
        }
    }

    #[test]
    fn laplace_sample_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = ErrorDist::laplace(1.0);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 2.0).abs() < 0.05, "{var}");
    }
}
