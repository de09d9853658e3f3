//! Convex regression losses and their proximal maps.
//!
//! Conventions: `Squared` is `ρ(y) = y²` (no ½), `Absolute` is `|y|`, and
//! `Huber { delta }` is `y²/2` on `|y| ≤ δ` and `δ|y| − δ²/2` outside.
//!
//! `prox_c(ρ)(x) = argmin_y ρ(y) + (x − y)²/(2c)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LossSpec {
    Squared,
    Absolute,
    Huber { delta: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        if let LossSpec::Huber { delta } = *self {
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "huber delta must be positive and finite, got {delta}"
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Squared => "squared",
            LossSpec::Absolute => "absolute",
            LossSpec::Huber { .. } => "huber",
        }
    }

    pub fn rho(&self, y: f64) -> f64 {
        match *self {
            LossSpec::Squared => y * y,
            LossSpec::Absolute => y.abs(),
            LossSpec::Huber { delta } => {
                let a = y.abs();
                if a <= delta {
                    0.5 * y * y
                } else {
                    delta * a - 0.5 * delta * delta
                }
            }
        }
    }
}

/// A loss `a·ρ` together with closed-form prox evaluators.
///
/// Scaling the loss by `a` is the same as scaling `c` by `a`, which is how
/// the scale enters every formula below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxSpec {
    pub loss: LossSpec,
    pub scale: f64,
}

/// Piece of the real line on which the prox derivative is constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopePiece {
    pub lo: f64,
    pub hi: f64,
    pub slope: f64,
}

impl ProxSpec {
    pub fn new(loss: LossSpec) -> Self {
        ProxSpec { loss, scale: 1.0 }
    }

    /// The prox of `a·ρ`.
    pub fn scaled(self, a: f64) -> Self {
        ProxSpec {
            scale: self.scale * a,
            ..self
        }
    }

    fn check_c(c: f64) -> Result<()> {
        if c > 0.0 && c.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "prox parameter c must be positive, got {c}"
            )))
        }
    }

    pub fn prox(&self, c: f64, x: f64) -> Result<f64> {
        Self::check_c(c)?;
        Ok(self.prox_unchecked(c, x))
    }

    pub fn prox_derivative(&self, c: f64, x: f64) -> Result<f64> {
        Self::check_c(c)?;
        Ok(self.prox_derivative_unchecked(c, x))
    }

    pub(crate) fn prox_unchecked(&self, c: f64, x: f64) -> f64 {
        let c = c * self.scale;
        match self.loss {
            LossSpec::Squared => x / (1.0 + 2.0 * c),
            LossSpec::Absolute => x.signum() * (x.abs() - c).max(0.0),
            LossSpec::Huber { delta } => {
                if x.abs() <= delta * (1.0 + c) {
                    x / (1.0 + c)
                } else {
                    x - c * delta * x.signum()
                }
            }
        }
    }

    pub(crate) fn prox_derivative_unchecked(&self, c: f64, x: f64) -> f64 {
        let c = c * self.scale;
        match self.loss {
            LossSpec::Squared => 1.0 / (1.0 + 2.0 * c),
            LossSpec::Absolute => {
                if x.abs() > c {
                    1.0
                } else {
                    0.0
                }
            }
            LossSpec::Huber { delta } => {
                if x.abs() <= delta * (1.0 + c) {
                    1.0 / (1.0 + c)
                } else {
                    1.0
                }
            }
        }
    }

    /// `x − prox_c(x)`, the quantity squared in the second equation.
    pub(crate) fn prox_residual(&self, c: f64, x: f64) -> f64 {
        let cs = c * self.scale;
        match self.loss {
            LossSpec::Squared => 2.0 * cs * x / (1.0 + 2.0 * cs),
            LossSpec::Absolute => x.clamp(-cs, cs),
            LossSpec::Huber { delta } => {
                if x.abs() <= delta * (1.0 + cs) {
                    cs * x / (1.0 + cs)
                } else {
                    cs * delta * x.signum()
                }
            }
        }
    }

    /// Points where the prox is not differentiable.
    pub fn breakpoints(&self, c: f64) -> Vec<f64> {
        let c = c * self.scale;
        match self.loss {
            LossSpec::Squared => Vec::new(),
            LossSpec::Absolute => vec![-c, c],
            LossSpec::Huber { delta } => {
                let t = delta * (1.0 + c);
                vec![-t, t]
            }
        }
    }

    /// The prox derivative as a step function.
    pub fn derivative_pieces(&self, c: f64) -> Vec<SlopePiece> {
        let c = c * self.scale;
        let inf = f64::INFINITY;
        match self.loss {
            LossSpec::Squared => vec![SlopePiece {
                lo: -inf,
                hi: inf,
                slope: 1.0 / (1.0 + 2.0 * c),
            }],
            LossSpec::Absolute => vec![
                SlopePiece {
                    lo: -inf,
                    hi: -c,
                    slope: 1.0,
                },
                SlopePiece {
                    lo: c,
                    hi: inf,
                    slope: 1.0,
                },
            ],
            LossSpec::Huber { delta } => {
                let t = delta * (1.0 + c);
                vec![
                    SlopePiece {
                        lo: -inf,
                        hi: -t,
                        slope: 1.0,
                    },
                    SlopePiece {
                        lo: -t,
                        hi: t,
                        slope: 1.0 / (1.0 + c),
                    },
                    SlopePiece {
                        lo: t,
                        hi: inf,
                        slope: 1.0,
                    },
                ]
            }
        }
    }

    /// Subgradient of `a·ρ` at `y`, as a closed interval.
    pub fn subgradient(&self, y: f64) -> (f64, f64) {
        let a = self.scale;
        let (lo, hi) = match self.loss {
            LossSpec::Squared => (2.0 * y, 2.0 * y),
            LossSpec::Absolute => {
                if y > 0.0 {
                    (1.0, 1.0)
                } else if y < 0.0 {
                    (-1.0, -1.0)
                } else {
                    (-1.0, 1.0)
                }
            }
            LossSpec::Huber { delta } => {
                let g = y.clamp(-delta, delta);
                (g, g)
            }
        };
        (a * lo, a * hi)
    }
}
