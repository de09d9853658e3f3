use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("csv parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(
        "lasso did not converge at lambda={lambda} after {sweeps} sweeps (kkt residual {kkt_residual:e})"
    )]
    LassoNotConverged {
        lambda: f64,
        sweeps: usize,
        kkt_residual: f64,
        last_iterate: Vec<f64>,
    },

    #[error("fold {fold} failed: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("tau {tau} is outside the path range [0, {max_tau}]")]
    TauOutOfRange { tau: f64, max_tau: f64 },

    #[error(
        "design is rank deficient: smallest singular value {smallest:e} <= {tolerance:e} * largest"
    )]
    RankDeficient { smallest: f64, tolerance: f64 },

    #[error("{method} did not converge (objective {objective}, {detail})")]
    NotConverged {
        method: &'static str,
        objective: f64,
        detail: String,
        best_iterate: Vec<f64>,
    },

    #[error("quadrature did not reach tolerance: estimate {estimate}, error {error:e}")]
    Quadrature { estimate: f64, error: f64 },

    #[error("root bracket failed on [{lo}, {hi}]: {detail}")]
    Bracket { lo: f64, hi: f64, detail: String },

    #[error("regime solve failed at kappa={kappa}: {source}")]
    Regime {
        kappa: f64,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "no sign change of r_lad - r_ls on [{kappa_lo}, {kappa_hi}]: g(lo)={g_lo}, g(hi)={g_hi}"
    )]
    NoCrossover {
        kappa_lo: f64,
        kappa_hi: f64,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("configuration mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::LassoNotConverged { .. }
                | Error::NotConverged { .. }
                | Error::Quadrature { .. }
                | Error::Bracket { .. }
                | Error::Regime { .. }
                | Error::NoCrossover { .. }
                | Error::RankDeficient { .. }
        ) || matches!(self, Error::Fold { source, .. } if source.is_numerical())
    }
}
