//! Per-subcommand configurations: JSON file first, then flags on top.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use stabreg::{ErrorDist, LossSpec};

use crate::CliError;

const DEFAULT_HUBER_DELTA: f64 = 1.345;

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossFlag {
    #[value(alias = "l2", alias = "ls", alias = "ols")]
    Squared,
    #[value(alias = "l1", alias = "lad")]
    Absolute,
    Huber,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DistFlag {
    #[value(alias = "normal")]
    Gaussian,
    #[value(alias = "double-exponential")]
    Laplace,
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

fn merge_dist(base: ErrorDist, family: Option<DistFlag>, scale: Option<f64>) -> ErrorDist {
    let s = scale.unwrap_or_else(|| base.scale());
    match family {
        Some(DistFlag::Gaussian) => ErrorDist::gaussian(s),
        Some(DistFlag::Laplace) => ErrorDist::laplace(s),
        None => match base {
            ErrorDist::Gaussian { .. } => ErrorDist::gaussian(s),
            ErrorDist::Laplace { .. } => ErrorDist::laplace(s),
        },
    }
}

fn merge_loss(base: LossSpec, family: Option<LossFlag>, delta: Option<f64>) -> LossSpec {
    let base_delta = match base {
        LossSpec::Huber { delta } => delta,
        _ => DEFAULT_HUBER_DELTA,
    };
    match (family, base) {
        (Some(LossFlag::Squared), _) => LossSpec::Squared,
        (Some(LossFlag::Absolute), _) => LossSpec::Absolute,
        (Some(LossFlag::Huber), _) | (None, LossSpec::Huber { .. }) => LossSpec::Huber {
            delta: delta.unwrap_or(base_delta),
        },
        (None, other) => other,
    }
}

macro_rules! set {
    ($cfg:ident . $field:ident, $flag:expr) => {
        if let Some(v) = $flag {
            $cfg.$field = v;
        }
    };
}

#[derive(Args, Debug, Default)]
pub struct GenFlags {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Number of nonzero coefficients, evenly spread over the predictors.
    #[arg(long)]
    pub nonzeros: Option<usize>,
    /// Value of each nonzero coefficient.
    #[arg(long)]
    pub signal: Option<f64>,
    /// Explicit coefficients (comma separated); overrides --nonzeros.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub beta: Option<Vec<f64>>,
    /// Pairwise predictor correlation (0 for an identity covariance).
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long, value_enum)]
    pub dist: Option<DistFlag>,
    /// Error scale: σ for gaussian, b for laplace.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rows of an independent test set written alongside (0 for none).
    #[arg(long)]
    pub test_n: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    pub p: usize,
    pub nonzeros: Option<usize>,
    pub signal: f64,
    pub beta: Option<Vec<f64>>,
    pub rho: f64,
    pub error_dist: ErrorDist,
    pub seed: u64,
    pub test_n: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 100,
            p: 10,
            nonzeros: None,
            signal: 1.0,
            beta: None,
            rho: 0.0,
            error_dist: ErrorDist::gaussian(1.0),
            seed: 0,
            test_n: 0,
        }
    }
}

pub fn resolve_gen(path: Option<&Path>, f: GenFlags) -> Result<GenConfig, CliError> {
    let mut c: GenConfig = read_config(path)?;
    set!(c.n, f.n);
    set!(c.p, f.p);
    set!(c.signal, f.signal);
    set!(c.rho, f.rho);
    set!(c.seed, f.seed);
    set!(c.test_n, f.test_n);
    if f.nonzeros.is_some() {
        c.nonzeros = f.nonzeros;
        c.beta = None;
    }
    if f.beta.is_some() {
        c.beta = f.beta;
        c.nonzeros = None;
    }
    if c.beta.is_none() && c.nonzeros.is_none() {
        c.nonzeros = Some(c.p.min(10));
    }
    c.error_dist = merge_dist(c.error_dist, f.dist, f.scale);
    Ok(c)
}

#[derive(Args, Debug, Default)]
pub struct SelectFlags {
    /// Training data CSV (header row; response first unless --response).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Name of the response column.
    #[arg(long)]
    pub response: Option<String>,
    /// Held-out CSV with the same columns, for prediction error.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Number of blocks V.
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Points on the common τ grid.
    #[arg(long)]
    pub tau_grid: Option<usize>,
    /// Points on each λ path.
    #[arg(long)]
    pub lambda_grid: Option<usize>,
    /// Smallest λ as a fraction of λ_max.
    #[arg(long)]
    pub floor_ratio: Option<f64>,
    /// Smooth ES with a 3-point running median before selecting.
    #[arg(long)]
    pub median_filter: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub data: Option<PathBuf>,
    pub response: Option<String>,
    pub test: Option<PathBuf>,
    pub folds: usize,
    pub seed: u64,
    pub tau_grid: usize,
    pub lambda_grid: usize,
    pub floor_ratio: f64,
    pub median_filter: bool,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            data: None,
            response: None,
            test: None,
            folds: 10,
            seed: 0,
            tau_grid: 100,
            lambda_grid: 100,
            floor_ratio: 1e-3,
            median_filter: false,
        }
    }
}

pub fn resolve_select(path: Option<&Path>, f: SelectFlags) -> Result<SelectConfig, CliError> {
    let mut c: SelectConfig = read_config(path)?;
    if f.data.is_some() {
        c.data = f.data;
    }
    if f.response.is_some() {
        c.response = f.response;
    }
    if f.test.is_some() {
        c.test = f.test;
    }
    set!(c.folds, f.folds);
    set!(c.seed, f.seed);
    set!(c.tau_grid, f.tau_grid);
    set!(c.lambda_grid, f.lambda_grid);
    set!(c.floor_ratio, f.floor_ratio);
    c.median_filter |= f.median_filter;
    if c.data.is_none() {
        return Err(CliError::Usage("select needs --data".into()));
    }
    Ok(c)
}

#[derive(Args, Debug, Default)]
pub struct RegimeFlags {
    #[arg(long, value_enum)]
    pub loss: Option<LossFlag>,
    /// Huber threshold δ.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum)]
    pub dist: Option<DistFlag>,
    #[arg(long)]
    pub scale: Option<f64>,
    /// Aspect ratios to solve at (comma separated or repeated).
    #[arg(long, value_delimiter = ',')]
    pub kappa: Option<Vec<f64>>,
    /// Locate the κ where LAD and least squares have equal r.
    #[arg(long)]
    pub crossover: bool,
    #[arg(long)]
    pub kappa_lo: Option<f64>,
    #[arg(long)]
    pub kappa_hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeConfig {
    pub loss: LossSpec,
    pub error_dist: ErrorDist,
    pub kappa: Vec<f64>,
    pub crossover: bool,
    pub kappa_lo: f64,
    pub kappa_hi: f64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig {
            loss: LossSpec::Squared,
            error_dist: ErrorDist::laplace(1.0),
            kappa: Vec::new(),
            crossover: false,
            kappa_lo: 0.05,
            kappa_hi: 0.9,
        }
    }
}

pub fn resolve_regime(path: Option<&Path>, f: RegimeFlags) -> Result<RegimeConfig, CliError> {
    let mut c: RegimeConfig = read_config(path)?;
    c.loss = merge_loss(c.loss, f.loss, f.delta);
    c.error_dist = merge_dist(c.error_dist, f.dist, f.scale);
    set!(c.kappa, f.kappa);
    c.crossover |= f.crossover;
    set!(c.kappa_lo, f.kappa_lo);
    set!(c.kappa_hi, f.kappa_hi);
    if c.kappa.is_empty() && !c.crossover {
        return Err(CliError::Usage(
            "regime needs --kappa or --crossover".into(),
        ));
    }
    Ok(c)
}

#[derive(Args, Debug, Default)]
pub struct McFlags {
    #[arg(long, value_enum)]
    pub loss: Option<LossFlag>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum)]
    pub dist: Option<DistFlag>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Predictors; defaults to round(κ·n).
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Compare the mean norm with the solved r(p/n).
    #[arg(long)]
    pub check_theory: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McRunConfig {
    pub loss: LossSpec,
    pub error_dist: ErrorDist,
    pub n: usize,
    pub p: Option<usize>,
    pub kappa: Option<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub check_theory: bool,
}

impl Default for McRunConfig {
    fn default() -> Self {
        McRunConfig {
            loss: LossSpec::Squared,
            error_dist: ErrorDist::laplace(1.0),
            n: 500,
            p: None,
            kappa: None,
            replicates: 200,
            seed: 0,
            check_theory: false,
        }
    }
}

pub fn resolve_mc(path: Option<&Path>, f: McFlags) -> Result<McRunConfig, CliError> {
    let mut c: McRunConfig = read_config(path)?;
    c.loss = merge_loss(c.loss, f.loss, f.delta);
    c.error_dist = merge_dist(c.error_dist, f.dist, f.scale);
    set!(c.n, f.n);
    set!(c.replicates, f.replicates);
    set!(c.seed, f.seed);
    c.check_theory |= f.check_theory;
    match (f.p, f.kappa) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("give --p or --kappa, not both".into()));
        }
        (Some(p), None) => {
            c.p = Some(p);
            c.kappa = None;
        }
        (None, Some(k)) => {
            c.kappa = Some(k);
            c.p = None;
        }
        (None, None) => {}
    }
    if c.p.is_none() {
        let k = c
            .kappa
            .ok_or_else(|| CliError::Usage("mc needs --p or --kappa".into()))?;
        if !(k > 0.0 && k < 1.0) {
            return Err(CliError::Usage(format!(
                "kappa must lie in (0, 1), got {k}"
            )));
        }
        c.p = Some((k * c.n as f64).round() as usize);
    }
    Ok(c)
}
