//! Regression datasets: construction, simulation, standardization and
//! V-fold partitions.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::ErrorDist;
use crate::error::{Error, Result};

/// Columns whose sample standard deviation falls below this (relative to
/// their magnitude) are treated as constant.
const CONSTANT_COLUMN_TOL: f64 = 1e-12;

/// Response vector and design matrix, optionally standardized.
///
/// When standardized, every non-constant column of `x` has mean 0 and sample
/// standard deviation 1, `y` is centered, and the removed means and scales
/// are kept so coefficients can be mapped back to original units.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    standardized: bool,
    column_means: Vec<f64>,
    column_scales: Vec<f64>,
    response_mean: f64,
    constant_columns: Vec<bool>,
    response_name: String,
    predictor_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(y, x, "y".to_string(), names)
    }

    pub fn with_names(
        y: DVector<f64>,
        x: DMatrix<f64>,
        response_name: String,
        predictor_names: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 || p < 1 {
            return Err(Error::InvalidInput(format!(
                "dataset needs n >= 2 and p >= 1, got n={n}, p={p}"
            )));
        }
        if y.len() != n {
            return Err(Error::InvalidInput(format!(
                "response has {} entries but design has {n} rows",
                y.len()
            )));
        }
        if predictor_names.len() != p {
            return Err(Error::InvalidInput(
                "one name per predictor required".into(),
            ));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Dataset {
            y,
            x,
            standardized: false,
            column_means: vec![0.0; p],
            column_scales: vec![1.0; p],
            response_mean: 0.0,
            constant_columns: vec![false; p],
            response_name,
            predictor_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    pub fn column_scales(&self) -> &[f64] {
        &self.column_scales
    }

    pub fn response_mean(&self) -> f64 {
        self.response_mean
    }

    /// Columns flagged constant by [`standardize`]; they are left out of the
    /// penalized fit.
    pub fn constant_columns(&self) -> &[bool] {
        &self.constant_columns
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn predictor_names(&self) -> &[String] {
        &self.predictor_names
    }

    /// Same dataset with the response replaced (e.g. rescaled).
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        if y.len() != self.n() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "replacement response is invalid".into(),
            ));
        }
        Ok(Dataset { y, ..self.clone() })
    }

    /// Rows `rows` of this dataset, keeping its standardization metadata.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidInput(
                "a row subset needs at least 2 rows".into(),
            ));
        }
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        Ok(Dataset {
            x,
            y,
            ..self.clone()
        })
    }

    /// Maps coefficients fitted on this (standardized) dataset back to
    /// original units, returning `(intercept, coefficients)`.
    pub fn to_original_units(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        let orig: Vec<f64> = beta
            .iter()
            .zip(&self.column_scales)
            .zip(&self.constant_columns)
            .map(|((b, s), &constant)| if constant { 0.0 } else { b / s })
            .collect();
        let shift: f64 = orig
            .iter()
            .zip(&self.column_means)
            .map(|(b, m)| b * m)
            .sum();
        (self.response_mean - shift, orig)
    }

    /// Applies this dataset's standardization to a design matrix in
    /// original units (e.g. a held-out set).
    pub fn transform_design(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::InvalidInput(format!(
                "expected {} columns, got {}",
                self.p(),
                x.ncols()
            )));
        }
        let mut out = x.clone();
        for j in 0..self.p() {
            let (m, s) = (self.column_means[j], self.column_scales[j]);
            out.column_mut(j).iter_mut().for_each(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }
}

/// Covariance of the simulated design rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignCovariance {
    Identity,
    /// Unit variances with every pairwise correlation equal to `rho`.
    Equicorrelated {
        rho: f64,
    },
    /// Row-major `p × p` matrix.
    Matrix {
        entries: Vec<f64>,
    },
}

impl DesignCovariance {
    fn matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            DesignCovariance::Identity => Ok(DMatrix::identity(p, p)),
            DesignCovariance::Equicorrelated { rho } => {
                Ok(DMatrix::from_fn(
                    p,
                    p,
                    |i, j| if i == j { 1.0 } else { *rho },
                ))
            }
            DesignCovariance::Matrix { entries } => {
                if entries.len() != p * p {
                    return Err(Error::InvalidInput(format!(
                        "covariance needs {} entries, got {}",
                        p * p,
                        entries.len()
                    )));
                }
                let m = DMatrix::from_row_slice(p, p, entries);
                if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                    return Err(Error::NotPositiveDefinite("matrix is not symmetric".into()));
                }
                Ok(m)
            }
        }
    }

    /// Lower Cholesky factor, or an error if the matrix is not positive definite.
    pub fn cholesky_factor(&self, p: usize) -> Result<DMatrix<f64>> {
        let m = self.matrix(p)?;
        Cholesky::new(m).map(|c| c.l()).ok_or_else(|| {
            Error::NotPositiveDefinite(format!("{self:?} (p={p}) has no Cholesky factor"))
        })
    }
}

/// Parameters of a simulated linear model `y = Xβ + ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub beta_true: Vec<f64>,
    pub design_covariance: DesignCovariance,
    pub error_dist: ErrorDist,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p < 1 {
            return Err(Error::InvalidInput(format!(
                "need n >= 2 and p >= 1, got n={}, p={}",
                self.n, self.p
            )));
        }
        if self.beta_true.len() != self.p {
            return Err(Error::InvalidInput(format!(
                "beta_true has {} entries, p = {}",
                self.beta_true.len(),
                self.p
            )));
        }
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("beta_true must be finite".into()));
        }
        self.error_dist.validate()
    }
}

/// Draws `n` rows of `N(0, LLᵀ)` into an `n × p` matrix.
pub(crate) fn draw_design<R: Rng>(rng: &mut R, n: usize, chol: &DMatrix<f64>) -> DMatrix<f64> {
    let p = chol.nrows();
    // row-by-row so that the stream layout does not depend on storage order
    let mut z = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = rng.sample(StandardNormal);
        }
    }
    z * chol.transpose()
}

/// Simulates `y = Xβ + ε` with Gaussian design rows. Deterministic in
/// `cfg.seed`: the design is drawn first, row by row, then the errors.
pub fn generate_linear(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let chol = cfg.design_covariance.cholesky_factor(cfg.p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = draw_design(&mut rng, cfg.n, &chol);
    let beta = DVector::from_column_slice(&cfg.beta_true);
    let mut y = &x * beta;
    for v in y.iter_mut() {
        *v += cfg.error_dist.sample(&mut rng);
    }
    Dataset::new(y, x)
}

/// Centers and scales every column to unit sample standard deviation and
/// centers the response. Already-standardized input is returned unchanged.
///
/// Constant columns are centered (hence zeroed), keep scale 1, and are
/// flagged so the penalized fit leaves them out.
pub fn standardize(ds: &Dataset) -> Dataset {
    if ds.standardized {
        return ds.clone();
    }
    let n = ds.n() as f64;
    let p = ds.p();
    let mut x = ds.x.clone();
    let mut means = vec![0.0; p];
    let mut scales = vec![1.0; p];
    let mut constant = vec![false; p];
    for j in 0..p {
        let mut col = x.column_mut(j);
        let mean = col.sum() / n;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1.0)).sqrt();
        means[j] = mean;
        if sd <= CONSTANT_COLUMN_TOL * mean.abs().max(1.0) {
            constant[j] = true;
            col.iter_mut().for_each(|v| *v = 0.0);
        } else {
            scales[j] = sd;
            col.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
    let y_mean = ds.y.mean();
    let y = ds.y.map(|v| v - y_mean);
    Dataset {
        y,
        x,
        standardized: true,
        column_means: means,
        column_scales: scales,
        response_mean: y_mean,
        constant_columns: constant,
        response_name: ds.response_name.clone(),
        predictor_names: ds.predictor_names.clone(),
    }
}

/// A random partition of `0..n` into `V` blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    v_blocks: usize,
    /// Block id (in `0..V`) of every row.
    block_assignments: Vec<usize>,
    /// `⌊n/V⌋`, the delete size used in the stability scale factor.
    d: usize,
}

impl FoldPlan {
    pub fn v(&self) -> usize {
        self.v_blocks
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.block_assignments.len()
    }

    pub fn assignments(&self) -> &[usize] {
        &self.block_assignments
    }

    /// Rows in block `v`, ascending.
    pub fn held_out(&self, v: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.block_assignments[i] == v)
            .collect()
    }

    /// Rows not in block `v` (the pseudo-dataset), ascending.
    pub fn training(&self, v: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.block_assignments[i] != v)
            .collect()
    }

    /// Builds a plan from explicit assignments.
    pub fn from_assignments(v: usize, assignments: Vec<usize>) -> Result<Self> {
        let n = assignments.len();
        if v < 2 || v > n {
            return Err(Error::InvalidInput(format!(
                "need 2 <= V <= n, got V={v}, n={n}"
            )));
        }
        let mut counts = vec![0usize; v];
        for &a in &assignments {
            if a >= v {
                return Err(Error::InvalidInput(format!("block id {a} out of range")));
            }
            counts[a] += 1;
        }
        if counts.contains(&0) {
            return Err(Error::InvalidInput("every block must be non-empty".into()));
        }
        Ok(FoldPlan {
            v_blocks: v,
            block_assignments: assignments,
            d: n / v,
        })
    }
}

/// Uniformly random partition of `n` rows into `v` blocks whose sizes differ
/// by at most one. Deterministic given `seed`.
pub fn make_folds(n: usize, v: usize, seed: u64) -> Result<FoldPlan> {
    if v < 2 || v > n {
        return Err(Error::InvalidInput(format!(
            "need 2 <= V <= n, got V={v}, n={n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut assignments = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignments[row] = pos % v;
    }
    FoldPlan::from_assignments(v, assignments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds_from_cols(cols: &[&[f64]], y: &[f64]) -> Dataset {
        let n = y.len();
        let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        Dataset::new(DVector::from_column_slice(y), x).unwrap()
    }

    #[test]
    fn zero_signal_zero_noise() {
        let cfg = SimConfig {
            n: 4,
            p: 1,
            beta_true: vec![0.0],
            design_covariance: DesignCovariance::Identity,
            error_dist: ErrorDist::gaussian(0.0),
            seed: 1,
        };
        let ds = generate_linear(&cfg).unwrap();
        assert!(ds.y().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_pd_covariance_rejected() {
        let cfg = SimConfig {
            n: 10,
            p: 3,
            beta_true: vec![0.0; 3],
            design_covariance: DesignCovariance::Equicorrelated { rho: -0.6 },
            error_dist: ErrorDist::gaussian(1.0),
            seed: 1,
        };
        assert!(matches!(
            generate_linear(&cfg),
            Err(Error::NotPositiveDefinite(_))
        ));
        let cfg = SimConfig {
            design_covariance: DesignCovariance::Matrix {
                entries: vec![1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            },
            ..cfg
        };
        assert!(matches!(
            generate_linear(&cfg),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn standardize_simple_column() {
        let ds = ds_from_cols(&[&[1.0, 2.0, 3.0]], &[1.0, 0.0, 2.0]);
        let s = standardize(&ds);
        assert_eq!(s.column_means(), &[2.0]);
        assert_eq!(s.column_scales(), &[1.0]);
        assert_eq!(s.x().column(0).as_slice(), &[-1.0, 0.0, 1.0]);
        assert!(s.is_standardized());
        assert_eq!(s.response_mean(), 1.0);
    }

    #[test]
    fn standardize_is_idempotent() {
        let ds = ds_from_cols(
            &[&[1.0, 4.0, 9.0, 3.0], &[0.5, 0.1, 0.2, 7.0]],
            &[1.0, 2.0, 3.0, 4.0],
        );
        let once = standardize(&ds);
        let twice = standardize(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn constant_column_flagged() {
        let ds = ds_from_cols(&[&[5.0, 5.0, 5.0], &[1.0, 2.0, 4.0]], &[0.0, 1.0, 2.0]);
        let s = standardize(&ds);
        assert_eq!(s.constant_columns(), &[true, false]);
        assert_eq!(s.column_scales()[0], 1.0);
        assert!(s.x().column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn original_units_reproduce_predictions() {
        let ds = ds_from_cols(
            &[
                &[1.0, 4.0, 9.0, 3.0, 2.0],
                &[0.5, 0.1, 0.2, 7.0, 1.0],
                &[3.0; 5],
            ],
            &[1.0, 2.0, 3.0, 4.0, 5.0],
        );
        let s = standardize(&ds);
        let beta = [0.7, -1.3, 0.0];
        let (b0, orig) = s.to_original_units(&beta);
        for i in 0..5 {
            let std_pred: f64 =
                s.response_mean() + (0..3).map(|j| s.x()[(i, j)] * beta[j]).sum::<f64>();
            let orig_pred: f64 = b0 + (0..3).map(|j| ds.x()[(i, j)] * orig[j]).sum::<f64>();
            assert!((std_pred - orig_pred).abs() < 1e-10);
        }
    }

    #[test]
    fn folds_examples() {
        let f = make_folds(10, 5, 3).unwrap();
        assert_eq!(f.d(), 2);
        for v in 0..5 {
            assert_eq!(f.training(v).len(), 8);
        }
        let loo = make_folds(10, 10, 3).unwrap();
        assert_eq!(loo.d(), 1);
        assert_eq!(
            make_folds(10, 5, 99).unwrap(),
            make_folds(10, 5, 99).unwrap()
        );
        assert!(make_folds(4, 5, 0).is_err());
        assert!(make_folds(4, 1, 0).is_err());
    }

    #[test]
    fn uneven_folds_use_floor() {
        let f = make_folds(11, 3, 0).unwrap();
        assert_eq!(f.d(), 3);
        let sizes: Vec<usize> = (0..3).map(|v| f.held_out(v).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = DMatrix::from_element(1, 1, 1.0);
        assert!(Dataset::new(DVector::from_element(1, 1.0), x).is_err());
        let x = DMatrix::from_element(3, 1, f64::NAN);
        assert!(Dataset::new(DVector::from_element(3, 1.0), x).is_err());
    }
}
