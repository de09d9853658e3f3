//! Lasso tuning by estimation stability with cross-validation, and
//! asymptotic risk of M-estimators when `p/n → κ`.
//!
//! The shared data types are re-exported at the crate root.

pub mod datasets;
pub mod dist;
pub mod error;
pub mod io;
pub mod lasso;
pub mod loss;
pub mod mest;
pub mod montecarlo;
pub mod quadrature;
pub mod regime;
pub mod stability;
pub use error::{Error, Result};

pub use datasets::{Dataset, DesignCovariance, FoldPlan, SimConfig};
pub use dist::ErrorDist;
pub use lasso::{LassoPath, PathConfig};
pub use loss::{LossSpec, ProxSpec};
pub use mest::FitResult;
pub use montecarlo::{McConfig, McSummary};
pub use regime::{Crossover, RegimeSolution};
pub use stability::{SelectionResult, StabilityConfig, StabilityCurve};
