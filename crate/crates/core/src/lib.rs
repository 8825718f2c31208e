//! Deep partial least squares.
//!
//! PLS projects standardized predictors and centered responses onto
//! orthonormal x-scores and y-scores; a small feedforward network then maps
//! x-scores to y-scores. The crate also provides the pieces needed to use
//! the model as a cross-sectional factor model: closed-form input
//! sensitivities, Taylor-expansion attribution, linear baselines and a
//! period-by-period backtest harness.

/// Semantic version stamped into every JSON artifact.
pub const SCHEMA_VERSION: &str = "1.0.0";

/// Whether `version` shares the major version of [`SCHEMA_VERSION`].
pub fn schema_compatible(version: &str) -> bool {
    version.split('.').next() == SCHEMA_VERSION.split('.').next()
}

pub mod data;
pub mod linalg;
pub mod seed;
pub mod pls;
pub mod deepnet;
pub mod dpls;
pub mod baselines;
pub mod backtest;
