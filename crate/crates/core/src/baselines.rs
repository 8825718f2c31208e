//! Reference predictors: least squares, cross-validated LASSO and a PCA
//! factor model of the return panel.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::pls::fold_assignment;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("need at least {required} rows, got {actual}")]
    TooFewRows { required: usize, actual: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("coordinate descent did not converge in {sweeps} sweeps at lambda {lambda}")]
    NonConvergence { sweeps: usize, lambda: f64 },
    #[error("lambda path must be non-empty, non-negative and descending")]
    InvalidPath,
    #[error("cross-validation needs at least 2 folds, got {0}")]
    InvalidFolds(usize),
    #[error("predictor {0} is constant")]
    ConstantPredictor(usize),
    #[error("invalid factor count {k}: must be in 1..={max}")]
    InvalidComponents { k: usize, max: usize },
}

fn check_rows(x: ArrayView2<'_, f64>, rows: usize) -> Result<(), BaselineError> {
    if x.nrows() != rows {
        return Err(BaselineError::DimensionMismatch {
            expected: x.nrows(),
            actual: rows,
        });
    }
    if x.nrows() < 2 {
        return Err(BaselineError::TooFewRows {
            required: 2,
            actual: x.nrows(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    /// `p × q`.
    pub coefficients: Array2<f64>,
    pub intercept: Array1<f64>,
    /// Set when the centered design was rank deficient and the minimum-norm
    /// solution was returned.
    pub singular: bool,
}

impl OlsModel {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, BaselineError> {
        if x.ncols() != self.coefficients.nrows() {
            return Err(BaselineError::DimensionMismatch {
                expected: self.coefficients.nrows(),
                actual: x.ncols(),
            });
        }
        Ok(x.dot(&self.coefficients) + &self.intercept)
    }
}

/// Least squares with intercept, solved through the SVD of the centered
/// design.
pub fn fit_ols(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<OlsModel, BaselineError> {
    check_rows(x, y.nrows())?;
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(BaselineError::NonFinite);
    }
    let xm = x.mean_axis(Axis(0)).expect("rows");
    let ym = y.mean_axis(Axis(0)).expect("rows");
    let xc = &x - &xm;
    let yc = &y - &ym;
    let (coefficients, pi) = linalg::lstsq(xc.view(), yc.view());
    let intercept = &ym - &xm.dot(&coefficients);
    Ok(OlsModel {
        coefficients,
        intercept,
        singular: pi.truncated || pi.rank < x.ncols(),
    })
}

/// `sign(z)·max(|z| − λ, 0)`.
pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

pub const LASSO_MAX_SWEEPS: usize = 10_000;
pub const LASSO_TOL: f64 = 1e-7;
pub const DEFAULT_PATH_LEN: usize = 50;
pub const DEFAULT_PATH_RATIO: f64 = 1e-3;

/// Centering and scaling used inside the LASSO. Scales use the divisor `n`,
/// so every scaled column has `zᵀz/n = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoScaling {
    pub x_means: Array1<f64>,
    pub x_scales: Array1<f64>,
    pub y_mean: f64,
}

fn lasso_scaling(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<LassoScaling, BaselineError> {
    let n = x.nrows() as f64;
    let x_means = x.mean_axis(Axis(0)).expect("rows");
    let mut x_scales = Array1::zeros(x.ncols());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let ss: f64 = col.iter().map(|v| (v - x_means[j]).powi(2)).sum();
        let sd = (ss / n).sqrt();
        if !(sd > f64::EPSILON * x_means[j].abs().max(1.0)) {
            return Err(BaselineError::ConstantPredictor(j));
        }
        x_scales[j] = sd;
    }
    Ok(LassoScaling {
        x_means,
        x_scales,
        y_mean: y.sum() / n,
    })
}

fn scaled(s: &LassoScaling, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let z = (&x - &s.x_means) / &s.x_scales;
    let yc = &y - s.y_mean;
    (z, yc)
}

/// `max_j |z_jᵀy|/n` on the internally scaled problem.
pub fn lambda_max(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64, BaselineError> {
    check_rows(x, y.len())?;
    let s = lasso_scaling(x, y)?;
    let (z, yc) = scaled(&s, x, y);
    let n = x.nrows() as f64;
    Ok(z.t().dot(&yc).iter().fold(0.0_f64, |m, v| m.max(v.abs())) / n)
}

/// Geometric grid of `len` values from `lam_max` down to `lam_max·ratio`.
pub fn geometric_path(lam_max: f64, ratio: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![lam_max];
    }
    (0..len)
        .map(|i| lam_max * ratio.powf(i as f64 / (len - 1) as f64))
        .collect()
}

/// Cyclic coordinate descent for `(1/2n)‖y − Zβ‖² + λ‖β‖₁` on scaled
/// columns, starting from `beta`. Returns the number of sweeps.
fn coordinate_descent(
    z: &Array2<f64>,
    y: &Array1<f64>,
    lambda: f64,
    beta: &mut Array1<f64>,
) -> Result<usize, BaselineError> {
    let n = z.nrows() as f64;
    let col_sq: Vec<f64> = z.axis_iter(Axis(1)).map(|c| c.dot(&c) / n).collect();
    let mut resid = y - &z.dot(beta);
    for sweep in 1..=LASSO_MAX_SWEEPS {
        let mut max_change = 0.0_f64;
        for j in 0..z.ncols() {
            let col = z.column(j);
            let old = beta[j];
            let rho = col.dot(&resid) / n + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                resid.scaled_add(old - new, &col);
                beta[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        if max_change < LASSO_TOL {
            return Ok(sweep);
        }
    }
    Err(BaselineError::NonConvergence {
        sweeps: LASSO_MAX_SWEEPS,
        lambda,
    })
}

fn check_path(path: &[f64]) -> Result<(), BaselineError> {
    if path.is_empty() || path.iter().any(|l| !(*l >= 0.0)) || path.windows(2).any(|w| w[1] > w[0]) {
        return Err(BaselineError::InvalidPath);
    }
    Ok(())
}

/// Scaled-problem coefficients along a descending path with warm starts.
fn path_solutions(z: &Array2<f64>, y: &Array1<f64>, path: &[f64]) -> Result<Vec<Array1<f64>>, BaselineError> {
    let mut beta = Array1::zeros(z.ncols());
    path.iter()
        .map(|&lam| {
            coordinate_descent(z, y, lam, &mut beta)?;
            Ok(beta.clone())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvRule {
    /// The path value with the smallest mean CV error.
    #[default]
    Min,
    /// The largest λ whose CV error is within one standard error of the
    /// minimum.
    OneStandardError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoCv {
    pub lambdas: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub rule: CvRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    /// Raw-scale coefficients.
    pub coefficients: Array1<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// Coefficients on the internally scaled predictors.
    pub scaled_coefficients: Array1<f64>,
    pub scaling: LassoScaling,
    pub cv: Option<LassoCv>,
}

impl LassoModel {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, BaselineError> {
        if x.ncols() != self.coefficients.len() {
            return Err(BaselineError::DimensionMismatch {
                expected: self.coefficients.len(),
                actual: x.ncols(),
            });
        }
        Ok(x.dot(&self.coefficients) + self.intercept)
    }

    /// Largest violation of the optimality conditions on `(x, y)`:
    /// `|z_jᵀr/n| ≤ λ` for zero coefficients, `z_jᵀr/n = λ·sign(β_j)`
    /// otherwise.
    pub fn kkt_violation(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        let (z, yc) = scaled(&self.scaling, x, y);
        let n = x.nrows() as f64;
        let resid = &yc - &z.dot(&self.scaled_coefficients);
        let grad = z.t().dot(&resid) / n;
        grad.iter()
            .zip(&self.scaled_coefficients)
            .map(|(&g, &b)| {
                if b == 0.0 {
                    (g.abs() - self.lambda).max(0.0)
                } else {
                    (g - self.lambda * b.signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }
}

fn model_from_scaled(s: LassoScaling, beta: Array1<f64>, lambda: f64, cv: Option<LassoCv>) -> LassoModel {
    let coefficients = &beta / &s.x_scales;
    let intercept = s.y_mean - s.x_means.dot(&coefficients);
    LassoModel {
        coefficients,
        intercept,
        lambda,
        scaled_coefficients: beta,
        scaling: s,
        cv,
    }
}

/// LASSO at a single penalty level.
pub fn fit_lasso(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, lambda: f64) -> Result<LassoModel, BaselineError> {
    check_rows(x, y.len())?;
    if !(lambda >= 0.0) {
        return Err(BaselineError::InvalidPath);
    }
    let s = lasso_scaling(x, y)?;
    let (z, yc) = scaled(&s, x, y);
    let mut beta = Array1::zeros(x.ncols());
    coordinate_descent(&z, &yc, lambda, &mut beta)?;
    Ok(model_from_scaled(s, beta, lambda, None))
}

/// The default path for `(x, y)`: 50 geometric steps from `λ_max` to
/// `λ_max·1e-3`.
pub fn default_path(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Result<Vec<f64>, BaselineError> {
    Ok(geometric_path(lambda_max(x, y)?, DEFAULT_PATH_RATIO, DEFAULT_PATH_LEN))
}

/// K-fold cross-validated LASSO. Each fold rescales its own training rows;
/// the final model is refit on all rows at the selected penalty.
pub fn fit_lasso_cv(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda_path: Option<&[f64]>,
    folds: usize,
    seed: u64,
    rule: CvRule,
) -> Result<LassoModel, BaselineError> {
    check_rows(x, y.len())?;
    if folds < 2 || folds > x.nrows() {
        return Err(BaselineError::InvalidFolds(folds));
    }
    let path = match lambda_path {
        Some(p) => p.to_vec(),
        None => default_path(x, y)?,
    };
    check_path(&path)?;
    let n = x.nrows();
    let assignment = fold_assignment(n, folds, seed);
    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>, BaselineError> {
            let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
            let xt = x.select(Axis(0), &train);
            let yt = y.select(Axis(0), &train);
            let s = lasso_scaling(xt.view(), yt.view())?;
            let (z, yc) = scaled(&s, xt.view(), yt.view());
            let sols = path_solutions(&z, &yc, &path)?;
            let xv = x.select(Axis(0), &test);
            let yv = y.select(Axis(0), &test);
            Ok(sols
                .into_iter()
                .map(|beta| {
                    let m = model_from_scaled(s.clone(), beta, 0.0, None);
                    let pred = xv.dot(&m.coefficients) + m.intercept;
                    pred.iter().zip(&yv).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / test.len() as f64
                })
                .collect())
        })
        .collect::<Result<_, _>>()?;
    let f = folds as f64;
    let cv_mse: Vec<f64> = (0..path.len())
        .map(|i| per_fold.iter().map(|r| r[i]).sum::<f64>() / f)
        .collect();
    let cv_se: Vec<f64> = (0..path.len())
        .map(|i| {
            let var = per_fold.iter().map(|r| (r[i] - cv_mse[i]).powi(2)).sum::<f64>() / (f - 1.0);
            (var / f).sqrt()
        })
        .collect();
    let best = cv_mse
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty path");
    let chosen = match rule {
        CvRule::Min => best,
        CvRule::OneStandardError => {
            let bound = cv_mse[best] + cv_se[best];
            (0..path.len()).find(|&i| cv_mse[i] <= bound).unwrap_or(best)
        }
    };
    let lambda = path[chosen];
    let s = lasso_scaling(x, y)?;
    let (z, yc) = scaled(&s, x, y);
    let sols = path_solutions(&z, &yc, &path[..=chosen])?;
    let beta = sols.into_iter().last().expect("non-empty");
    Ok(model_from_scaled(
        s,
        beta,
        lambda,
        Some(LassoCv {
            lambdas: path,
            cv_mse,
            cv_se,
            rule,
        }),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaFactorModel {
    pub k: usize,
    /// Column means of the panel (per asset).
    pub means: Array1<f64>,
    /// Asset loadings, `N × K` with orthonormal columns.
    pub loadings: Array2<f64>,
    /// Factor realizations, `T × K`.
    pub factors: Array2<f64>,
    /// `e_k²/Σe²` for the retained components.
    pub explained_variance: Vec<f64>,
    /// All singular values of the demeaned panel.
    pub singular_values: Vec<f64>,
}

impl PcaFactorModel {
    /// In-sample fit of the panel from the first `k` factors.
    pub fn reconstruct(&self, k: usize) -> Array2<f64> {
        let k = k.min(self.k);
        let f = self.factors.slice(ndarray::s![.., ..k]);
        let l = self.loadings.slice(ndarray::s![.., ..k]);
        f.dot(&l.t()) + &self.means
    }
}

/// PCA of a `T × N` return panel via the SVD of the time-demeaned panel.
/// Factors are `U·S`, loadings are the right singular vectors.
pub fn fit_pca_factors(panel: ArrayView2<'_, f64>, k: usize) -> Result<PcaFactorModel, BaselineError> {
    let (t, n) = panel.dim();
    let max = t.min(n);
    if k == 0 || k > max {
        return Err(BaselineError::InvalidComponents { k, max });
    }
    if panel.iter().any(|v| !v.is_finite()) {
        return Err(BaselineError::NonFinite);
    }
    let means = panel.mean_axis(Axis(0)).expect("rows");
    let centered = &panel - &means;
    let dec = linalg::svd(centered.view());
    let total: f64 = dec.s.iter().map(|s| s * s).sum();
    let mut factors = dec.u.slice(ndarray::s![.., ..k]).to_owned();
    for (mut col, s) in factors.columns_mut().into_iter().zip(dec.s.iter()) {
        col *= *s;
    }
    let explained_variance = dec
        .s
        .iter()
        .take(k)
        .map(|s| if total > 0.0 { s * s / total } else { 0.0 })
        .collect();
    Ok(PcaFactorModel {
        k,
        means,
        loadings: dec.vt.slice(ndarray::s![..k, ..]).t().to_owned(),
        factors,
        explained_variance,
        singular_values: dec.s.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ols_exact_line() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = array![[3.0], [6.0], [9.0], [12.0]];
        let m = fit_ols(x.view(), y.view()).unwrap();
        assert!((m.coefficients[[0, 0]] - 3.0).abs() < 1e-10);
        assert!(m.intercept[0].abs() < 1e-10);
        assert!(!m.singular);
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(0.5, 0.2), 0.3);
        assert_eq!(soft_threshold(-0.5, 0.2), -0.3);
        assert_eq!(soft_threshold(0.1, 0.2), 0.0);
    }

    #[test]
    fn path_is_geometric() {
        let p = geometric_path(2.0, 1e-3, 50);
        assert_eq!(p.len(), 50);
        assert_eq!(p[0], 2.0);
        assert!((p[49] - 2e-3).abs() < 1e-15);
        assert!(p.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn pca_bounds_checked() {
        let y = Array2::<f64>::zeros((3, 4));
        assert!(matches!(fit_pca_factors(y.view(), 4), Err(BaselineError::InvalidComponents { .. })));
    }
}
