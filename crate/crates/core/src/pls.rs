//! Linear partial least squares.
//!
//! Components are extracted one at a time from the top singular pair of the
//! deflated cross-product `XₖᵀYₖ`. X-scores are normalized so that `VᵀV = I`,
//! the inner coefficient of component `k` is the least-squares slope of the
//! y-score on the x-score, and new rows are scored with the rotation
//! `R = W(PW)⁻¹`, which reproduces the training scores exactly.
//!
//! Besides the iterative fit this module has the closed-form Krylov
//! estimator, eigenbasis scale factors and cross-validated component
//! selection.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{apply_standardizer, fit_standardizer, DataError, Standardizer};
use crate::linalg::{self, PINV_RTOL};
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum PlsError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("cross-covariance vanished at component {component}")]
    RankDeficient { component: usize },
    #[error("invalid component count {k}: must be in 1..={max}")]
    InvalidComponents { k: usize, max: usize },
    #[error("non-finite input")]
    NonFinite,
    #[error("component grid is empty")]
    GridEmpty,
    #[error("cross-validation needs at least 2 folds, got {0}")]
    InvalidFolds(usize),
    #[error("scale factors need a univariate response")]
    NotUnivariate,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Cross-products below this fraction of `‖X‖_F·‖Y‖_F` count as zero.
const CROSS_PRODUCT_RTOL: f64 = 1e-10;

/// How new predictor rows are mapped to x-scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// `X·W(PW)⁻¹`; exact on the training rows.
    #[default]
    Rotation,
    /// `X·P⁺` with the Moore-Penrose inverse of the loadings.
    PseudoInverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlsModel {
    #[serde(rename = "K")]
    pub k: usize,
    /// X-loadings, `K × p`.
    #[serde(rename = "P")]
    pub x_loadings: Array2<f64>,
    /// Y-loadings (unit rows), `K × q`.
    #[serde(rename = "Q")]
    pub y_loadings: Array2<f64>,
    /// Diagonal of the inner coefficient matrix.
    #[serde(rename = "B_diag")]
    pub inner: Array1<f64>,
    /// Projection weights, `p × K`.
    #[serde(rename = "W")]
    pub weights: Array2<f64>,
    pub standardizer: Standardizer,
    pub y_center: Array1<f64>,
    /// Training x-scores, `N × K`, orthonormal columns.
    #[serde(rename = "V")]
    pub x_scores: Array2<f64>,
    /// Training y-scores, `N × K`.
    #[serde(rename = "U")]
    pub y_scores: Array2<f64>,
    /// Centered training responses, `N × q`.
    #[serde(rename = "Y_c")]
    pub y_train: Array2<f64>,
    pub requested_k: usize,
    /// Set when fewer than `requested_k` components could be extracted.
    pub rank_deficient: bool,
}

impl PlsModel {
    pub fn n_features(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_responses(&self) -> usize {
        self.y_loadings.ncols()
    }

    /// `R = W(PW)⁻¹`, `p × K`.
    pub fn rotation(&self) -> Array2<f64> {
        let pw = self.x_loadings.dot(&self.weights);
        self.weights.dot(&linalg::pinv(pw.view(), PINV_RTOL).matrix)
    }

    fn scoring_matrix(&self, scoring: Scoring) -> Array2<f64> {
        match scoring {
            Scoring::Rotation => self.rotation(),
            Scoring::PseudoInverse => linalg::pinv(self.x_loadings.view(), PINV_RTOL).matrix,
        }
    }

    fn check_cols(&self, x: ArrayView2<'_, f64>) -> Result<(), PlsError> {
        if x.ncols() != self.n_features() {
            return Err(PlsError::DimensionMismatch {
                expected: self.n_features(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn standardize(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, PlsError> {
        self.check_cols(x)?;
        Ok(apply_standardizer(&self.standardizer, x)?)
    }

    /// X-scores of raw predictor rows.
    pub fn scores(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, PlsError> {
        self.scores_with(x, Scoring::Rotation)
    }

    pub fn scores_with(&self, x: ArrayView2<'_, f64>, scoring: Scoring) -> Result<Array2<f64>, PlsError> {
        let z = self.standardize(x)?;
        Ok(z.dot(&self.scoring_matrix(scoring)))
    }

    /// Maps score rows to centered responses: `V·diag(B)·Q`.
    pub fn scores_to_response(&self, v: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut vb = v.to_owned();
        for mut row in vb.rows_mut() {
            row *= &self.inner;
        }
        vb.dot(&self.y_loadings)
    }

    /// Coefficient matrix on the standardized-X / centered-Y scale,
    /// `R·diag(B)·Q` (`p × q`).
    pub fn coefficients(&self) -> Array2<f64> {
        let mut r = self.rotation();
        for mut row in r.rows_mut() {
            row *= &self.inner;
        }
        r.dot(&self.y_loadings)
    }

    /// Coefficients and intercept on the raw scale.
    pub fn raw_coefficients(&self) -> (Array2<f64>, Array1<f64>) {
        let mut beta = self.coefficients();
        for (mut row, sd) in beta.rows_mut().into_iter().zip(self.standardizer.sds.iter()) {
            row /= *sd;
        }
        let intercept = &self.y_center - &self.standardizer.means.dot(&beta);
        (beta, intercept)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, PlsError> {
        self.predict_with(x, Scoring::Rotation)
    }

    pub fn predict_with(&self, x: ArrayView2<'_, f64>, scoring: Scoring) -> Result<Array2<f64>, PlsError> {
        let v = self.scores_with(x, scoring)?;
        Ok(self.scores_to_response(v.view()) + &self.y_center)
    }

    /// The model restricted to its first `k` components. Components are
    /// nested, so this equals a fresh fit with `k` components.
    pub fn truncated(&self, k: usize) -> PlsModel {
        let k = k.min(self.k);
        let v = self.x_scores.slice(s![.., ..k]).to_owned();
        let q = self.y_loadings.slice(s![..k, ..]).to_owned();
        let b = self.inner.slice(s![..k]).to_owned();
        let u = y_scores_from(&v, &b, &q, &self.y_train);
        PlsModel {
            k,
            x_loadings: self.x_loadings.slice(s![..k, ..]).to_owned(),
            y_loadings: q,
            inner: b,
            weights: self.weights.slice(s![.., ..k]).to_owned(),
            standardizer: self.standardizer.clone(),
            y_center: self.y_center.clone(),
            x_scores: v,
            y_scores: u,
            y_train: self.y_train.clone(),
            requested_k: k,
            rank_deficient: false,
        }
    }
}

fn scores_times(v: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut out = v.clone();
    for mut row in out.rows_mut() {
        row *= b;
    }
    out
}

/// Y-scores `U = V·diag(B) + (Y_c − V·diag(B)·Q)·Q⁺`. Regressing `U` on the
/// orthonormal `V` returns `diag(B)` exactly, and `U·Q` is the projection of
/// `Y_c` onto the row space of `Q`.
fn y_scores_from(v: &Array2<f64>, b: &Array1<f64>, q: &Array2<f64>, yc: &Array2<f64>) -> Array2<f64> {
    let vb = scores_times(v, b);
    let resid = yc - &vb.dot(q);
    let q_pinv = linalg::pinv(q.view(), PINV_RTOL).matrix;
    vb + resid.dot(&q_pinv)
}

fn frobenius(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_inputs(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<(), PlsError> {
    if x.nrows() != y.nrows() {
        return Err(PlsError::DimensionMismatch {
            expected: x.nrows(),
            actual: y.nrows(),
        });
    }
    if x.nrows() < 2 {
        return Err(DataError::TooFewRows {
            required: 2,
            actual: x.nrows(),
        }
        .into());
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(PlsError::NonFinite);
    }
    Ok(())
}

fn center_columns(y: ArrayView2<'_, f64>) -> (Array2<f64>, Array1<f64>) {
    let mean = y.mean_axis(Axis(0)).expect("non-empty");
    (&y - &mean, mean)
}

/// Largest admissible component count for an `n × p` design.
pub fn max_components(n: usize, p: usize) -> usize {
    p.min(n.saturating_sub(1))
}

/// Column treatment of the predictors before the fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    /// Center and divide by the sample standard deviation.
    #[default]
    Standardize,
    /// Center only; coefficients stay in the raw predictor metric.
    Center,
}

pub fn fit_nipals(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, k: usize) -> Result<PlsModel, PlsError> {
    fit_nipals_with(x, y, k, Preprocessing::Standardize)
}

pub fn fit_nipals_with(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    k: usize,
    prep: Preprocessing,
) -> Result<PlsModel, PlsError> {
    check_inputs(x, y)?;
    let (n, p) = x.dim();
    let q = y.ncols();
    let kmax = max_components(n, p);
    if k == 0 || k > kmax {
        return Err(PlsError::InvalidComponents { k, max: kmax });
    }
    let standardizer = match prep {
        Preprocessing::Standardize => fit_standardizer(x)?,
        Preprocessing::Center => Standardizer {
            means: x.mean_axis(Axis(0)).expect("non-empty"),
            sds: Array1::ones(p),
        },
    };
    let xs = apply_standardizer(&standardizer, x)?;
    let (yc, y_center) = center_columns(y);
    let threshold = CROSS_PRODUCT_RTOL * frobenius(xs.view()) * frobenius(yc.view());

    let mut xk = xs;
    let mut yk = yc.clone();
    let mut weights = Array2::zeros((p, k));
    let mut x_loadings = Array2::zeros((k, p));
    let mut y_loadings = Array2::zeros((k, q));
    let mut inner = Array1::zeros(k);
    let mut x_scores = Array2::zeros((n, k));
    let mut achieved = 0;

    for comp in 0..k {
        let cross = xk.t().dot(&yk);
        let dec = linalg::svd(cross.view());
        if dec.s.is_empty() || !(dec.s[0] > threshold) {
            break;
        }
        let mut w = dec.u.column(0).to_owned();
        let mut c = dec.vt.row(0).to_owned();
        let lead = w.iter().copied().find(|v| v.abs() > 1e-12).unwrap_or(0.0);
        if lead < 0.0 {
            w.mapv_inplace(|v| -v);
            c.mapv_inplace(|v| -v);
        }
        let t = xk.dot(&w);
        let tn = t.dot(&t).sqrt();
        if !(tn > 0.0) {
            break;
        }
        let v = t / tn;
        let p_load = xk.t().dot(&v);
        let beta = v.dot(&yk.dot(&c));

        let v_col = v.view().insert_axis(Axis(1));
        xk -= &v_col.dot(&p_load.view().insert_axis(Axis(0)));
        yk -= &v_col.dot(&(&c * beta).insert_axis(Axis(0)));

        weights.column_mut(comp).assign(&w);
        x_loadings.row_mut(comp).assign(&p_load);
        y_loadings.row_mut(comp).assign(&c);
        inner[comp] = beta;
        x_scores.column_mut(comp).assign(&v);
        achieved += 1;
    }
    if achieved == 0 {
        return Err(PlsError::RankDeficient { component: 1 });
    }
    let x_scores = x_scores.slice(s![.., ..achieved]).to_owned();
    let y_loadings = y_loadings.slice(s![..achieved, ..]).to_owned();
    let inner = inner.slice(s![..achieved]).to_owned();
    let y_scores = y_scores_from(&x_scores, &inner, &y_loadings, &yc);
    Ok(PlsModel {
        k: achieved,
        x_loadings: x_loadings.slice(s![..achieved, ..]).to_owned(),
        y_loadings,
        inner,
        weights: weights.slice(s![.., ..achieved]).to_owned(),
        standardizer,
        y_center,
        x_scores,
        y_scores,
        y_train: yc,
        requested_k: k,
        rank_deficient: achieved < k,
    })
}

/// `β_PLS = R·diag(B)·Q` on the standardized scale.
pub fn pls_coefficients(m: &PlsModel) -> Array2<f64> {
    m.coefficients()
}

pub fn predict(m: &PlsModel, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>, PlsError> {
    m.predict(x_new)
}

/// Krylov basis `[s, S s, …, S^{K−1} s]` of the predictor covariance and one
/// response's cross-covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct KrylovBasis {
    /// `p × K`, unnormalized powers.
    pub r: Array2<f64>,
    pub s_xx: Array2<f64>,
    pub s_xy: Array1<f64>,
}

impl KrylovBasis {
    pub fn new(s_xx: Array2<f64>, s_xy: Array1<f64>, k: usize) -> Self {
        let p = s_xy.len();
        let mut r = Array2::zeros((p, k));
        let mut col = s_xy.clone();
        for j in 0..k {
            r.column_mut(j).assign(&col);
            col = s_xx.dot(&col);
        }
        Self { r, s_xx, s_xy }
    }

    /// Orthonormal basis of the same Krylov space, built by Arnoldi steps
    /// with re-orthogonalization. Stops early if the space is exhausted.
    pub fn orthonormal(&self) -> Array2<f64> {
        let (p, k) = self.r.dim();
        let scale = self.s_xx.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut basis: Vec<Array1<f64>> = Vec::with_capacity(k);
        let mut next = self.s_xy.clone();
        for j in 0..k {
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&next);
                    next.scaled_add(-c, b);
                }
            }
            let norm = next.dot(&next).sqrt();
            let exhausted = if j == 0 { norm == 0.0 } else { norm <= 1e-10 * scale };
            if exhausted {
                break;
            }
            let q = next / norm;
            next = self.s_xx.dot(&q);
            basis.push(q);
        }
        let mut out = Array2::zeros((p, basis.len()));
        for (j, b) in basis.iter().enumerate() {
            out.column_mut(j).assign(b);
        }
        out
    }

    /// `R(RᵀS_xxR)⁻¹RᵀS_xy`, evaluated with an orthonormal basis of the
    /// column space of `R` (the estimator depends on `R` only through that
    /// space). Returns the coefficients and whether the space was
    /// degenerate or the inner matrix needed a truncated pseudo-inverse.
    pub fn coefficients(&self) -> (Array1<f64>, bool) {
        let basis = self.orthonormal();
        let degenerate = basis.ncols() < self.r.ncols();
        let gram = basis.t().dot(&self.s_xx).dot(&basis);
        let gi = linalg::pinv(gram.view(), PINV_RTOL);
        let beta = basis.dot(&gi.matrix.dot(&basis.t().dot(&self.s_xy)));
        (beta, gi.truncated || degenerate)
    }
}

/// Closed-form Krylov estimate, standardized scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HellandFit {
    /// `p × q`.
    pub coefficients: Array2<f64>,
    pub standardizer: Standardizer,
    pub y_center: Array1<f64>,
    /// A pseudo-inverse with truncation replaced `(RᵀS_xxR)⁻¹`.
    pub singular_krylov: bool,
}

impl HellandFit {
    pub fn raw_coefficients(&self) -> (Array2<f64>, Array1<f64>) {
        let mut beta = self.coefficients.clone();
        for (mut row, sd) in beta.rows_mut().into_iter().zip(self.standardizer.sds.iter()) {
            row /= *sd;
        }
        let intercept = &self.y_center - &self.standardizer.means.dot(&beta);
        (beta, intercept)
    }
}

/// Sample covariance of standardized predictors and their cross-covariance
/// with centered responses, both with the `n − 1` divisor.
fn covariances(xs: &Array2<f64>, yc: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let d = (xs.nrows() - 1) as f64;
    (xs.t().dot(xs) / d, xs.t().dot(yc) / d)
}

/// Each response column is estimated separately.
pub fn helland_coefficients(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, k: usize) -> Result<HellandFit, PlsError> {
    check_inputs(x, y)?;
    let kmax = max_components(x.nrows(), x.ncols());
    if k == 0 || k > kmax {
        return Err(PlsError::InvalidComponents { k, max: kmax });
    }
    let standardizer = fit_standardizer(x)?;
    let xs = apply_standardizer(&standardizer, x)?;
    let (yc, y_center) = center_columns(y);
    let (s_xx, s_xy) = covariances(&xs, &yc);
    let mut coefficients = Array2::zeros((x.ncols(), y.ncols()));
    let mut singular = false;
    for (j, sxy) in s_xy.columns().into_iter().enumerate() {
        let basis = KrylovBasis::new(s_xx.clone(), sxy.to_owned(), k);
        let (beta, trunc) = basis.coefficients();
        singular |= trunc;
        coefficients.column_mut(j).assign(&beta);
    }
    Ok(HellandFit {
        coefficients,
        standardizer,
        y_center,
        singular_krylov: singular,
    })
}

/// Shrinkage of the PLS estimate along the eigendirections of the
/// predictor covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactorReport {
    /// Nonzero eigenvalues `e_j²`, descending; length = rank.
    pub eigenvalues: Vec<f64>,
    /// `(v_jᵀβ_PLS)/(v_jᵀβ_OLS)`; `None` where the OLS projection vanishes.
    pub factors: Vec<Option<f64>>,
    /// Polynomial form `Σ_k θ_k e_j^{2k}` for every direction.
    pub closed_form: Vec<f64>,
    /// OLS coefficients in the eigenbasis, `α̂_j = v_jᵀβ_OLS`.
    pub alpha_ols: Vec<f64>,
    /// `θ` for eigenvalues rescaled by the largest one.
    pub theta: Vec<f64>,
    /// Eigenvalue shares another eigenvalue within tolerance; the factor
    /// for that direction is not identified.
    pub degenerate: Vec<bool>,
    #[serde(rename = "K")]
    pub k: usize,
}

impl ScaleFactorReport {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Any defined factor above one signals expansion rather than shrinkage.
    pub fn expands(&self) -> bool {
        self.factors.iter().flatten().any(|&f| f > 1.0)
    }
}

const EIGEN_RTOL: f64 = 1e-12;
const ALPHA_RTOL: f64 = 1e-8;
const DEGENERATE_RTOL: f64 = 1e-8;

pub fn scale_factors(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, k: usize) -> Result<ScaleFactorReport, PlsError> {
    let y2 = y.insert_axis(Axis(1));
    let model = fit_nipals(x, y2, k)?;
    let beta_pls = model.coefficients().column(0).to_owned();

    let xs = apply_standardizer(&model.standardizer, x)?;
    let (yc, _) = center_columns(y2);
    let (s_xx, s_xy) = covariances(&xs, &yc);
    let s_xy = s_xy.column(0).to_owned();
    let eig = linalg::sym_eigen(s_xx.view());
    let top = eig.values.first().copied().unwrap_or(0.0);
    let rank = eig.values.iter().filter(|&&e| e > EIGEN_RTOL * top).count();

    let eigenvalues: Vec<f64> = eig.values.iter().take(rank).copied().collect();
    let alpha_ols: Vec<f64> = (0..rank)
        .map(|j| eig.vectors.column(j).dot(&s_xy) / eigenvalues[j])
        .collect();
    let alpha_max = alpha_ols.iter().fold(0.0_f64, |m, a| m.max(a.abs()));
    let factors = (0..rank)
        .map(|j| {
            let a = alpha_ols[j];
            (a.abs() > ALPHA_RTOL * alpha_max).then(|| eig.vectors.column(j).dot(&beta_pls) / a)
        })
        .collect();
    let degenerate = (0..rank)
        .map(|j| {
            (0..rank).any(|i| i != j && (eigenvalues[i] - eigenvalues[j]).abs() <= DEGENERATE_RTOL * top)
        })
        .collect();

    let (theta, closed_form) = polynomial_scale_factors(&eigenvalues, &alpha_ols, model.k);
    Ok(ScaleFactorReport {
        eigenvalues,
        factors,
        closed_form,
        alpha_ols,
        theta,
        degenerate,
        k: model.k,
    })
}

/// Solves `wθ = η` with `w_{kl} = Σ_j α_j² e_j^{2(k+l+1)}` and
/// `η_k = Σ_j α_j² e_j^{2(k+1)}`, then evaluates `f_j = Σ_k θ_k e_j^{2k}`.
///
/// The system is the normal equation of a weighted least-squares fit of the
/// constant 1 by the powers `e_j^{2k}` (weights `α_j² e_j²`), so it is solved
/// in that form, on eigenvalues divided by the largest one.
fn polynomial_scale_factors(eigenvalues: &[f64], alpha: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let r = eigenvalues.len();
    if r == 0 {
        return (vec![0.0; k], Vec::new());
    }
    let top = eigenvalues[0];
    let lam: Vec<f64> = eigenvalues.iter().map(|e| e / top).collect();
    let mut a = Array2::zeros((r, k));
    let mut b = Array2::zeros((r, 1));
    for j in 0..r {
        let sw = alpha[j].abs() * lam[j].sqrt();
        let mut pow = lam[j];
        for c in 0..k {
            a[[j, c]] = sw * pow;
            pow *= lam[j];
        }
        b[[j, 0]] = sw;
    }
    let (theta, _) = linalg::lstsq(a.view(), b.view());
    let theta: Vec<f64> = theta.column(0).to_vec();
    let f = lam
        .iter()
        .map(|&l| {
            let mut pow = l;
            theta.iter().fold(0.0, |acc, t| {
                let term = t * pow;
                pow *= l;
                acc + term
            })
        })
        .collect();
    (theta, f)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k_star: usize,
    /// Mean out-of-fold MSE per grid entry, in grid order.
    pub cv_mse: Vec<f64>,
    pub k_grid: Vec<usize>,
}

/// Relative slack under which two CV errors count as tied.
const CV_TIE_RTOL: f64 = 1e-9;

/// Picks the grid value with the smallest CV error; ties go to the smaller
/// component count.
pub fn argmin_smallest(grid: &[usize], mse: &[f64]) -> usize {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by_key(|&i| grid[i]);
    let mut best = order[0];
    for &i in &order[1..] {
        if mse[i] < mse[best] * (1.0 - CV_TIE_RTOL) - f64::MIN_POSITIVE {
            best = i;
        }
    }
    grid[best]
}

/// Assigns rows to `folds` folds after a seeded shuffle.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, "cv/folds"));
    let mut fold = vec![0; n];
    for (pos, &row) in idx.iter().enumerate() {
        fold[row] = pos % folds;
    }
    fold
}

fn select_rows(a: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    a.select(Axis(0), rows)
}

pub fn select_k_cv(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    k_grid: &[usize],
    folds: usize,
    seed: u64,
) -> Result<CvResult, PlsError> {
    if k_grid.is_empty() {
        return Err(PlsError::GridEmpty);
    }
    if folds < 2 {
        return Err(PlsError::InvalidFolds(folds));
    }
    check_inputs(x, y)?;
    let n = x.nrows();
    let assignment = fold_assignment(n, folds, seed);
    let smallest_train = (0..folds)
        .map(|f| assignment.iter().filter(|&&a| a != f).count())
        .min()
        .unwrap_or(0);
    let kmax_allowed = max_components(smallest_train, x.ncols());
    let k_top = *k_grid.iter().max().expect("non-empty");
    if k_grid.iter().any(|&k| k == 0) || k_top > kmax_allowed {
        return Err(PlsError::InvalidComponents {
            k: k_top,
            max: kmax_allowed,
        });
    }

    let per_fold: Vec<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>, PlsError> {
            let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
            let model = fit_nipals(select_rows(x, &train).view(), select_rows(y, &train).view(), k_top)?;
            let xt = select_rows(x, &test);
            let yt = select_rows(y, &test);
            let v = model.scores(xt.view())?;
            k_grid
                .iter()
                .map(|&k| {
                    let sub = model.truncated(k);
                    let pred = sub.scores_to_response(v.slice(s![.., ..sub.k])) + &sub.y_center;
                    Ok(mse(pred.view(), yt.view()))
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let cv_mse: Vec<f64> = (0..k_grid.len())
        .map(|i| per_fold.iter().map(|f| f[i]).sum::<f64>() / folds as f64)
        .collect();
    Ok(CvResult {
        k_star: argmin_smallest(k_grid, &cv_mse),
        cv_mse,
        k_grid: k_grid.to_vec(),
    })
}

pub(crate) fn mse(pred: ArrayView2<'_, f64>, actual: ArrayView2<'_, f64>) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter().zip(actual.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}
