//! PLS projections composed with a feedforward score map.
//!
//! The model predicts `ŷ = g(v)·Q + ȳ` where `v` are the PLS x-scores of a
//! standardized row and `g` is a trained network mapping x-scores to
//! y-scores. The PLS fit is frozen before the network is trained.
//!
//! PLS x-scores have unit norm over the training sample, so their entries
//! shrink like `1/√n`. The network therefore sees scores multiplied by
//! `s = √(n−1)` (unit sample variance) and `g(v) = G(s·v)`. All
//! derivatives in this module are of `g`, i.e. in the PLS score units.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{draw_truth, sample_from_truth, DataError, Link, Regime, SynthConfig};
use crate::deepnet::{train_adam, Activation, Architecture, Init, NetError, Network, TrainConfig};
use crate::linalg;
use crate::pls::{fit_nipals, fit_nipals_with, PlsError, PlsModel, Preprocessing};
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Error)]
pub enum DplsError {
    #[error(transparent)]
    Pls(#[from] PlsError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("bootstrap needs at least 2 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("every bootstrap resample failed")]
    AllResamplesFailed,
    #[error("invalid link for the consistency check: {0}")]
    InvalidLink(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Hidden layer widths and activation of the score network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            hidden: vec![100, 100],
            activation: Activation::Softplus,
        }
    }
}

impl NetSpec {
    pub fn architecture(&self, k: usize) -> Architecture {
        Architecture {
            input_dim: k,
            hidden: self.hidden.clone(),
            output_dim: k,
            activation: self.activation,
        }
    }
}

/// Everything needed to refit a model on new rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DplsSpec {
    pub k: usize,
    pub net: NetSpec,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedOn {
    pub n_rows: usize,
    pub period: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub initial_mse: f64,
    pub final_mse: f64,
    pub epochs: usize,
    pub non_convergent: bool,
    /// Training MSE after each epoch.
    #[serde(default)]
    pub loss_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DplsModel {
    pub pls: PlsModel,
    pub net: Network,
    /// Factor applied to PLS scores before they enter the network.
    pub score_scale: f64,
    pub trained_on: TrainedOn,
    pub training: Option<TrainingSummary>,
}

impl DplsModel {
    pub fn new(pls: PlsModel, net: Network, score_scale: f64) -> Result<Self, DplsError> {
        for dim in [net.input_dim(), net.output_dim()] {
            if dim != pls.k {
                return Err(DplsError::DimensionMismatch {
                    expected: pls.k,
                    actual: dim,
                });
            }
        }
        if !(score_scale > 0.0 && score_scale.is_finite()) {
            return Err(DplsError::InvalidInput("score scale must be positive".into()));
        }
        let n_rows = pls.x_scores.nrows();
        Ok(Self {
            pls,
            net,
            score_scale,
            trained_on: TrainedOn { n_rows, period: None },
            training: None,
        })
    }

    pub fn k(&self) -> usize {
        self.pls.k
    }

    /// Score map `g(v) = G(s·v)`, row-wise.
    pub fn score_map(&self, v: ArrayView2<'_, f64>) -> Result<Array2<f64>, DplsError> {
        Ok(self.net.forward((&v * self.score_scale).view())?)
    }

    /// `∂g/∂v` at one score vector, `K_out × K_in`.
    pub fn score_jacobian(&self, v: ArrayView1<'_, f64>) -> Result<Array2<f64>, DplsError> {
        Ok(self.net.jacobian((&v * self.score_scale).view())? * self.score_scale)
    }

    /// Hessians of every score-map output, each `K × K` and symmetric.
    pub fn score_hessians(&self, v: ArrayView1<'_, f64>) -> Result<Vec<Array2<f64>>, DplsError> {
        let h = self.net.hessian_tensor((&v * self.score_scale).view())?;
        Ok(h.outer_iter()
            .map(|hk| (&hk + &hk.t()) * (0.5 * self.score_scale * self.score_scale))
            .collect())
    }

    /// Prediction from standardized predictor rows.
    pub fn predict_standardized(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>, DplsError> {
        if z.ncols() != self.pls.n_features() {
            return Err(DplsError::DimensionMismatch {
                expected: self.pls.n_features(),
                actual: z.ncols(),
            });
        }
        let v = z.dot(&self.pls.rotation());
        self.predict_scores(v.view())
    }

    /// Prediction from x-score rows.
    pub fn predict_scores(&self, v: ArrayView2<'_, f64>) -> Result<Array2<f64>, DplsError> {
        self.predict_scores_truncated(v, self.k())
    }

    /// Prediction keeping only the first `k` network outputs.
    pub fn predict_scores_truncated(&self, v: ArrayView2<'_, f64>, k: usize) -> Result<Array2<f64>, DplsError> {
        let k = k.min(self.k());
        let g = self.score_map(v)?;
        Ok(g.slice(s![.., ..k]).dot(&self.pls.y_loadings.slice(s![..k, ..])) + &self.pls.y_center)
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, DplsError> {
        let v = self.pls.scores(x)?;
        self.predict_scores(v.view())
    }

    /// Retrains only the network on the frozen PLS scores.
    pub fn refit_network(&self, net: &NetSpec, train: &TrainConfig) -> Result<DplsModel, DplsError> {
        let (fresh, summary) = train_score_net(&self.pls, net, train, self.score_scale)?;
        Ok(DplsModel {
            pls: self.pls.clone(),
            net: fresh,
            score_scale: self.score_scale,
            trained_on: self.trained_on.clone(),
            training: Some(summary),
        })
    }
}

fn train_score_net(
    pls: &PlsModel,
    spec: &NetSpec,
    train: &TrainConfig,
    scale: f64,
) -> Result<(Network, TrainingSummary), DplsError> {
    let arch = spec.architecture(pls.k);
    let init = match train.init {
        Init::UniformGlorot => Network::glorot(&arch, train.seed),
        Init::PlsWarmStart => Network::warm_start(&arch, (&pls.inner / scale).view(), train.seed),
    };
    let v = &pls.x_scores * scale;
    let out = train_adam(&init, v.view(), pls.y_scores.view(), train)?;
    let summary = TrainingSummary {
        initial_mse: out.initial_mse,
        final_mse: out.loss_curve.last().copied().unwrap_or(out.initial_mse),
        epochs: out.loss_curve.len(),
        non_convergent: out.non_convergent,
        loss_curve: out.loss_curve,
    };
    Ok((out.net, summary))
}

/// Fits PLS with `k` components, then trains the score network on the
/// frozen training scores.
pub fn fit_dpls(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    k: usize,
    net: &NetSpec,
    train: &TrainConfig,
) -> Result<DplsModel, DplsError> {
    let pls = fit_nipals(x, y, k)?;
    fit_dpls_on(pls, net, train)
}

/// Trains the score network for an existing PLS fit.
pub fn fit_dpls_on(pls: PlsModel, net: &NetSpec, train: &TrainConfig) -> Result<DplsModel, DplsError> {
    let n = pls.x_scores.nrows();
    let scale = ((n.max(2) - 1) as f64).sqrt();
    let (trained, summary) = train_score_net(&pls, net, train, scale)?;
    let mut model = DplsModel::new(pls, trained, scale)?;
    model.training = Some(summary);
    Ok(model)
}

pub fn fit_dpls_spec(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, spec: &DplsSpec) -> Result<DplsModel, DplsError> {
    fit_dpls(x, y, spec.k, &spec.net, &spec.train)
}

pub fn predict_dpls(m: &DplsModel, x_new: ArrayView2<'_, f64>) -> Result<Array2<f64>, DplsError> {
    m.predict(x_new)
}

fn check_point(m: &DplsModel, z: ArrayView1<'_, f64>) -> Result<(), DplsError> {
    if z.len() != m.pls.n_features() {
        return Err(DplsError::DimensionMismatch {
            expected: m.pls.n_features(),
            actual: z.len(),
        });
    }
    Ok(())
}

/// `∂ŷ/∂z` at a standardized point, `q × p`: `Qᵀ·J_g(v)·Rᵀ` with `v = Rᵀz`.
pub fn covariate_jacobian(m: &DplsModel, z: ArrayView1<'_, f64>) -> Result<Array2<f64>, DplsError> {
    check_point(m, z)?;
    let r = m.pls.rotation();
    let v = r.t().dot(&z);
    let j = m.score_jacobian(v.view())?;
    Ok(m.pls.y_loadings.t().dot(&j).dot(&r.t()))
}

/// `∂²ŷ_j/∂z²` at a standardized point: `R·(Σ_k Q[k,j]·H_k)·Rᵀ`.
pub fn covariate_hessian(m: &DplsModel, z: ArrayView1<'_, f64>, output: usize) -> Result<Array2<f64>, DplsError> {
    check_point(m, z)?;
    if output >= m.pls.n_responses() {
        return Err(DplsError::DimensionMismatch {
            expected: m.pls.n_responses(),
            actual: output,
        });
    }
    let r = m.pls.rotation();
    let v = r.t().dot(&z);
    let k = m.k();
    let mut inner = Array2::<f64>::zeros((k, k));
    for (kk, hk) in m.score_hessians(v.view())?.iter().enumerate() {
        inner.scaled_add(m.pls.y_loadings[[kk, output]], hk);
    }
    let h = r.dot(&inner).dot(&r.t());
    Ok((&h + &h.t()) * 0.5)
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapQuantiles {
    pub q05: Array2<f64>,
    pub q50: Array2<f64>,
    pub q95: Array2<f64>,
    pub resamples: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Average covariate Jacobian over the evaluation rows, `q × p`.
    pub jacobian_mean: Array2<f64>,
    pub jacobian_at_zero: Array2<f64>,
    /// One symmetric `p × p` matrix per response.
    pub hessian_at_zero: Vec<Array2<f64>>,
    pub bootstrap: Option<BootstrapQuantiles>,
}

/// Jacobian and Hessians at the standardized origin plus the Jacobian
/// averaged over the standardized rows of `x`.
pub fn sensitivities(m: &DplsModel, x: ArrayView2<'_, f64>) -> Result<SensitivityReport, DplsError> {
    let z = m.pls.standardize(x)?;
    let p = m.pls.n_features();
    let origin = Array1::<f64>::zeros(p);
    let rows: Vec<Array2<f64>> = (0..z.nrows())
        .into_par_iter()
        .map(|i| covariate_jacobian(m, z.row(i)))
        .collect::<Result<_, _>>()?;
    let mut mean = Array2::<f64>::zeros((m.pls.n_responses(), p));
    for j in &rows {
        mean += j;
    }
    mean /= rows.len().max(1) as f64;
    let hessian_at_zero = (0..m.pls.n_responses())
        .map(|j| covariate_hessian(m, origin.view(), j))
        .collect::<Result<_, _>>()?;
    Ok(SensitivityReport {
        jacobian_mean: mean,
        jacobian_at_zero: covariate_jacobian(m, origin.view())?,
        hessian_at_zero,
        bootstrap: None,
    })
}

/// Refits the model on `b` row resamples of `(x, y)` and reports
/// per-entry quantiles of the Jacobian at the standardized origin.
/// Resample `i` draws its rows and its training seed from labels derived
/// from `seed`, so the result does not depend on thread scheduling.
pub fn bootstrap_sensitivities(
    spec: &DplsSpec,
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    b: usize,
    seed: u64,
) -> Result<SensitivityReport, DplsError> {
    if b < 2 {
        return Err(DplsError::TooFewResamples(b));
    }
    let full = fit_dpls_spec(x, y, spec)?;
    let mut report = sensitivities(&full, x)?;
    let n = x.nrows();
    let p = x.ncols();
    let draws: Vec<Option<Array2<f64>>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, &format!("bootstrap/{i}/rows"));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let xb = x.select(Axis(0), &rows);
            let yb = y.select(Axis(0), &rows);
            let mut sub = spec.clone();
            sub.train.seed = derive_seed(seed, &format!("bootstrap/{i}/train"));
            let fit = fit_dpls_spec(xb.view(), yb.view(), &sub).ok()?;
            covariate_jacobian(&fit, Array1::zeros(p).view()).ok()
        })
        .collect();
    let ok: Vec<Array2<f64>> = draws.into_iter().flatten().collect();
    if ok.is_empty() {
        return Err(DplsError::AllResamplesFailed);
    }
    let (q, _) = ok[0].dim();
    let mut out = [Array2::zeros((q, p)), Array2::zeros((q, p)), Array2::zeros((q, p))];
    for r in 0..q {
        for c in 0..p {
            let mut vals: Vec<f64> = ok.iter().map(|j| j[[r, c]]).collect();
            vals.sort_by(f64::total_cmp);
            for (slot, level) in out.iter_mut().zip([0.05, 0.5, 0.95]) {
                slot[[r, c]] = quantile(&vals, level);
            }
        }
    }
    let [q05, q50, q95] = out;
    report.bootstrap = Some(BootstrapQuantiles {
        q05,
        q50,
        q95,
        resamples: ok.len(),
        failed: b - ok.len(),
    });
    Ok(report)
}

/// Latent risk factors `∇g(0)·Q` (`K × q`): row `k` is the response
/// exposure per unit of score `k` at the origin.
pub fn latent_factors(m: &DplsModel) -> Result<Array2<f64>, DplsError> {
    let j = m.score_jacobian(Array1::zeros(m.k()).view())?;
    Ok(j.t().dot(&m.pls.y_loadings))
}

/// Second-order Taylor expansion of one prediction about the score origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// `g(0)·Q + ȳ`.
    pub alpha: Array1<f64>,
    pub linear: Array1<f64>,
    /// Linear term split by latent factor, `K × q`.
    pub linear_by_factor: Array2<f64>,
    pub quadratic: Array1<f64>,
    /// Higher-order remainder, defined as the residual.
    pub hot: Array1<f64>,
    pub total: Array1<f64>,
}

/// Expansion of the model at the score origin, shared across rows.
pub struct TaylorCenter {
    pub alpha: Array1<f64>,
    pub factors: Array2<f64>,
    pub hessians: Vec<Array2<f64>>,
}

pub fn taylor_center(m: &DplsModel) -> Result<TaylorCenter, DplsError> {
    let zero = Array1::<f64>::zeros(m.k());
    let g0 = m.score_map(zero.view().insert_axis(Axis(0)))?;
    let alpha = g0.row(0).dot(&m.pls.y_loadings) + &m.pls.y_center;
    Ok(TaylorCenter {
        alpha,
        factors: latent_factors(m)?,
        hessians: m.score_hessians(zero.view())?,
    })
}

/// Per-row attribution of predictions for score rows `v`.
pub fn taylor_attribution(m: &DplsModel, v: ArrayView2<'_, f64>) -> Result<Vec<Attribution>, DplsError> {
    if v.ncols() != m.k() {
        return Err(DplsError::DimensionMismatch {
            expected: m.k(),
            actual: v.ncols(),
        });
    }
    let center = taylor_center(m)?;
    let totals = m.predict_scores(v)?;
    let q = &m.pls.y_loadings;
    Ok(v.outer_iter()
        .zip(totals.outer_iter())
        .map(|(row, total)| {
            let mut by_factor = center.factors.clone();
            for (mut f, &vk) in by_factor.rows_mut().into_iter().zip(row) {
                f *= vk;
            }
            let linear = by_factor.sum_axis(Axis(0));
            let quad_scores: Array1<f64> = center.hessians.iter().map(|h| 0.5 * row.dot(&h.dot(&row))).collect();
            let quadratic = quad_scores.dot(q);
            let hot = &total - &center.alpha - &linear - &quadratic;
            Attribution {
                alpha: center.alpha.clone(),
                linear,
                linear_by_factor: by_factor,
                quadratic,
                hot,
                total: total.to_owned(),
            }
        })
        .collect())
}

/// Weighted sum of row attributions (e.g. portfolio weights).
pub fn aggregate_attribution(rows: &[Attribution], weights: &[f64]) -> Result<Attribution, DplsError> {
    let first = rows.first().ok_or_else(|| DplsError::InvalidInput("no rows".into()))?;
    if weights.len() != rows.len() {
        return Err(DplsError::DimensionMismatch {
            expected: rows.len(),
            actual: weights.len(),
        });
    }
    let mut acc = Attribution {
        alpha: Array1::zeros(first.alpha.len()),
        linear: Array1::zeros(first.linear.len()),
        linear_by_factor: Array2::zeros(first.linear_by_factor.raw_dim()),
        quadratic: Array1::zeros(first.quadratic.len()),
        hot: Array1::zeros(first.hot.len()),
        total: Array1::zeros(first.total.len()),
    };
    for (r, &w) in rows.iter().zip(weights) {
        acc.alpha.scaled_add(w, &r.alpha);
        acc.linear.scaled_add(w, &r.linear);
        acc.linear_by_factor.scaled_add(w, &r.linear_by_factor);
        acc.quadratic.scaled_add(w, &r.quadratic);
        acc.hot.scaled_add(w, &r.hot);
        acc.total.scaled_add(w, &r.total);
    }
    Ok(acc)
}

/// Factor contributions for one response: the largest few by absolute
/// average contribution, and the rest pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSplit {
    pub response: usize,
    /// `(factor index, average contribution)`, largest first.
    pub top: Vec<(usize, f64)>,
    pub remainder: f64,
}

pub fn top_factor_split(rows: &[Attribution], response: usize, top_n: usize) -> FactorSplit {
    let k = rows.first().map_or(0, |r| r.linear_by_factor.nrows());
    let n = rows.len().max(1) as f64;
    let avg: Vec<f64> = (0..k)
        .map(|f| rows.iter().map(|r| r.linear_by_factor[[f, response]]).sum::<f64>() / n)
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| avg[b].abs().total_cmp(&avg[a].abs()).then(a.cmp(&b)));
    let top: Vec<(usize, f64)> = order.iter().take(top_n).map(|&f| (f, avg[f])).collect();
    let remainder = order.iter().skip(top_n).map(|&f| avg[f]).sum();
    FactorSplit { response, top, remainder }
}

/// Expected excess return per asset, `v_i·E[f]`, from score loadings
/// (`N × K`) and the mean factor (`K`).
pub fn expected_return_attribution(
    loadings: ArrayView2<'_, f64>,
    factor_mean: ArrayView1<'_, f64>,
) -> Result<Array1<f64>, DplsError> {
    if loadings.ncols() != factor_mean.len() {
        return Err(DplsError::DimensionMismatch {
            expected: loadings.ncols(),
            actual: factor_mean.len(),
        });
    }
    Ok(loadings.dot(&factor_mean))
}

/// Column means of a factor history (`T × K`).
pub fn factor_mean(history: ArrayView2<'_, f64>) -> Result<Array1<f64>, DplsError> {
    history
        .mean_axis(Axis(0))
        .ok_or_else(|| DplsError::InvalidInput("empty factor history".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceAttribution {
    pub systematic: Array1<f64>,
    pub idiosyncratic: Array1<f64>,
    pub total: Array1<f64>,
    /// Set when the factor covariance had negative eigenvalues that were
    /// clipped to zero.
    pub clipped: bool,
}

/// `σ²_i = v_iᵀ Σ_f v_i + σ̃²_i`. The factor covariance is symmetrized and
/// projected onto the PSD cone first.
pub fn conditional_variance_attribution(
    loadings: ArrayView2<'_, f64>,
    factor_cov: ArrayView2<'_, f64>,
    resid_var: ArrayView1<'_, f64>,
) -> Result<VarianceAttribution, DplsError> {
    let k = loadings.ncols();
    if factor_cov.dim() != (k, k) {
        return Err(DplsError::DimensionMismatch {
            expected: k,
            actual: factor_cov.nrows(),
        });
    }
    if resid_var.len() != loadings.nrows() {
        return Err(DplsError::DimensionMismatch {
            expected: loadings.nrows(),
            actual: resid_var.len(),
        });
    }
    if resid_var.iter().any(|&v| !(v >= 0.0)) {
        return Err(DplsError::InvalidInput("residual variances must be non-negative".into()));
    }
    let eig = linalg::sym_eigen(factor_cov);
    let scale = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let clipped = eig.values.iter().any(|&v| v < -1e-12 * scale.max(f64::MIN_POSITIVE));
    let vals = eig.values.mapv(|v| v.max(0.0));
    let mut root = eig.vectors.clone();
    for (mut col, &v) in root.columns_mut().into_iter().zip(&vals) {
        col *= v.sqrt();
    }
    let proj = loadings.dot(&root);
    let systematic: Array1<f64> = proj.rows().into_iter().map(|r| r.dot(&r)).collect();
    let total = &systematic + &resid_var;
    Ok(VarianceAttribution {
        systematic,
        idiosyncratic: resid_var.to_owned(),
        total,
        clipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPoint {
    pub sample_size: usize,
    /// `|cos|` between estimated and true coefficient columns, per response.
    pub cosine_similarities: Vec<f64>,
    /// `Cov(G(w_j), w_j)/Var(w_j)` per latent index.
    pub kappa_estimates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub link: Link,
    pub k: usize,
    pub points: Vec<ConsistencyPoint>,
}

impl ConsistencyReport {
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.points.windows(2).all(|w| {
            w[1].cosine_similarities
                .iter()
                .zip(&w[0].cosine_similarities)
                .all(|(b, a)| *b >= a - slack)
        })
    }
}

fn abs_cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(&b) / (na * nb)).abs().min(1.0)
}

fn sample_cov(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0)
}

/// Fits linear PLS with `k` components on synthetic samples of each size in
/// `n_grid` (one set of generating matrices) and compares the coefficient
/// columns with the true directions `PᵀBQ`. Predictors are centered but
/// not rescaled: per-column rescaling changes the coefficient direction by
/// the inverse scale matrix and would hide the proportionality being
/// checked.
pub fn verify_composability(cfg: &SynthConfig, k: usize, n_grid: &[usize]) -> Result<ConsistencyReport, DplsError> {
    if cfg.regime != Regime::Gaussian {
        return Err(DplsError::InvalidLink(format!(
            "{:?} regime breaks the Gaussian-score hypothesis",
            cfg.regime
        )));
    }
    if n_grid.is_empty() {
        return Err(DplsError::InvalidInput("empty sample-size grid".into()));
    }
    cfg.validate()?;
    let truth = draw_truth(cfg);
    let directions = truth.coefficient_directions();
    let points = n_grid
        .iter()
        .map(|&n| {
            let sub = SynthConfig { n, ..cfg.clone() };
            let d = sample_from_truth(&sub, &truth, &format!("composability/n/{n}"));
            let m = fit_nipals_with(d.x.view(), d.y.view(), k, Preprocessing::Center)?;
            let (beta, _) = m.raw_coefficients();
            let cosine_similarities = (0..cfg.q)
                .map(|j| abs_cosine(beta.column(j), directions.column(j)))
                .collect();
            let w = d.latent.dot(&truth.b_true);
            let kappa_estimates = w
                .columns()
                .into_iter()
                .map(|wj| {
                    let g = wj.mapv(|x| cfg.link.apply(x));
                    sample_cov(g.view(), wj) / sample_cov(wj, wj)
                })
                .collect();
            Ok(ConsistencyPoint {
                sample_size: n,
                cosine_similarities,
                kappa_estimates,
            })
        })
        .collect::<Result<_, DplsError>>()?;
    Ok(ConsistencyReport {
        link: cfg.link,
        k,
        points,
    })
}

fn response_label(j: usize, q: usize) -> String {
    if q == 1 {
        String::new()
    } else {
        format!("/y{j}")
    }
}

/// Long-format CSV rows `period,entity,component,value`.
pub fn write_attribution_csv<W: Write>(
    writer: W,
    period: Option<i64>,
    entities: &[String],
    rows: &[Attribution],
) -> Result<(), DplsError> {
    if entities.len() != rows.len() {
        return Err(DplsError::DimensionMismatch {
            expected: rows.len(),
            actual: entities.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["period", "entity", "component", "value"])?;
    let per = period.map(|p| p.to_string()).unwrap_or_default();
    for (entity, a) in entities.iter().zip(rows) {
        let q = a.total.len();
        for j in 0..q {
            let tag = response_label(j, q);
            let mut put = |name: String, v: f64| w.write_record([per.as_str(), entity, &format!("{name}{tag}"), &v.to_string()]);
            put("alpha".into(), a.alpha[j])?;
            for f in 0..a.linear_by_factor.nrows() {
                put(format!("factor_{f}"), a.linear_by_factor[[f, j]])?;
            }
            put("linear".into(), a.linear[j])?;
            put("quadratic".into(), a.quadratic[j])?;
            put("hot".into(), a.hot[j])?;
            put("total".into(), a.total[j])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Long-format CSV: entity is the response, component names the matrix
/// and feature(s).
pub fn write_sensitivity_csv<W: Write>(
    writer: W,
    period: Option<i64>,
    feature_names: &[String],
    report: &SensitivityReport,
) -> Result<(), DplsError> {
    let p = report.jacobian_at_zero.ncols();
    if feature_names.len() != p {
        return Err(DplsError::DimensionMismatch {
            expected: p,
            actual: feature_names.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["period", "entity", "component", "value"])?;
    let per = period.map(|p| p.to_string()).unwrap_or_default();
    for j in 0..report.jacobian_at_zero.nrows() {
        let entity = format!("y{j}");
        let mut put = |comp: String, v: f64| w.write_record([per.as_str(), entity.as_str(), comp.as_str(), &v.to_string()]);
        for (c, name) in feature_names.iter().enumerate() {
            put(format!("jacobian_at_zero:{name}"), report.jacobian_at_zero[[j, c]])?;
            put(format!("jacobian_mean:{name}"), report.jacobian_mean[[j, c]])?;
            if let Some(b) = &report.bootstrap {
                put(format!("q05:{name}"), b.q05[[j, c]])?;
                put(format!("q50:{name}"), b.q50[[j, c]])?;
                put(format!("q95:{name}"), b.q95[[j, c]])?;
            }
        }
        let h = &report.hessian_at_zero[j];
        for a in 0..p {
            for b in a..p {
                put(format!("hessian_at_zero:{}:{}", feature_names[a], feature_names[b]), h[[a, b]])?;
            }
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Pairwise interactions ranked by `|H_ab|` (off-diagonal entries only).
pub fn top_interactions(h: ArrayView2<'_, f64>, top_n: usize) -> Vec<(usize, usize, f64)> {
    let p = h.nrows();
    let mut pairs: Vec<(usize, usize, f64)> = (0..p)
        .flat_map(|a| (a + 1..p).map(move |b| (a, b)))
        .map(|(a, b)| (a, b, h[[a, b]]))
        .collect();
    pairs.sort_by(|x, y| y.2.abs().total_cmp(&x.2.abs()));
    pairs.truncate(top_n);
    pairs
}

/// The x-scores of the first `rows` training rows; handy for attribution
/// of in-sample predictions.
pub fn training_scores(m: &DplsModel, rows: usize) -> Array2<f64> {
    let n = m.pls.x_scores.nrows().min(rows);
    m.pls.x_scores.slice(s![..n, ..]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deepnet::Layer;
    use ndarray::array;

    fn toy_pls() -> PlsModel {
        let x = array![[1.0, 2.0], [2.0, 1.0], [3.0, 5.0], [4.0, 3.0], [5.0, 6.0]];
        let y = array![[1.0], [0.5], [2.5], [2.0], [3.5]];
        fit_nipals(x.view(), y.view(), 1).unwrap()
    }

    #[test]
    fn net_must_match_component_count() {
        let pls = toy_pls();
        let arch = Architecture {
            input_dim: 2,
            hidden: vec![3],
            output_dim: 2,
            activation: Activation::Tanh,
        };
        let err = DplsModel::new(pls, Network::glorot(&arch, 0), 1.0).unwrap_err();
        assert!(matches!(err, DplsError::DimensionMismatch { expected: 1, actual: 2 }));
    }

    #[test]
    fn zero_weight_net_predicts_constant() {
        let pls = toy_pls();
        let net = Network::new(vec![Layer {
            weight: array![[0.0]],
            bias: array![0.4],
            activation: Activation::Linear,
        }])
        .unwrap();
        let m = DplsModel::new(pls, net, 2.0).unwrap();
        let pred = m.predict(array![[9.0, -1.0], [0.0, 0.0]].view()).unwrap();
        let expect = 0.4 * m.pls.y_loadings[[0, 0]] + m.pls.y_center[0];
        assert!(pred.iter().all(|v| (v - expect).abs() < 1e-14));
        assert!(latent_factors(&m).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_row_attribution_is_alpha() {
        let pls = toy_pls();
        let arch = Architecture {
            input_dim: 1,
            hidden: vec![4],
            output_dim: 1,
            activation: Activation::Softplus,
        };
        let m = DplsModel::new(pls, Network::glorot(&arch, 5), 2.0).unwrap();
        let a = &taylor_attribution(&m, array![[0.0]].view()).unwrap()[0];
        assert_eq!(a.linear[0], 0.0);
        assert_eq!(a.quadratic[0], 0.0);
        assert!(a.hot[0].abs() < 1e-15);
        assert_eq!(a.total, a.alpha);
    }

    #[test]
    fn variance_attribution_simple_cases() {
        let v = array![[1.0, 0.0], [0.3, -2.0]];
        let resid = array![0.1, 0.2];
        let zero = conditional_variance_attribution(v.view(), Array2::zeros((2, 2)).view(), resid.view()).unwrap();
        assert_eq!(zero.total, resid);
        let unit =
            conditional_variance_attribution(array![[1.0, 0.0]].view(), Array2::eye(2).view(), array![0.0].view()).unwrap();
        assert!((unit.total[0] - 1.0).abs() < 1e-14);
        let neg = conditional_variance_attribution(v.view(), array![[1.0, 0.0], [0.0, -0.5]].view(), resid.view()).unwrap();
        assert!(neg.clipped);
        assert!(neg.total.iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn expected_returns_simple_cases() {
        let v = Array2::<f64>::ones((4, 1));
        let r = expected_return_attribution(v.view(), array![0.02].view()).unwrap();
        assert!(r.iter().all(|&x| x == 0.02));
        let z = expected_return_attribution(v.view(), array![0.0].view()).unwrap();
        assert!(z.iter().all(|&x| x == 0.0));
        assert!(expected_return_attribution(v.view(), array![0.0, 1.0].view()).is_err());
    }

    #[test]
    fn skewed_regime_is_refused() {
        let mut cfg = SynthConfig::new(100, 5, 1, 2, Link::Tanh, 0);
        cfg.regime = Regime::Skewed;
        assert!(matches!(verify_composability(&cfg, 2, &[100]), Err(DplsError::InvalidLink(_))));
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!((quantile(&v, 0.05) - 1.2).abs() < 1e-12);
        assert_eq!(quantile(&v, 1.0), 5.0);
    }
}
