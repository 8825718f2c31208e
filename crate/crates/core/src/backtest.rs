//! Period-by-period cross-sectional backtest.
//!
//! Cross-section `t` of a panel pairs the characteristics known before
//! period `t` with the returns realized in `t`. A model is fitted on
//! cross-section `t` alone and then applied to the features of
//! cross-section `t + 1` to predict its returns, so nothing from `t + 1`
//! reaches the fit for `t`.
//!
//! Hyper-parameters (component count, LASSO penalty) are re-tuned by cross
//! validation on a stride schedule; periods in between reuse the most
//! recent tuned value.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{fit_lasso, fit_lasso_cv, fit_ols, fit_pca_factors, BaselineError, CvRule, LassoModel, OlsModel};
use crate::data::{CrossSection, DataError, PanelDataset};
use crate::deepnet::TrainConfig;
use crate::dpls::{fit_dpls_on, DplsError, DplsModel, NetSpec};
use crate::pls::{fit_nipals, max_components, select_k_cv, PlsError, PlsModel};
use crate::seed::{derive_seed, rng_for};
use crate::SCHEMA_VERSION;

/// Pooled total R² entries need at least this many paired observations.
pub const MIN_TOTAL_R2_OBS: usize = 100;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("need at least {required} periods, got {actual}")]
    TooFewPeriods { required: usize, actual: usize },
    #[error("period {period} has {available} assets, portfolio needs {required}")]
    InsufficientAssets { period: i64, required: usize, available: usize },
    #[error("need at least {required} observations, got {actual}")]
    TooFewObservations { required: usize, actual: usize },
    #[error("excess returns have zero volatility")]
    ZeroVolatility,
    #[error("sum of squared returns is zero")]
    DegenerateTarget,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("panel is not balanced: {0}")]
    UnbalancedPanel(String),
    #[error("invalid backtest config: {0}")]
    InvalidConfig(String),
    #[error("method {0:?} cannot be used here")]
    UnsupportedMethod(Method),
    #[error(transparent)]
    Pls(#[from] PlsError),
    #[error(transparent)]
    Dpls(#[from] DplsError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    Lasso,
    Pls,
    Dpls,
    #[serde(alias = "pca")]
    PcaInsampleOnly,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ols" => Ok(Method::Ols),
            "lasso" => Ok(Method::Lasso),
            "pls" => Ok(Method::Pls),
            "dpls" => Ok(Method::Dpls),
            "pca" | "pca_insample_only" => Ok(Method::PcaInsampleOnly),
            other => Err(format!("unknown method '{other}' (ols, lasso, pls, dpls, pca_insample_only)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum KRule {
    Fixed { k: usize },
    Cv { k_max: usize, folds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub method: Method,
    pub k_rule: KRule,
    pub net: NetSpec,
    pub train: TrainConfig,
    /// Periods between re-tuning runs.
    pub cv_stride: usize,
    /// Tune once, on the first period, and reuse the result.
    pub cv_first_only: bool,
    pub lasso_folds: usize,
    pub lasso_rule: CvRule,
    pub portfolio_sizes: Vec<usize>,
    pub seed: u64,
    /// Multiply information ratios by √12.
    pub annualize: bool,
    /// Largest K of the component sweep; `None` skips the sweep.
    pub k_sweep_max: Option<usize>,
    /// Dummy features reported as group tilts.
    pub group_features: Vec<String>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            method: Method::Pls,
            k_rule: KRule::Cv { k_max: 10, folds: 5 },
            net: NetSpec::default(),
            train: TrainConfig::default(),
            cv_stride: 10,
            cv_first_only: false,
            lasso_folds: 5,
            lasso_rule: CvRule::Min,
            portfolio_sizes: vec![10, 50],
            seed: 0,
            annualize: false,
            k_sweep_max: None,
            group_features: Vec::new(),
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: String| Err(BacktestError::InvalidConfig(m));
        if self.cv_stride == 0 {
            return bad("cv_stride must be at least 1".into());
        }
        if self.portfolio_sizes.iter().any(|&n| n == 0) {
            return bad("portfolio sizes must be at least 1".into());
        }
        match self.k_rule {
            KRule::Fixed { k } if k == 0 => return bad("k must be at least 1".into()),
            KRule::Cv { k_max, folds } if k_max == 0 || folds < 2 => {
                return bad("cv rule needs k_max >= 1 and folds >= 2".into())
            }
            _ => {}
        }
        if self.lasso_folds < 2 {
            return bad("lasso_folds must be at least 2".into());
        }
        if self.k_sweep_max == Some(0) {
            return bad("k_sweep_max must be at least 1".into());
        }
        self.train.validate().map_err(|e| BacktestError::InvalidConfig(e.to_string()))
    }

    /// Whether hyper-parameters are re-tuned at period index `i`.
    pub fn is_retune_period(&self, i: usize) -> bool {
        if self.cv_first_only {
            i == 0
        } else {
            i % self.cv_stride == 0
        }
    }
}

/// Largest admissible absolute difference between a prediction and the
/// realized value.
pub fn linf_error(pred: ArrayView1<'_, f64>, actual: ArrayView1<'_, f64>) -> Result<f64, BacktestError> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(BacktestError::DimensionMismatch {
            expected: actual.len(),
            actual: pred.len(),
        });
    }
    Ok(pred.iter().zip(actual).fold(0.0_f64, |m, (p, a)| m.max((p - a).abs())))
}

/// Pooled sums for the uncentered total R².
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct R2Sums {
    pub sse: f64,
    pub sst: f64,
    pub n: usize,
}

impl R2Sums {
    pub fn add(&mut self, pred: ArrayView1<'_, f64>, actual: ArrayView1<'_, f64>) {
        for (p, a) in pred.iter().zip(actual) {
            self.sse += (a - p) * (a - p);
            self.sst += a * a;
        }
        self.n += pred.len();
    }

    pub fn r2(&self, min_obs: usize) -> Result<f64, BacktestError> {
        if self.n < min_obs {
            return Err(BacktestError::TooFewObservations {
                required: min_obs,
                actual: self.n,
            });
        }
        if self.sst == 0.0 {
            return Err(BacktestError::DegenerateTarget);
        }
        Ok(1.0 - self.sse / self.sst)
    }
}

/// `1 − Σ(r − r̂)²/Σr²` with the uncentered denominator.
pub fn total_r2(pred: ArrayView1<'_, f64>, actual: ArrayView1<'_, f64>, min_obs: usize) -> Result<f64, BacktestError> {
    if pred.len() != actual.len() {
        return Err(BacktestError::DimensionMismatch {
            expected: actual.len(),
            actual: pred.len(),
        });
    }
    let mut s = R2Sums::default();
    s.add(pred, actual);
    s.r2(min_obs)
}

fn mse(pred: ArrayView1<'_, f64>, actual: ArrayView1<'_, f64>) -> f64 {
    pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / pred.len().max(1) as f64
}

/// A model fitted on one cross-section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "model")]
pub enum FittedModel {
    Ols(OlsModel),
    Lasso(LassoModel),
    Pls(PlsModel),
    Dpls(DplsModel),
}

impl FittedModel {
    pub fn k(&self) -> Option<usize> {
        match self {
            FittedModel::Pls(m) => Some(m.k),
            FittedModel::Dpls(m) => Some(m.k()),
            _ => None,
        }
    }

    pub fn predict(&self, x: ndarray::ArrayView2<'_, f64>) -> Result<Array1<f64>, BacktestError> {
        Ok(match self {
            FittedModel::Ols(m) => m.predict(x)?.column(0).to_owned(),
            FittedModel::Lasso(m) => m.predict(x)?,
            FittedModel::Pls(m) => m.predict(x)?.column(0).to_owned(),
            FittedModel::Dpls(m) => m.predict(x)?.column(0).to_owned(),
        })
    }

    /// Prediction from the first `k` components; equals [`Self::predict`]
    /// when `k` is at least the fitted count. Models without components
    /// ignore `k`.
    pub fn predict_truncated(&self, x: ndarray::ArrayView2<'_, f64>, k: usize) -> Result<Array1<f64>, BacktestError> {
        match self {
            FittedModel::Pls(m) if k < m.k => Ok(m.truncated(k).predict(x)?.column(0).to_owned()),
            FittedModel::Dpls(m) if k < m.k() => {
                let v = m.pls.scores(x)?;
                Ok(m.predict_scores_truncated(v.view(), k)?.column(0).to_owned())
            }
            _ => self.predict(x),
        }
    }
}

/// Tuned hyper-parameter carried between re-tuning periods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tuning {
    None,
    K(usize),
    Lambda(f64),
}

fn period_seed(cfg: &BacktestConfig, period: i64, task: &str) -> u64 {
    derive_seed(cfg.seed, &format!("backtest/period/{period}/{task}"))
}

/// Cross-validated hyper-parameter for one cross-section.
pub fn tune_period(section: &CrossSection, cfg: &BacktestConfig) -> Result<Tuning, BacktestError> {
    let x = section.features.view();
    let y = section.target();
    match cfg.method {
        Method::Ols | Method::PcaInsampleOnly => Ok(Tuning::None),
        Method::Lasso => {
            let m = fit_lasso_cv(
                x,
                y.column(0),
                None,
                cfg.lasso_folds,
                period_seed(cfg, section.period, "cv"),
                cfg.lasso_rule,
            )?;
            Ok(Tuning::Lambda(m.lambda))
        }
        Method::Pls | Method::Dpls => match cfg.k_rule {
            KRule::Fixed { k } => Ok(Tuning::K(k)),
            KRule::Cv { k_max, folds } => {
                let n = section.len();
                let smallest_train = n - n.div_ceil(folds);
                let top = k_max.min(max_components(smallest_train, x.ncols())).max(1);
                let grid: Vec<usize> = (1..=top).collect();
                let cv = select_k_cv(x, y.view(), &grid, folds, period_seed(cfg, section.period, "cv"))?;
                Ok(Tuning::K(cv.k_star))
            }
        },
    }
}

/// Fits the configured method on one cross-section. Only `section` is
/// read, which is what keeps later periods out of the fit.
pub fn fit_period(section: &CrossSection, cfg: &BacktestConfig, tuning: Tuning) -> Result<FittedModel, BacktestError> {
    let x = section.features.view();
    let y = section.target();
    let clamp_k = |k: usize| k.min(max_components(section.len(), x.ncols())).max(1);
    match (cfg.method, tuning) {
        (Method::Ols, _) => Ok(FittedModel::Ols(fit_ols(x, y.view())?)),
        (Method::Lasso, Tuning::Lambda(l)) => Ok(FittedModel::Lasso(fit_lasso(x, y.column(0), l)?)),
        (Method::Lasso, _) => {
            let m = fit_lasso_cv(x, y.column(0), None, cfg.lasso_folds, period_seed(cfg, section.period, "cv"), cfg.lasso_rule)?;
            Ok(FittedModel::Lasso(m))
        }
        (Method::Pls, Tuning::K(k)) => Ok(FittedModel::Pls(fit_nipals(x, y.view(), clamp_k(k))?)),
        (Method::Dpls, Tuning::K(k)) => {
            let pls = fit_nipals(x, y.view(), clamp_k(k))?;
            let train = TrainConfig {
                seed: period_seed(cfg, section.period, "dpls"),
                ..cfg.train.clone()
            };
            let mut m = fit_dpls_on(pls, &cfg.net, &train)?;
            m.trained_on.period = Some(section.period);
            Ok(FittedModel::Dpls(m))
        }
        (Method::Pls | Method::Dpls, _) => {
            let t = tune_period(section, cfg)?;
            fit_period(section, cfg, t)
        }
        (Method::PcaInsampleOnly, _) => Err(BacktestError::UnsupportedMethod(Method::PcaInsampleOnly)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfSample {
    pub period: i64,
    pub n: usize,
    pub linf: f64,
    pub r2: Option<f64>,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodMetrics {
    pub period: i64,
    pub n_train: usize,
    pub k_used: Option<usize>,
    pub lambda: Option<f64>,
    pub linf_in: Option<f64>,
    pub r2_in: Option<f64>,
    pub mse_in: Option<f64>,
    pub out: Option<OutOfSample>,
    /// Fit failure for this period; the period is skipped.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub r2_total_in: Option<f64>,
    pub r2_total_out: Option<f64>,
    pub n_in: usize,
    pub n_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub r2_total_in: Option<f64>,
    /// Absent for in-sample-only methods and when fewer than 100 pooled
    /// observations are available.
    pub r2_total_out: Option<f64>,
    pub n_in: usize,
    pub n_out: usize,
}

/// Predictions for one period's assets together with what was realized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodPrediction {
    pub period: i64,
    /// Index of the cross-section in the panel.
    pub index: usize,
    pub asset_ids: Vec<String>,
    pub predicted: Array1<f64>,
    pub realized: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSeries {
    pub size: usize,
    pub periods: Vec<i64>,
    pub returns: Vec<f64>,
    /// Equal-weight return of the whole cross-section.
    pub benchmark: Vec<f64>,
    pub random_returns: Vec<f64>,
    /// Rows (within each cross-section) held by the model portfolio.
    pub selections: Vec<Vec<usize>>,
}

impl PortfolioSeries {
    pub fn excess(&self) -> Vec<f64> {
        self.returns.iter().zip(&self.benchmark).map(|(r, b)| r - b).collect()
    }
}

/// Rows of the `n` largest predictions; ties go to the smaller asset id.
pub fn select_top(predicted: ArrayView1<'_, f64>, asset_ids: &[String], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..predicted.len()).collect();
    order.sort_by(|&a, &b| {
        predicted[b]
            .total_cmp(&predicted[a])
            .then_with(|| asset_ids[a].cmp(&asset_ids[b]))
    });
    order.truncate(n);
    order
}

fn mean_of(values: ArrayView1<'_, f64>, rows: &[usize]) -> f64 {
    rows.iter().map(|&i| values[i]).sum::<f64>() / rows.len() as f64
}

/// Equal-weight long-only portfolio of the `n` assets with the highest
/// predicted return each period, plus a control portfolio of `n` assets
/// drawn uniformly from the stream `(seed, "portfolio/random/<period>/<n>")`.
pub fn build_portfolio(preds: &[PeriodPrediction], n: usize, seed: u64) -> Result<PortfolioSeries, BacktestError> {
    let mut out = PortfolioSeries {
        size: n,
        periods: Vec::with_capacity(preds.len()),
        returns: Vec::with_capacity(preds.len()),
        benchmark: Vec::with_capacity(preds.len()),
        random_returns: Vec::with_capacity(preds.len()),
        selections: Vec::with_capacity(preds.len()),
    };
    for p in preds {
        let available = p.realized.len();
        if available < n || p.predicted.len() != available {
            return Err(BacktestError::InsufficientAssets {
                period: p.period,
                required: n,
                available,
            });
        }
        let chosen = select_top(p.predicted.view(), &p.asset_ids, n);
        let mut rng = rng_for(seed, &format!("portfolio/random/{}/{n}", p.period));
        let random = sample(&mut rng, available, n).into_vec();
        out.periods.push(p.period);
        out.returns.push(mean_of(p.realized.view(), &chosen));
        out.benchmark.push(p.realized.mean().expect("non-empty"));
        out.random_returns.push(mean_of(p.realized.view(), &random));
        out.selections.push(chosen);
    }
    Ok(out)
}

/// `mean(excess)/sd(excess)` with the `n − 1` standard deviation, times
/// √12 when `annualize` is set.
pub fn information_ratio(portfolio: &[f64], benchmark: &[f64], annualize: bool) -> Result<f64, BacktestError> {
    if portfolio.len() != benchmark.len() {
        return Err(BacktestError::DimensionMismatch {
            expected: benchmark.len(),
            actual: portfolio.len(),
        });
    }
    let n = portfolio.len();
    if n < 2 {
        return Err(BacktestError::TooFewPeriods { required: 2, actual: n });
    }
    let excess: Vec<f64> = portfolio.iter().zip(benchmark).map(|(p, b)| p - b).collect();
    let mean = excess.iter().sum::<f64>() / n as f64;
    let var = excess.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let scale = excess.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
    if !(sd > 1e-14 * scale) {
        return Err(BacktestError::ZeroVolatility);
    }
    let ir = mean / sd;
    Ok(if annualize { ir * 12f64.sqrt() } else { ir })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tilt {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltSummary {
    pub size: usize,
    /// Time average of the portfolio-mean exposure, each feature
    /// standardized within its cross-section.
    pub features: Vec<Tilt>,
    /// Time-averaged membership share of each dummy group, rescaled to sum
    /// to one.
    pub groups: Vec<Tilt>,
}

/// Feature and group tilts of the portfolios in `series`. `group_features`
/// names dummy columns of the panel.
pub fn tilt_summary(
    series: &PortfolioSeries,
    preds: &[PeriodPrediction],
    panel: &PanelDataset,
    group_features: &[String],
) -> Result<TiltSummary, BacktestError> {
    let p = panel.n_features();
    let group_idx: Vec<usize> = group_features
        .iter()
        .map(|g| {
            panel
                .feature_names
                .iter()
                .position(|f| f == g)
                .ok_or_else(|| BacktestError::InvalidConfig(format!("unknown group feature '{g}'")))
        })
        .collect::<Result<_, _>>()?;
    let mut feat = vec![0.0; p];
    let mut groups = vec![0.0; group_idx.len()];
    let t = series.selections.len();
    for (sel, pred) in series.selections.iter().zip(preds) {
        let x = &panel.cross_sections[pred.index].features;
        let n = x.nrows() as f64;
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            let mean = col.sum() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if sd > 0.0 {
                feat[j] += (mean_of(col, sel) - mean) / sd;
            }
        }
        for (g, &j) in group_idx.iter().enumerate() {
            groups[g] += mean_of(x.column(j), sel);
        }
    }
    let tn = t.max(1) as f64;
    let group_total: f64 = groups.iter().sum();
    Ok(TiltSummary {
        size: series.size,
        features: panel
            .feature_names
            .iter()
            .zip(&feat)
            .map(|(name, v)| Tilt {
                name: name.clone(),
                value: v / tn,
            })
            .collect(),
        groups: group_features
            .iter()
            .zip(&groups)
            .map(|(name, v)| Tilt {
                name: name.clone(),
                value: if group_total > 0.0 { v / group_total } else { 0.0 },
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSummary {
    pub series: PortfolioSeries,
    pub information_ratio: Option<f64>,
    pub random_information_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub schema_version: String,
    pub config: BacktestConfig,
    pub periods: Vec<PeriodMetrics>,
    pub totals: Totals,
    pub portfolios: Vec<PortfolioSummary>,
    pub tilts: Vec<TiltSummary>,
    pub k_sweep: Option<Vec<KSweepRow>>,
}

fn check_panel(panel: &PanelDataset) -> Result<(), BacktestError> {
    panel.validate()?;
    if panel.n_periods() < 2 {
        return Err(BacktestError::TooFewPeriods {
            required: 2,
            actual: panel.n_periods(),
        });
    }
    Ok(())
}

/// Tuning in force at every period index under the stride schedule.
fn tuning_schedule(panel: &PanelDataset, cfg: &BacktestConfig) -> Vec<Result<Tuning, String>> {
    let t = panel.n_periods();
    let tuned: HashMap<usize, Result<Tuning, String>> = (0..t)
        .filter(|&i| cfg.is_retune_period(i))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|i| (i, tune_period(&panel.cross_sections[i], cfg).map_err(|e| e.to_string())))
        .collect();
    let mut current = Err("no tuning period".to_string());
    (0..t)
        .map(|i| {
            if let Some(r) = tuned.get(&i) {
                current = r.clone();
            }
            current.clone()
        })
        .collect()
}

struct PeriodFit {
    metrics: PeriodMetrics,
    model: Option<FittedModel>,
    out_pred: Option<Array1<f64>>,
}

fn run_period(panel: &PanelDataset, i: usize, cfg: &BacktestConfig, tuning: &Result<Tuning, String>) -> PeriodFit {
    let section = &panel.cross_sections[i];
    let mut metrics = PeriodMetrics {
        period: section.period,
        n_train: section.len(),
        k_used: None,
        lambda: None,
        linf_in: None,
        r2_in: None,
        mse_in: None,
        out: None,
        error: None,
    };
    let fitted = tuning
        .clone()
        .and_then(|t| fit_period(section, cfg, t).map_err(|e| e.to_string()));
    let model = match fitted {
        Ok(m) => m,
        Err(e) => {
            metrics.error = Some(e);
            return PeriodFit {
                metrics,
                model: None,
                out_pred: None,
            };
        }
    };
    metrics.k_used = model.k();
    if let FittedModel::Lasso(l) = &model {
        metrics.lambda = Some(l.lambda);
    }
    let mut out_pred = None;
    let result = (|| -> Result<(), BacktestError> {
        let pred = model.predict(section.features.view())?;
        metrics.linf_in = Some(linf_error(pred.view(), section.returns.view())?);
        metrics.r2_in = total_r2(pred.view(), section.returns.view(), 0).ok();
        metrics.mse_in = Some(mse(pred.view(), section.returns.view()));
        if let Some(next) = panel.cross_sections.get(i + 1) {
            let p = model.predict(next.features.view())?;
            metrics.out = Some(OutOfSample {
                period: next.period,
                n: next.len(),
                linf: linf_error(p.view(), next.returns.view())?,
                r2: total_r2(p.view(), next.returns.view(), 0).ok(),
                mse: mse(p.view(), next.returns.view()),
            });
            out_pred = Some(p);
        }
        Ok(())
    })();
    if let Err(e) = result {
        metrics.error = Some(e.to_string());
    }
    PeriodFit {
        metrics,
        model: Some(model),
        out_pred,
    }
}

fn finish_r2(s: &R2Sums, min_obs: usize) -> Option<f64> {
    s.r2(min_obs).ok()
}

/// Sweep of pooled total R² over the first `k` components, using each
/// period's fitted model truncated to `k ≤ K*_t`.
fn sweep_from_models(
    panel: &PanelDataset,
    models: &[Option<FittedModel>],
    k_max: usize,
) -> Result<Vec<KSweepRow>, BacktestError> {
    let rows: Vec<(R2Sums, R2Sums)> = (1..=k_max)
        .into_par_iter()
        .map(|k| -> Result<(R2Sums, R2Sums), BacktestError> {
            let mut sin = R2Sums::default();
            let mut sout = R2Sums::default();
            for (i, m) in models.iter().enumerate() {
                let Some(m) = m else { continue };
                if m.k().is_some_and(|kk| k > kk) {
                    continue;
                }
                let cs = &panel.cross_sections[i];
                sin.add(m.predict_truncated(cs.features.view(), k)?.view(), cs.returns.view());
                if let Some(next) = panel.cross_sections.get(i + 1) {
                    sout.add(m.predict_truncated(next.features.view(), k)?.view(), next.returns.view());
                }
            }
            Ok((sin, sout))
        })
        .collect::<Result<_, _>>()?;
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (sin, sout))| KSweepRow {
            k: i + 1,
            r2_total_in: finish_r2(&sin, MIN_TOTAL_R2_OBS),
            r2_total_out: finish_r2(&sout, MIN_TOTAL_R2_OBS),
            n_in: sin.n,
            n_out: sout.n,
        })
        .collect())
}

/// Returns as a `T × N` matrix; every period must list the same assets in
/// the same order.
pub fn balanced_returns(panel: &PanelDataset) -> Result<Array2<f64>, BacktestError> {
    let first = &panel.cross_sections[0];
    let n = first.len();
    let mut out = Array2::zeros((panel.n_periods(), n));
    for (t, cs) in panel.cross_sections.iter().enumerate() {
        if cs.asset_ids != first.asset_ids {
            return Err(BacktestError::UnbalancedPanel(format!(
                "period {} lists different assets than period {}",
                cs.period, first.period
            )));
        }
        out.row_mut(t).assign(&cs.returns);
    }
    Ok(out)
}

fn run_pca(panel: &PanelDataset, cfg: &BacktestConfig) -> Result<BacktestReport, BacktestError> {
    let returns = balanced_returns(panel)?;
    let (t, n) = returns.dim();
    let cap = t.min(n);
    let k = match cfg.k_rule {
        KRule::Fixed { k } => k,
        KRule::Cv { k_max, .. } => k_max,
    }
    .min(cap);
    let sweep_max = cfg.k_sweep_max.unwrap_or(0).min(cap);
    let model = fit_pca_factors(returns.view(), k.max(sweep_max))?;
    let fitted = model.reconstruct(k);
    let mut total = R2Sums::default();
    let periods = panel
        .cross_sections
        .iter()
        .enumerate()
        .map(|(i, cs)| {
            let pred = fitted.row(i);
            total.add(pred, cs.returns.view());
            PeriodMetrics {
                period: cs.period,
                n_train: cs.len(),
                k_used: Some(k),
                lambda: None,
                linf_in: linf_error(pred, cs.returns.view()).ok(),
                r2_in: total_r2(pred, cs.returns.view(), 0).ok(),
                mse_in: Some(mse(pred, cs.returns.view())),
                out: None,
                error: None,
            }
        })
        .collect();
    let k_sweep = cfg.k_sweep_max.map(|_| {
        (1..=sweep_max)
            .map(|kk| {
                let rec = model.reconstruct(kk);
                let mut s = R2Sums::default();
                for (i, cs) in panel.cross_sections.iter().enumerate() {
                    s.add(rec.row(i), cs.returns.view());
                }
                KSweepRow {
                    k: kk,
                    r2_total_in: finish_r2(&s, MIN_TOTAL_R2_OBS),
                    r2_total_out: None,
                    n_in: s.n,
                    n_out: 0,
                }
            })
            .collect()
    });
    Ok(BacktestReport {
        schema_version: SCHEMA_VERSION.to_string(),
        config: cfg.clone(),
        periods,
        totals: Totals {
            r2_total_in: finish_r2(&total, 0),
            r2_total_out: None,
            n_in: total.n,
            n_out: 0,
        },
        portfolios: Vec::new(),
        tilts: Vec::new(),
        k_sweep,
    })
}

/// Runs the full period-by-period experiment.
pub fn run_backtest(panel: &PanelDataset, cfg: &BacktestConfig) -> Result<BacktestReport, BacktestError> {
    cfg.validate()?;
    check_panel(panel)?;
    if cfg.method == Method::PcaInsampleOnly {
        return run_pca(panel, cfg);
    }
    if cfg.k_sweep_max.is_some() && !matches!(cfg.method, Method::Pls | Method::Dpls) {
        return Err(BacktestError::UnsupportedMethod(cfg.method));
    }
    let schedule = tuning_schedule(panel, cfg);
    let fits: Vec<PeriodFit> = (0..panel.n_periods())
        .into_par_iter()
        .map(|i| run_period(panel, i, cfg, &schedule[i]))
        .collect();

    let mut sin = R2Sums::default();
    let mut sout = R2Sums::default();
    let mut preds = Vec::new();
    for (i, f) in fits.iter().enumerate() {
        let Some(m) = &f.model else { continue };
        if f.metrics.error.is_some() {
            continue;
        }
        let cs = &panel.cross_sections[i];
        sin.add(m.predict(cs.features.view())?.view(), cs.returns.view());
        if let (Some(p), Some(next)) = (&f.out_pred, panel.cross_sections.get(i + 1)) {
            sout.add(p.view(), next.returns.view());
            preds.push(PeriodPrediction {
                period: next.period,
                index: i + 1,
                asset_ids: next.asset_ids.clone(),
                predicted: p.clone(),
                realized: next.returns.clone(),
            });
        }
    }

    let mut portfolios = Vec::new();
    let mut tilts = Vec::new();
    if !preds.is_empty() {
        for &n in &cfg.portfolio_sizes {
            let series = build_portfolio(&preds, n, derive_seed(cfg.seed, "portfolio"))?;
            tilts.push(tilt_summary(&series, &preds, panel, &cfg.group_features)?);
            portfolios.push(PortfolioSummary {
                information_ratio: information_ratio(&series.returns, &series.benchmark, cfg.annualize).ok(),
                random_information_ratio: information_ratio(&series.random_returns, &series.benchmark, cfg.annualize)
                    .ok(),
                series,
            });
        }
    }

    let k_sweep = match cfg.k_sweep_max {
        Some(k_max) => {
            let models: Vec<Option<FittedModel>> = fits
                .iter()
                .map(|f| if f.metrics.error.is_none() { f.model.clone() } else { None })
                .collect();
            Some(sweep_from_models(panel, &models, k_max)?)
        }
        None => None,
    };

    Ok(BacktestReport {
        schema_version: SCHEMA_VERSION.to_string(),
        config: cfg.clone(),
        periods: fits.into_iter().map(|f| f.metrics).collect(),
        totals: Totals {
            r2_total_in: finish_r2(&sin, 0),
            r2_total_out: finish_r2(&sout, 0),
            n_in: sin.n,
            n_out: sout.n,
        },
        portfolios,
        tilts,
        k_sweep,
    })
}

/// Pooled total R² by component count, with `K*_t` chosen by cross
/// validation in each period.
pub fn k_sweep(panel: &PanelDataset, cfg: &BacktestConfig, k_max: usize) -> Result<Vec<KSweepRow>, BacktestError> {
    let folds = match cfg.k_rule {
        KRule::Cv { folds, .. } => folds,
        KRule::Fixed { .. } => 5,
    };
    let sweep_cfg = BacktestConfig {
        k_rule: KRule::Cv { k_max, folds },
        k_sweep_max: Some(k_max),
        portfolio_sizes: Vec::new(),
        ..cfg.clone()
    };
    match cfg.method {
        Method::Pls | Method::Dpls | Method::PcaInsampleOnly => Ok(run_backtest(panel, &sweep_cfg)?
            .k_sweep
            .expect("sweep requested")),
        other => Err(BacktestError::UnsupportedMethod(other)),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes `report.json`, `metrics.csv`, `portfolio.csv`, `tilts.csv` and
/// `ksweep.csv` into `dir`.
pub fn write_report(report: &BacktestReport, dir: &Path) -> Result<(), BacktestError> {
    std::fs::create_dir_all(dir)?;
    let mut json = BufWriter::new(File::create(dir.join("report.json"))?);
    serde_json::to_writer_pretty(&mut json, report)?;
    json.write_all(b"\n")?;
    json.flush()?;

    let mut w = csv::Writer::from_path(dir.join("metrics.csv"))?;
    w.write_record(["period", "metric", "value"])?;
    for m in &report.periods {
        let per = m.period.to_string();
        let mut put = |name: &str, v: Option<f64>| w.write_record([per.as_str(), name, &fmt_opt(v)]);
        put("k_used", m.k_used.map(|k| k as f64))?;
        put("lambda", m.lambda)?;
        put("linf_in", m.linf_in)?;
        put("r2_in", m.r2_in)?;
        put("mse_in", m.mse_in)?;
        if let Some(o) = &m.out {
            put("linf_out", Some(o.linf))?;
            put("r2_out", o.r2)?;
            put("mse_out", Some(o.mse))?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("portfolio.csv"))?;
    w.write_record(["period", "size", "portfolio_return", "benchmark_return", "excess_return", "random_return"])?;
    for p in &report.portfolios {
        let s = &p.series;
        for i in 0..s.periods.len() {
            w.write_record([
                s.periods[i].to_string(),
                s.size.to_string(),
                s.returns[i].to_string(),
                s.benchmark[i].to_string(),
                (s.returns[i] - s.benchmark[i]).to_string(),
                s.random_returns[i].to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("tilts.csv"))?;
    w.write_record(["size", "kind", "name", "tilt"])?;
    for t in &report.tilts {
        for (kind, list) in [("feature", &t.features), ("group", &t.groups)] {
            for tilt in list {
                w.write_record([t.size.to_string(), kind.to_string(), tilt.name.clone(), tilt.value.to_string()])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("ksweep.csv"))?;
    w.write_record(["k", "r2_total_in", "r2_total_out", "n_in", "n_out"])?;
    for r in report.k_sweep.iter().flatten() {
        w.write_record([
            r.k.to_string(),
            fmt_opt(r.r2_total_in),
            fmt_opt(r.r2_total_out),
            r.n_in.to_string(),
            r.n_out.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linf_simple() {
        assert!((linf_error(array![0.1, 0.2].view(), array![0.1, 0.5].view()).unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(linf_error(array![1.0, 2.0].view(), array![1.0, 2.0].view()).unwrap(), 0.0);
        assert!(linf_error(array![1.0].view(), array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn total_r2_identities() {
        let r = array![0.02, -0.01, 0.05, 0.0, -0.03];
        assert_eq!(total_r2(r.view(), r.view(), 0).unwrap(), 1.0);
        assert_eq!(total_r2(Array1::zeros(5).view(), r.view(), 0).unwrap(), 0.0);
        assert!((total_r2((&r * 0.5).view(), r.view(), 0).unwrap() - 0.75).abs() < 1e-12);
        assert!(matches!(
            total_r2(r.view(), r.view(), 100),
            Err(BacktestError::TooFewObservations { required: 100, actual: 5 })
        ));
    }

    #[test]
    fn information_ratio_two_points() {
        let ir = information_ratio(&[0.01, 0.03], &[0.0, 0.0], false).unwrap();
        assert!((ir - 1.414213562373095).abs() < 1e-6);
        let flipped = information_ratio(&[-0.01, -0.03], &[0.0, 0.0], false).unwrap();
        assert_eq!(flipped, -ir);
        assert!((information_ratio(&[0.01, 0.03], &[0.0, 0.0], true).unwrap() - ir * 12f64.sqrt()).abs() < 1e-12);
        assert!(matches!(
            information_ratio(&[0.01, 0.02], &[0.01, 0.02], false),
            Err(BacktestError::ZeroVolatility)
        ));
    }

    #[test]
    fn top_selection_breaks_ties_by_asset_id() {
        let ids: Vec<String> = ["C", "A", "B"].iter().map(|s| s.to_string()).collect();
        let pick = select_top(array![1.0, 1.0, 0.5].view(), &ids, 1);
        assert_eq!(pick, vec![1]);
    }
}
