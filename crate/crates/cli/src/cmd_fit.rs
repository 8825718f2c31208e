use std::path::{Path, PathBuf};

use dpls_core::backtest::{fit_period, linf_error, total_r2, tune_period, BacktestConfig, FittedModel, KRule, Method};
use dpls_core::baselines::CvRule;
use dpls_core::deepnet::count_parameters;
use dpls_core::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

use crate::config::absolute;
use crate::error::{Classify, CliError};
use crate::inputs::{create_file, required, select_rows, write_json, ModelFile, NetOptions, PanelInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    #[serde(flatten)]
    pub input: PanelInput,
    pub method: Method,
    /// Fixed component count; cross-validated when absent.
    pub k: Option<usize>,
    pub k_max: usize,
    pub folds: usize,
    pub lasso_rule: CvRule,
    /// Fit one period; every period is pooled when absent.
    pub period: Option<i64>,
    #[serde(flatten)]
    pub net: NetOptions,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            input: PanelInput::default(),
            method: Method::Pls,
            k: None,
            k_max: 10,
            folds: 5,
            lasso_rule: CvRule::Min,
            period: None,
            net: NetOptions::default(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn finalize(&mut self) -> Result<(), CliError> {
        absolute(&mut self.input.panel)?;
        if self.method == Method::PcaInsampleOnly {
            return Err(CliError::Validation(
                "pca_insample_only has no predictive model; use `backtest`".into(),
            ));
        }
        self.net.validate()?;
        self.backtest_config().validate().invalid("config")
    }

    /// The per-period fitting path of the backtest is reused so that
    /// `fit --period t` reproduces the backtest's model for period `t`.
    fn backtest_config(&self) -> BacktestConfig {
        BacktestConfig {
            method: self.method,
            k_rule: match self.k {
                Some(k) => KRule::Fixed { k },
                None => KRule::Cv {
                    k_max: self.k_max,
                    folds: self.folds,
                },
            },
            net: self.net.spec(),
            train: self.net.train(0),
            lasso_folds: self.folds,
            lasso_rule: self.lasso_rule,
            seed: self.seed,
            ..BacktestConfig::default()
        }
    }
}

#[derive(Debug, Serialize)]
struct FitSummary {
    schema_version: &'static str,
    method: Method,
    period: i64,
    n_rows: usize,
    n_features: usize,
    k: Option<usize>,
    lambda: Option<f64>,
    parameter_count: Option<usize>,
    network_dims: Option<Vec<usize>>,
    initial_mse: Option<f64>,
    final_mse: Option<f64>,
    non_convergent: Option<bool>,
    loss_curve: Vec<f64>,
    in_sample_mse: f64,
    in_sample_linf: f64,
    in_sample_r2_total: Option<f64>,
}

pub fn run_fit(cfg: &FitConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let panel = cfg.input.load()?;
    let section = select_rows(&panel, cfg.period)?;
    let bt = cfg.backtest_config();
    let tuning = tune_period(&section, &bt).failed("tuning")?;
    let model = fit_period(&section, &bt, tuning).failed("fitting")?;
    let fitted = model.predict(section.features.view()).failed("predicting")?;
    let resid = &fitted - &section.returns;

    let mut summary = FitSummary {
        schema_version: SCHEMA_VERSION,
        method: cfg.method,
        period: section.period,
        n_rows: section.len(),
        n_features: panel.n_features(),
        k: model.k(),
        lambda: None,
        parameter_count: None,
        network_dims: None,
        initial_mse: None,
        final_mse: None,
        non_convergent: None,
        loss_curve: Vec::new(),
        in_sample_mse: resid.mapv(|e| e * e).mean().unwrap_or(0.0),
        in_sample_linf: linf_error(fitted.view(), section.returns.view()).failed("metrics")?,
        in_sample_r2_total: total_r2(fitted.view(), section.returns.view(), 0).ok(),
    };
    match &model {
        FittedModel::Lasso(l) => summary.lambda = Some(l.lambda),
        FittedModel::Dpls(d) => {
            summary.parameter_count = Some(count_parameters(&d.net));
            let mut dims = vec![d.net.input_dim()];
            dims.extend(d.net.layers.iter().map(|l| l.weight.nrows()));
            summary.network_dims = Some(dims);
            if let Some(t) = &d.training {
                summary.initial_mse = Some(t.initial_mse);
                summary.final_mse = Some(t.final_mse);
                summary.non_convergent = Some(t.non_convergent);
                summary.loss_curve = t.loss_curve.clone();
            }
        }
        _ => {}
    }
    let file = ModelFile {
        schema_version: SCHEMA_VERSION.to_string(),
        method: cfg.method,
        feature_names: panel.feature_names.clone(),
        period: section.period,
        net: cfg.net.clone(),
        seed: cfg.seed,
        model,
    };
    Ok(vec![
        write_json(out, "model.json", &file)?,
        write_json(out, "fit_summary.json", &summary)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PredictConfig {
    #[serde(flatten)]
    pub input: PanelInput,
    pub model: Option<PathBuf>,
    /// Predict one period; every period when absent.
    pub period: Option<i64>,
    pub seed: u64,
}

impl PredictConfig {
    pub fn finalize(&mut self) -> Result<(), CliError> {
        absolute(&mut self.input.panel)?;
        absolute(&mut self.model)?;
        required(&self.model, "model")?;
        Ok(())
    }
}

pub fn run_predict(cfg: &PredictConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let file = ModelFile::load(required(&cfg.model, "model")?)?;
    let panel = cfg.input.load()?;
    file.check_features(&panel)?;
    let sections: Vec<_> = match cfg.period {
        Some(p) => vec![select_rows(&panel, Some(p))?],
        None => panel.cross_sections.clone(),
    };
    let mut w = csv::Writer::from_writer(create_file(out, "predictions.csv")?);
    w.write_record(["period", "asset", "predicted", "realized"]).failed("writing")?;
    for cs in &sections {
        let pred = file.model.predict(cs.features.view()).failed("predicting")?;
        for i in 0..cs.len() {
            w.write_record([
                cs.period.to_string(),
                cs.asset_ids[i].clone(),
                pred[i].to_string(),
                cs.returns[i].to_string(),
            ])
            .failed("writing")?;
        }
    }
    w.flush().failed("writing")?;
    Ok(vec!["predictions.csv".into()])
}
