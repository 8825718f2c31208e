use std::path::Path;

use dpls_core::backtest::{run_backtest, write_report, BacktestConfig, BacktestReport, KRule, Method};
use dpls_core::baselines::CvRule;
use dpls_core::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

use crate::config::absolute;
use crate::error::{Classify, CliError};
use crate::inputs::{create_file, write_json, NetOptions, PanelInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestRunConfig {
    #[serde(flatten)]
    pub input: PanelInput,
    pub methods: Vec<Method>,
    /// Seeds of a sweep; the run seed alone when absent.
    pub seeds: Option<Vec<u64>>,
    pub k: Option<usize>,
    pub k_max: usize,
    pub folds: usize,
    pub cv_stride: usize,
    pub cv_first_only: bool,
    pub lasso_folds: usize,
    pub lasso_rule: CvRule,
    pub portfolio_sizes: Vec<usize>,
    pub annualize: bool,
    pub k_sweep_max: Option<usize>,
    pub group_features: Vec<String>,
    #[serde(flatten)]
    pub net: NetOptions,
    pub seed: u64,
}

impl Default for BacktestRunConfig {
    fn default() -> Self {
        let d = BacktestConfig::default();
        Self {
            input: PanelInput::default(),
            methods: vec![Method::Pls],
            seeds: None,
            k: None,
            k_max: 10,
            folds: 5,
            cv_stride: d.cv_stride,
            cv_first_only: d.cv_first_only,
            lasso_folds: d.lasso_folds,
            lasso_rule: d.lasso_rule,
            portfolio_sizes: d.portfolio_sizes,
            annualize: d.annualize,
            k_sweep_max: None,
            group_features: Vec::new(),
            net: NetOptions::default(),
            seed: 0,
        }
    }
}

impl BacktestRunConfig {
    pub fn finalize(&mut self) -> Result<(), CliError> {
        absolute(&mut self.input.panel)?;
        if self.methods.is_empty() {
            return Err(CliError::Validation("at least one method is required".into()));
        }
        self.net.validate()?;
        for &m in &self.methods {
            self.core(m, self.seed).validate().invalid("config")?;
        }
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.seed])
    }

    fn core(&self, method: Method, seed: u64) -> BacktestConfig {
        BacktestConfig {
            method,
            k_rule: match self.k {
                Some(k) => KRule::Fixed { k },
                None => KRule::Cv {
                    k_max: self.k_max,
                    folds: self.folds,
                },
            },
            net: self.net.spec(),
            train: self.net.train(0),
            cv_stride: self.cv_stride,
            cv_first_only: self.cv_first_only,
            lasso_folds: self.lasso_folds,
            lasso_rule: self.lasso_rule,
            portfolio_sizes: if method == Method::PcaInsampleOnly {
                Vec::new()
            } else {
                self.portfolio_sizes.clone()
            },
            seed,
            annualize: self.annualize,
            k_sweep_max: self.k_sweep_max,
            group_features: self.group_features.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct RunRow {
    method: Method,
    seed: u64,
    directory: String,
    r2_total_in: Option<f64>,
    r2_total_out: Option<f64>,
    median_linf_out: Option<f64>,
    failed_periods: usize,
}

#[derive(Debug, Serialize)]
struct MethodSummary {
    method: Method,
    runs: usize,
    median_r2_total_out: Option<f64>,
    median_linf_out: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Aggregate {
    schema_version: &'static str,
    runs: Vec<RunRow>,
    methods: Vec<MethodSummary>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn summarize(report: &BacktestReport, method: Method, seed: u64, directory: String) -> RunRow {
    RunRow {
        method,
        seed,
        directory,
        r2_total_in: report.totals.r2_total_in,
        r2_total_out: report.totals.r2_total_out,
        median_linf_out: median(report.periods.iter().filter_map(|m| m.out.as_ref().map(|o| o.linf)).collect()),
        failed_periods: report.periods.iter().filter(|m| m.error.is_some()).count(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

/// One run writes its report files into `out`; a sweep over several
/// methods or seeds writes each run into `out/<method>/seed-<seed>` and adds
/// `aggregate.csv` and `aggregate.json`.
pub fn run(cfg: &BacktestRunConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let panel = cfg.input.load()?;
    let seeds = cfg.seeds();
    let sweep = cfg.methods.len() * seeds.len() > 1;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        for &seed in &seeds {
            let rel = if sweep {
                format!("{}/seed-{seed}", serde_json::to_value(method).expect("enum").as_str().unwrap_or("method"))
            } else {
                String::new()
            };
            let dir = out.join(&rel);
            let report = run_backtest(&panel, &cfg.core(method, seed)).failed(&format!("backtest {method:?}"))?;
            write_report(&report, &dir).failed("writing report")?;
            for name in ["report.json", "metrics.csv", "portfolio.csv", "tilts.csv", "ksweep.csv"] {
                files.push(if sweep { format!("{rel}/{name}") } else { name.to_string() });
            }
            rows.push(summarize(&report, method, seed, if sweep { rel } else { ".".into() }));
        }
    }
    if sweep {
        let methods = cfg
            .methods
            .iter()
            .map(|&m| {
                let mine: Vec<&RunRow> = rows.iter().filter(|r| r.method == m).collect();
                MethodSummary {
                    method: m,
                    runs: mine.len(),
                    median_r2_total_out: median(mine.iter().filter_map(|r| r.r2_total_out).collect()),
                    median_linf_out: median(mine.iter().filter_map(|r| r.median_linf_out).collect()),
                }
            })
            .collect();
        let mut w = csv::Writer::from_writer(create_file(out, "aggregate.csv")?);
        w.write_record(["method", "seed", "r2_total_in", "r2_total_out", "median_linf_out", "failed_periods"])
            .failed("writing")?;
        for r in &rows {
            let method = serde_json::to_value(r.method).expect("enum");
            w.write_record([
                method.as_str().unwrap_or_default().to_string(),
                r.seed.to_string(),
                fmt_opt(r.r2_total_in),
                fmt_opt(r.r2_total_out),
                fmt_opt(r.median_linf_out),
                r.failed_periods.to_string(),
            ])
            .failed("writing")?;
        }
        w.flush().failed("writing")?;
        files.push("aggregate.csv".into());
        let agg = Aggregate {
            schema_version: SCHEMA_VERSION,
            runs: rows,
            methods,
        };
        for m in &agg.methods {
            println!(
                "{:?}: runs={} median_r2_total_out={} median_linf_out={}",
                m.method,
                m.runs,
                fmt_opt(m.median_r2_total_out),
                fmt_opt(m.median_linf_out)
            );
        }
        files.push(write_json(out, "aggregate.json", &agg)?);
    }
    Ok(files)
}
