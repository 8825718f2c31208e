use std::path::{Path, PathBuf};

use dpls_core::backtest::FittedModel;
use dpls_core::dpls::{
    aggregate_attribution, bootstrap_sensitivities, latent_factors, sensitivities, taylor_attribution,
    top_factor_split, top_interactions, write_attribution_csv, write_sensitivity_csv, Attribution, DplsModel,
    DplsSpec, FactorSplit, SensitivityReport,
};
use dpls_core::pls::{scale_factors, ScaleFactorReport};
use dpls_core::seed::derive_seed;
use dpls_core::SCHEMA_VERSION;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::config::absolute;
use crate::error::{Classify, CliError};
use crate::inputs::{create_file, period_or_last, required, select_rows, write_json, ModelFile, PanelInput};

fn dpls_model(file: &ModelFile) -> Result<&DplsModel, CliError> {
    match &file.model {
        FittedModel::Dpls(m) => Ok(m),
        _ => Err(CliError::Validation(format!(
            "this command needs a dpls model, got {:?}",
            file.method
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeConfig {
    #[serde(flatten)]
    pub input: PanelInput,
    pub model: Option<PathBuf>,
    /// Period to attribute; the last one when absent.
    pub period: Option<i64>,
    /// Factors listed individually in the summary; the rest are pooled.
    pub top_n: usize,
    pub seed: u64,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        Self {
            input: PanelInput::default(),
            model: None,
            period: None,
            top_n: 3,
            seed: 0,
        }
    }
}

impl AttributeConfig {
    pub fn finalize(&mut self) -> Result<(), CliError> {
        absolute(&mut self.input.panel)?;
        absolute(&mut self.model)?;
        required(&self.model, "model")?;
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct AttributionSummary {
    schema_version: &'static str,
    period: i64,
    rows: usize,
    /// `K × q` exposures of the response to each latent factor at the origin.
    latent_factors: Array2<f64>,
    /// Equal-weight average over the attributed rows.
    mean: Attribution,
    factor_split: Vec<FactorSplit>,
}

pub fn run_attribute(cfg: &AttributeConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let file = ModelFile::load(required(&cfg.model, "model")?)?;
    let m = dpls_model(&file)?;
    let panel = cfg.input.load()?;
    file.check_features(&panel)?;
    let cs = period_or_last(&panel, cfg.period)?;
    let v = m.pls.scores(cs.features.view()).invalid("scoring rows")?;
    let rows = taylor_attribution(m, v.view()).failed("attribution")?;
    write_attribution_csv(create_file(out, "attribution.csv")?, Some(cs.period), &cs.asset_ids, &rows)
        .failed("writing attribution.csv")?;
    let weights = vec![1.0 / rows.len() as f64; rows.len()];
    let summary = AttributionSummary {
        schema_version: SCHEMA_VERSION,
        period: cs.period,
        rows: rows.len(),
        latent_factors: latent_factors(m).failed("latent factors")?,
        mean: aggregate_attribution(&rows, &weights).failed("aggregating")?,
        factor_split: (0..m.pls.n_responses())
            .map(|j| top_factor_split(&rows, j, cfg.top_n))
            .collect(),
    };
    Ok(vec![
        "attribution.csv".into(),
        write_json(out, "attribution.json", &summary)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensitivitiesConfig {
    #[serde(flatten)]
    pub input: PanelInput,
    pub model: Option<PathBuf>,
    pub period: Option<i64>,
    /// Bootstrap resamples for Jacobian quantiles; 0 skips the bootstrap.
    pub bootstrap: usize,
    pub top_interactions: usize,
    pub seed: u64,
}

impl Default for SensitivitiesConfig {
    fn default() -> Self {
        Self {
            input: PanelInput::default(),
            model: None,
            period: None,
            bootstrap: 0,
            top_interactions: 10,
            seed: 0,
        }
    }
}

impl SensitivitiesConfig {
    pub fn finalize(&mut self) -> Result<(), CliError> {
        absolute(&mut self.input.panel)?;
        absolute(&mut self.model)?;
        required(&self.model, "model")?;
        if self.bootstrap == 1 {
            return Err(CliError::Validation("bootstrap needs at least 2 resamples".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct Interaction {
    response: usize,
    a: String,
    b: String,
    value: f64,
}

#[derive(Debug, Serialize)]
struct SensitivitySummary {
    schema_version: &'static str,
    period: i64,
    feature_names: Vec<String>,
    report: SensitivityReport,
    top_interactions: Vec<Interaction>,
}

pub fn run_sensitivities(cfg: &SensitivitiesConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let file = ModelFile::load(required(&cfg.model, "model")?)?;
    let m = dpls_model(&file)?;
    let panel = cfg.input.load()?;
    file.check_features(&panel)?;
    let cs = period_or_last(&panel, cfg.period)?;
    let report = if cfg.bootstrap >= 2 {
        let spec = DplsSpec {
            k: m.k(),
            net: file.net.spec(),
            train: file.net.train(0),
        };
        let y = cs.target();
        bootstrap_sensitivities(
            &spec,
            cs.features.view(),
            y.view(),
            cfg.bootstrap,
            derive_seed(cfg.seed, "sensitivities/bootstrap"),
        )
        .failed("bootstrap")?
    } else {
        sensitivities(m, cs.features.view()).failed("sensitivities")?
    };
    write_sensitivity_csv(create_file(out, "sensitivities.csv")?, Some(cs.period), &panel.feature_names, &report)
        .failed("writing sensitivities.csv")?;
    let names = &panel.feature_names;
    let top = report
        .hessian_at_zero
        .iter()
        .enumerate()
        .flat_map(|(j, h)| {
            top_interactions(h.view(), cfg.top_interactions)
                .into_iter()
                .map(move |(a, b, value)| Interaction {
                    response: j,
                    a: names[a].clone(),
                    b: names[b].clone(),
                    value,
                })
        })
        .collect();
    let summary = SensitivitySummary {
        schema_version: SCHEMA_VERSION,
        period: cs.period,
        feature_names: panel.feature_names.clone(),
        report,
        top_interactions: top,
    };
    Ok(vec![
        "sensitivities.csv".into(),
        write_json(out, "sensitivities.json", &summary)?,
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnoseConfig {
    #[serde(flatten)]
    pub input: PanelInput,
    /// Plain numeric CSV with a header row, used instead of a panel.
    pub matrix: Option<PathBuf>,
    /// Response column of `matrix`; the last column when absent.
    pub target: Option<String>,
    pub k: usize,
    /// Panel period; every period pooled when absent.
    pub period: Option<i64>,
    pub seed: u64,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            input: PanelInput::default(),
            matrix: None,
            target: None,
            k: 1,
            period: None,
            seed: 0,
        }
    }
}

impl DiagnoseConfig {
    pub fn finalize(&mut self) -> Result<(), CliError> {
        absolute(&mut self.input.panel)?;
        absolute(&mut self.matrix)?;
        if self.k == 0 {
            return Err(CliError::Validation("k must be at least 1".into()));
        }
        match (&self.input.panel, &self.matrix) {
            (Some(_), Some(_)) => Err(CliError::Validation("give either --panel or --matrix, not both".into())),
            (None, None) => Err(CliError::Validation("--panel or --matrix is required".into())),
            _ => Ok(()),
        }
    }
}

fn read_matrix(path: &Path, target: Option<&str>) -> Result<(Array2<f64>, Array1<f64>), CliError> {
    let what = format!("reading {}", path.display());
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .invalid(&what)?;
    let headers: Vec<String> = rdr.headers().invalid(&what)?.iter().map(str::to_string).collect();
    if headers.len() < 2 {
        return Err(CliError::Validation(format!("{}: need a response and at least one predictor", path.display())));
    }
    let t = match target {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Validation(format!("{}: no column '{name}'", path.display())))?,
        None => headers.len() - 1,
    };
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.invalid(&what)?;
        if rec.len() != headers.len() {
            return Err(CliError::Validation(format!("{}: line {} has {} fields", path.display(), i + 2, rec.len())));
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CliError::Validation(format!("{}: line {} has bad value '{cell}'", path.display(), i + 2)))?;
            if c == t {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    let n = y.len();
    let x = Array2::from_shape_vec((n, headers.len() - 1), x).invalid(&what)?;
    Ok((x, Array1::from(y)))
}

#[derive(Debug, Serialize)]
struct ShrinkageSummary {
    schema_version: &'static str,
    n_rows: usize,
    expands: bool,
    report: ScaleFactorReport,
}

pub fn run_diagnose(cfg: &DiagnoseConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let (x, y) = match &cfg.matrix {
        Some(path) => read_matrix(path, cfg.target.as_deref())?,
        None => {
            let panel = cfg.input.load()?;
            let cs = select_rows(&panel, cfg.period)?;
            (cs.features, cs.returns)
        }
    };
    let report = scale_factors(x.view(), y.view(), cfg.k).invalid("scale factors")?;
    let mut w = csv::Writer::from_writer(create_file(out, "shrinkage.csv")?);
    w.write_record(["j", "e_j2", "f_j", "defined", "closed_form", "degenerate"])
        .failed("writing")?;
    for j in 0..report.rank() {
        w.write_record([
            (j + 1).to_string(),
            report.eigenvalues[j].to_string(),
            report.factors[j].map_or_else(|| "NA".into(), |f| f.to_string()),
            report.factors[j].is_some().to_string(),
            report.closed_form[j].to_string(),
            report.degenerate[j].to_string(),
        ])
        .failed("writing")?;
    }
    w.flush().failed("writing")?;
    let summary = ShrinkageSummary {
        schema_version: SCHEMA_VERSION,
        n_rows: x.nrows(),
        expands: report.expands(),
        report,
    };
    Ok(vec![
        "shrinkage.csv".into(),
        write_json(out, "shrinkage.json", &summary)?,
    ])
}
