//! Configuration pieces shared by several subcommands and small output
//! helpers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dpls_core::backtest::{FittedModel, Method};
use dpls_core::data::{load_panel, stack_features, CrossSection, PanelDataset, PanelSchema};
use dpls_core::deepnet::{Activation, Init, TrainConfig};
use dpls_core::dpls::NetSpec;
use dpls_core::{schema_compatible, SCHEMA_VERSION};
use ndarray::{concatenate, Array1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Classify, CliError};

/// Where a panel CSV lives and which columns to read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelInput {
    pub panel: Option<PathBuf>,
    pub period_col: String,
    pub asset_col: String,
    pub return_col: String,
    /// Feature columns; `None` takes every other column.
    pub features: Option<Vec<String>>,
}

impl Default for PanelInput {
    fn default() -> Self {
        let s = PanelSchema::default();
        Self {
            panel: None,
            period_col: s.period,
            asset_col: s.asset,
            return_col: s.ret,
            features: None,
        }
    }
}

impl PanelInput {
    pub fn load(&self) -> Result<PanelDataset, CliError> {
        let path = self
            .panel
            .as_ref()
            .ok_or_else(|| CliError::Validation("--panel is required".into()))?;
        let schema = PanelSchema {
            period: self.period_col.clone(),
            asset: self.asset_col.clone(),
            ret: self.return_col.clone(),
            features: self.features.clone(),
        };
        let panel = load_panel(path, &schema).invalid(&format!("reading {}", path.display()))?;
        panel.validate().invalid("panel")?;
        Ok(panel)
    }
}

/// One period's cross-section, or every period stacked when `period` is
/// `None`. The stacked section carries the last period's label.
pub fn select_rows(panel: &PanelDataset, period: Option<i64>) -> Result<CrossSection, CliError> {
    match period {
        Some(p) => panel
            .cross_sections
            .iter()
            .find(|cs| cs.period == p)
            .cloned()
            .ok_or_else(|| CliError::Validation(format!("period {p} is not in the panel"))),
        None => {
            let all: Vec<&CrossSection> = panel.cross_sections.iter().collect();
            let returns: Vec<_> = all.iter().map(|cs| cs.returns.view()).collect();
            Ok(CrossSection {
                period: all.last().expect("validated panel is non-empty").period,
                asset_ids: all.iter().flat_map(|cs| cs.asset_ids.iter().cloned()).collect(),
                returns: concatenate(Axis(0), &returns).unwrap_or_else(|_| Array1::zeros(0)),
                features: stack_features(&all),
            })
        }
    }
}

/// Last period in the panel when none is given.
pub fn period_or_last(panel: &PanelDataset, period: Option<i64>) -> Result<CrossSection, CliError> {
    let p = period.unwrap_or_else(|| panel.cross_sections.last().expect("non-empty").period);
    select_rows(panel, Some(p))
}

/// Score network and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetOptions {
    pub layers: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l1_penalty: f64,
    pub init: Init,
}

impl Default for NetOptions {
    fn default() -> Self {
        let net = NetSpec::default();
        let train = TrainConfig::default();
        Self {
            layers: net.hidden,
            activation: net.activation,
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            l1_penalty: train.l1_penalty,
            init: train.init,
        }
    }
}

impl NetOptions {
    pub fn spec(&self) -> NetSpec {
        NetSpec {
            hidden: self.layers.clone(),
            activation: self.activation,
        }
    }

    pub fn train(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            l1_penalty: self.l1_penalty,
            seed,
            init: self.init,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.layers.iter().any(|&w| w == 0) {
            return Err(CliError::Validation("layer widths must be at least 1".into()));
        }
        self.train(0).validate().invalid("training options")
    }
}

/// `model.json`: a fitted model plus what is needed to refit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: String,
    pub method: Method,
    pub feature_names: Vec<String>,
    /// Period label of the training rows.
    pub period: i64,
    pub net: NetOptions,
    pub seed: u64,
    pub model: FittedModel,
}

impl ModelFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).invalid(&format!("reading {}", path.display()))?;
        let m: ModelFile = serde_json::from_str(&text).invalid(&format!("parsing {}", path.display()))?;
        if !schema_compatible(&m.schema_version) {
            return Err(CliError::Validation(format!(
                "{} has schema version {}, expected {SCHEMA_VERSION}",
                path.display(),
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn check_features(&self, panel: &PanelDataset) -> Result<(), CliError> {
        if self.feature_names != panel.feature_names {
            return Err(CliError::Validation(format!(
                "panel features {:?} differ from the model's {:?}",
                panel.feature_names, self.feature_names
            )));
        }
        Ok(())
    }
}

pub fn required<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::Validation(format!("--{flag} is required")))
}

/// Pretty JSON with a trailing newline; returns the file name.
pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String, CliError> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path).failed(&format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value).failed(&format!("writing {}", path.display()))?;
    w.write_all(b"\n").failed("writing")?;
    w.flush().failed("writing")?;
    Ok(name.to_string())
}

pub fn create_file(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    Ok(BufWriter::new(File::create(&path).failed(&format!("creating {}", path.display()))?))
}
