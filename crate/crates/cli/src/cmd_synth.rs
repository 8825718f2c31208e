use std::path::Path;

use dpls_core::data::{synthetic_panel, write_panel, Link, Regime, SynthConfig, SyntheticTruth};
use dpls_core::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

use crate::error::{Classify, CliError};
use crate::inputs::{create_file, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesizeConfig {
    pub n: usize,
    pub p: usize,
    pub k_true: usize,
    pub link: Link,
    pub noise_sd: f64,
    pub regime: Regime,
    pub latent_scale: f64,
    pub periods: usize,
    pub seed: u64,
}

impl Default for SynthesizeConfig {
    fn default() -> Self {
        Self {
            n: 300,
            p: 15,
            k_true: 3,
            link: Link::Tanh,
            noise_sd: 0.1,
            regime: Regime::Gaussian,
            latent_scale: 1.0,
            periods: 20,
            seed: 0,
        }
    }
}

impl SynthesizeConfig {
    fn synth(&self) -> SynthConfig {
        SynthConfig {
            noise_sd: self.noise_sd,
            regime: self.regime,
            latent_scale: self.latent_scale,
            ..SynthConfig::new(self.n, self.p, 1, self.k_true, self.link, self.seed)
        }
    }

    pub fn finalize(&mut self) -> Result<(), CliError> {
        if self.periods == 0 {
            return Err(CliError::Validation("periods must be at least 1".into()));
        }
        self.synth().validate().invalid("config")
    }
}

#[derive(Debug, Serialize)]
struct TruthFile {
    schema_version: &'static str,
    #[serde(rename = "P_true")]
    p_true: ndarray::Array2<f64>,
    #[serde(rename = "B_true")]
    b_true: ndarray::Array2<f64>,
    #[serde(rename = "Q_true")]
    q_true: ndarray::Array2<f64>,
    cfg: SynthConfig,
    periods: usize,
}

pub fn run(cfg: &SynthesizeConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let synth = cfg.synth();
    let (panel, truth): (_, SyntheticTruth) = synthetic_panel(&synth, cfg.periods).invalid("synthesizing")?;
    write_panel(&panel, create_file(out, "panel.csv")?).failed("writing panel.csv")?;
    let file = TruthFile {
        schema_version: SCHEMA_VERSION,
        p_true: truth.p_true,
        b_true: truth.b_true,
        q_true: truth.q_true,
        cfg: synth,
        periods: cfg.periods,
    };
    Ok(vec!["panel.csv".into(), write_json(out, "truth.json", &file)?])
}
