use std::path::{Path, PathBuf};

use dpls_core::{schema_compatible, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};

use crate::cmd_analysis::{self, AttributeConfig, DiagnoseConfig, SensitivitiesConfig};
use crate::cmd_backtest::{self, BacktestRunConfig};
use crate::cmd_fit::{self, FitConfig, PredictConfig};
use crate::cmd_synth::{self, SynthesizeConfig};
use crate::cmd_verify::{self, VerifyConfig};
use crate::error::{Classify, CliError};
use crate::inputs::write_json;

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// A fully resolved command: everything a run depends on besides the input
/// files themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "snake_case")]
pub enum ResolvedCommand {
    Fit(FitConfig),
    Predict(PredictConfig),
    Backtest(BacktestRunConfig),
    Attribute(AttributeConfig),
    Sensitivities(SensitivitiesConfig),
    Diagnose(DiagnoseConfig),
    Synthesize(SynthesizeConfig),
    Verify(VerifyConfig),
}

impl ResolvedCommand {
    pub fn seed(&self) -> u64 {
        match self {
            ResolvedCommand::Fit(c) => c.seed,
            ResolvedCommand::Predict(c) => c.seed,
            ResolvedCommand::Backtest(c) => c.seed,
            ResolvedCommand::Attribute(c) => c.seed,
            ResolvedCommand::Sensitivities(c) => c.seed,
            ResolvedCommand::Diagnose(c) => c.seed,
            ResolvedCommand::Synthesize(c) => c.seed,
            ResolvedCommand::Verify(c) => c.seed,
        }
    }

    pub fn execute(&self, out: &Path) -> Result<Vec<String>, CliError> {
        match self {
            ResolvedCommand::Fit(c) => cmd_fit::run_fit(c, out),
            ResolvedCommand::Predict(c) => cmd_fit::run_predict(c, out),
            ResolvedCommand::Backtest(c) => cmd_backtest::run(c, out),
            ResolvedCommand::Attribute(c) => cmd_analysis::run_attribute(c, out),
            ResolvedCommand::Sensitivities(c) => cmd_analysis::run_sensitivities(c, out),
            ResolvedCommand::Diagnose(c) => cmd_analysis::run_diagnose(c, out),
            ResolvedCommand::Synthesize(c) => cmd_synth::run(c, out),
            ResolvedCommand::Verify(c) => cmd_verify::run(c, out),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub tool: String,
    pub version: String,
    pub run: ResolvedCommand,
    pub seed: u64,
    /// Worker threads requested; 0 means one per core. Outputs do not
    /// depend on it.
    pub jobs: usize,
    pub status: String,
    pub error: Option<String>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
}

/// Runs `cmd` into `out` and records the run in `out/run_manifest.json`,
/// whether or not it succeeded.
pub fn run_and_record(cmd: &ResolvedCommand, out: &Path, jobs: usize) -> Result<Vec<String>, CliError> {
    std::fs::create_dir_all(out).failed(&format!("creating {}", out.display()))?;
    let result = cmd.execute(out);
    let (status, error, outputs) = match &result {
        Ok(files) => ("ok", None, files.clone()),
        Err(e) => ("failed", Some(e.to_string()), Vec::new()),
    };
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        tool: "dpls".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        run: cmd.clone(),
        seed: cmd.seed(),
        jobs,
        status: status.into(),
        error,
        outputs,
    };
    write_json(out, MANIFEST_NAME, &manifest)?;
    result
}

pub fn load(path: &Path) -> Result<RunManifest, CliError> {
    let text = std::fs::read_to_string(path).invalid(&format!("reading {}", path.display()))?;
    let m: RunManifest = serde_json::from_str(&text).invalid(&format!("parsing {}", path.display()))?;
    if !schema_compatible(&m.schema_version) {
        return Err(CliError::Validation(format!(
            "manifest schema {} is not compatible with {SCHEMA_VERSION}",
            m.schema_version
        )));
    }
    Ok(m)
}

/// Re-executes the run described by `manifest_path` into `out` (by default
/// `replay/` next to the manifest) and compares every recorded output byte
/// for byte with the original.
pub fn replay(manifest_path: &Path, out: Option<PathBuf>, jobs: usize) -> Result<(), CliError> {
    let manifest = load(manifest_path)?;
    let original = manifest_path.parent().unwrap_or(Path::new("."));
    let out = out.unwrap_or_else(|| original.join("replay"));
    let files = run_and_record(&manifest.run, &out, jobs)?;
    let mut differing = Vec::new();
    for name in &manifest.outputs {
        let a = std::fs::read(original.join(name)).invalid(&format!("reading original {name}"))?;
        let same = std::fs::read(out.join(name)).map(|b| a == b).unwrap_or(false);
        println!("{name}: {}", if same { "identical" } else { "DIFFERS" });
        if !same {
            differing.push(name.clone());
        }
    }
    if files.len() != manifest.outputs.len() {
        differing.push(format!("output list ({} vs {} files)", files.len(), manifest.outputs.len()));
    }
    if !differing.is_empty() {
        return Err(CliError::CheckFailed(format!("replay differs in {}", differing.join(", "))));
    }
    Ok(())
}
