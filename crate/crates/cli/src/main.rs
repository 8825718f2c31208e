//! `dpls`: fit, evaluate and inspect deep partial least squares factor
//! models from the command line.

mod cmd_analysis;
mod cmd_backtest;
mod cmd_fit;
mod cmd_synth;
mod cmd_verify;
mod config;
mod error;
mod inputs;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use config::{parse_seed_list, resolve, Sources};
use error::{Classify, CliError};
use manifest::ResolvedCommand;

#[derive(Parser)]
#[command(name = "dpls", version, about = "Deep partial least squares factor models")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Master seed; every random stream is derived from it and a task label.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON file with config values; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set epochs=50`. Applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on one period or on the pooled panel.
    Fit(FitArgs),
    /// Predict returns with a saved model.
    Predict(PredictArgs),
    /// Period-by-period train/predict experiment.
    Backtest(BacktestArgs),
    /// Taylor attribution of DPLS predictions.
    Attribute(AttributeArgs),
    /// Input Jacobians and Hessians of a DPLS model.
    Sensitivities(SensitivitiesArgs),
    /// PLS shrinkage (scale factor) diagnostic.
    Diagnose(DiagnoseArgs),
    /// Write a synthetic panel and its generating matrices.
    Synthesize(SynthesizeArgs),
    /// Run a self-contained check: consistency, gradcheck or attribution.
    Verify(VerifyArgs),
    /// Re-run a recorded run and compare its outputs byte for byte.
    Replay(ReplayArgs),
}

#[derive(Args, Serialize)]
struct PanelFlags {
    /// Panel CSV.
    #[arg(long)]
    panel: Option<PathBuf>,
    #[arg(long)]
    period_col: Option<String>,
    #[arg(long)]
    asset_col: Option<String>,
    #[arg(long)]
    return_col: Option<String>,
    /// Feature columns (comma separated); default: every other column.
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
}

#[derive(Args, Serialize)]
struct NetFlags {
    /// Hidden layer widths, e.g. `100,100`.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// softplus, tanh or linear.
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<f64>,
    #[arg(long)]
    l1_penalty: Option<f64>,
    /// uniform_glorot or pls_warm_start.
    #[arg(long)]
    init: Option<String>,
}

#[derive(Args, Serialize)]
struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    panel: PanelFlags,
    /// ols, lasso, pls or dpls.
    #[arg(long)]
    method: Option<String>,
    /// Fixed component count; cross-validated when omitted.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// min or one_standard_error.
    #[arg(long)]
    lasso_rule: Option<String>,
    #[arg(long)]
    period: Option<i64>,
    #[command(flatten)]
    #[serde(flatten)]
    net: NetFlags,
}

#[derive(Args, Serialize)]
struct PredictArgs {
    #[command(flatten)]
    #[serde(flatten)]
    panel: PanelFlags,
    /// model.json written by `fit`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    period: Option<i64>,
}

#[derive(Args, Serialize)]
struct BacktestArgs {
    #[command(flatten)]
    #[serde(flatten)]
    panel: PanelFlags,
    /// One or more of ols, lasso, pls, dpls, pca_insample_only.
    #[arg(long, alias = "method", value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Seed sweep: `3`, `0,4,9` or the inclusive range `0..9`.
    #[arg(long, value_parser = parse_seed_list)]
    seeds: Option<std::vec::Vec<u64>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    cv_stride: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    cv_first_only: Option<bool>,
    #[arg(long)]
    lasso_folds: Option<usize>,
    #[arg(long)]
    lasso_rule: Option<String>,
    #[arg(long, value_delimiter = ',')]
    portfolio_sizes: Option<Vec<usize>>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    annualize: Option<bool>,
    #[arg(long)]
    k_sweep_max: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    group_features: Option<Vec<String>>,
    #[command(flatten)]
    #[serde(flatten)]
    net: NetFlags,
}

#[derive(Args, Serialize)]
struct AttributeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    panel: PanelFlags,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    period: Option<i64>,
    #[arg(long)]
    top_n: Option<usize>,
}

#[derive(Args, Serialize)]
struct SensitivitiesArgs {
    #[command(flatten)]
    #[serde(flatten)]
    panel: PanelFlags,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    period: Option<i64>,
    /// Bootstrap resamples (0 = none).
    #[arg(long)]
    bootstrap: Option<usize>,
    #[arg(long)]
    top_interactions: Option<usize>,
}

#[derive(Args, Serialize)]
struct DiagnoseArgs {
    /// The diagnostic to run.
    #[arg(value_parser = ["shrinkage"], default_value = "shrinkage")]
    #[serde(skip)]
    _what: String,
    #[command(flatten)]
    #[serde(flatten)]
    panel: PanelFlags,
    /// Numeric CSV with a header row, instead of a panel.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Response column of --matrix (default: last).
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    period: Option<i64>,
}

#[derive(Args, Serialize)]
struct SynthesizeArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k_true: Option<usize>,
    /// linear, tanh, cubic or softplus_mix.
    #[arg(long)]
    link: Option<String>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// gaussian or skewed.
    #[arg(long)]
    regime: Option<String>,
    #[arg(long)]
    latent_scale: Option<f64>,
    #[arg(long)]
    periods: Option<usize>,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    /// consistency, gradcheck or attribution.
    check: String,
    /// Sample sizes of the consistency check.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    link: Option<String>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    hessian_pairs: Option<usize>,
    #[arg(long)]
    rows: Option<usize>,
}

#[derive(Args)]
struct ReplayArgs {
    /// A run_manifest.json written by an earlier run.
    manifest: PathBuf,
}

/// Flag values as a JSON object, leaving out flags that were not given.
fn flags_of<T: Serialize>(args: &T, seed: Option<u64>) -> Result<Value, CliError> {
    let mut v = serde_json::to_value(args).failed("encoding flags")?;
    if let Value::Object(map) = &mut v {
        map.retain(|_, val| !val.is_null());
        if let Some(s) = seed {
            map.insert("seed".into(), s.into());
        }
    }
    Ok(v)
}

fn resolved<C>(g: &GlobalArgs, args: &impl Serialize, finalize: fn(&mut C) -> Result<(), CliError>) -> Result<C, CliError>
where
    C: Serialize + serde::de::DeserializeOwned + Default,
{
    let mut cfg: C = resolve(Sources {
        file: g.config.as_deref(),
        flags: flags_of(args, g.seed)?,
        sets: &g.sets,
    })?;
    finalize(&mut cfg)?;
    Ok(cfg)
}

fn build(g: &GlobalArgs, cmd: &Command) -> Result<ResolvedCommand, CliError> {
    Ok(match cmd {
        Command::Fit(a) => ResolvedCommand::Fit(resolved(g, a, cmd_fit::FitConfig::finalize)?),
        Command::Predict(a) => ResolvedCommand::Predict(resolved(g, a, cmd_fit::PredictConfig::finalize)?),
        Command::Backtest(a) => {
            ResolvedCommand::Backtest(resolved(g, a, cmd_backtest::BacktestRunConfig::finalize)?)
        }
        Command::Attribute(a) => {
            ResolvedCommand::Attribute(resolved(g, a, cmd_analysis::AttributeConfig::finalize)?)
        }
        Command::Sensitivities(a) => {
            ResolvedCommand::Sensitivities(resolved(g, a, cmd_analysis::SensitivitiesConfig::finalize)?)
        }
        Command::Diagnose(a) => ResolvedCommand::Diagnose(resolved(g, a, cmd_analysis::DiagnoseConfig::finalize)?),
        Command::Synthesize(a) => {
            ResolvedCommand::Synthesize(resolved(g, a, cmd_synth::SynthesizeConfig::finalize)?)
        }
        Command::Verify(a) => ResolvedCommand::Verify(resolved(g, a, cmd_verify::VerifyConfig::finalize)?),
        Command::Replay(_) => unreachable!("replay is dispatched before resolution"),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    if g.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(g.jobs)
            .build_global()
            .failed("starting worker pool")?;
    }
    if let Command::Replay(r) = &cli.command {
        return manifest::replay(&r.manifest, g.out.clone(), g.jobs);
    }
    let cmd = build(g, &cli.command)?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("dpls-out"));
    let files = manifest::run_and_record(&cmd, &out, g.jobs)?;
    for f in files {
        println!("wrote {}", out.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            let message = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": message }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code())
        }
    }
}
