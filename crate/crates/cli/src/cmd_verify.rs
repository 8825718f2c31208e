//! Self-contained checks run on synthetic inputs: the coefficient
//! consistency Monte Carlo, finite-difference derivative checks and the
//! attribution identity.

use std::path::Path;

use dpls_core::data::{Link, Regime, SynthConfig};
use dpls_core::deepnet::{Activation, Layer, Network};
use dpls_core::dpls::{covariate_hessian, covariate_jacobian, taylor_attribution, verify_composability, DplsModel};
use dpls_core::pls::fit_nipals;
use dpls_core::seed::{derive_seed, rng_for};
use dpls_core::SCHEMA_VERSION;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Classify, CliError};
use crate::inputs::write_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    #[default]
    Consistency,
    Gradcheck,
    Attribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub check: Check,
    /// Sample sizes of the consistency check.
    pub n: Vec<usize>,
    pub link: Link,
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub noise_sd: f64,
    pub replicates: usize,
    pub min_cosine: f64,
    /// Random (network, point) pairs for the Jacobian check.
    pub pairs: usize,
    pub hessian_pairs: usize,
    pub jacobian_rtol: f64,
    pub hessian_atol: f64,
    /// Rows for the attribution identity.
    pub rows: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            check: Check::Consistency,
            n: vec![500, 5000, 50000],
            link: Link::Tanh,
            p: 10,
            q: 1,
            k: 2,
            noise_sd: 0.1,
            replicates: 10,
            min_cosine: 0.99,
            pairs: 100,
            hessian_pairs: 50,
            jacobian_rtol: 1e-4,
            hessian_atol: 1e-3,
            rows: 1000,
            seed: 0,
        }
    }
}

impl VerifyConfig {
    pub fn finalize(&mut self) -> Result<(), CliError> {
        if self.n.is_empty() || self.n.iter().any(|&n| n < 2) {
            return Err(CliError::Validation("sample sizes must be at least 2".into()));
        }
        if self.replicates == 0 || self.pairs == 0 || self.hessian_pairs == 0 || self.rows == 0 {
            return Err(CliError::Validation("replicates, pairs and rows must be at least 1".into()));
        }
        if self.k == 0 || self.k > self.p || self.q == 0 {
            return Err(CliError::Validation("need 1 <= k <= p and q >= 1".into()));
        }
        Ok(())
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn consistency(cfg: &VerifyConfig) -> Result<(bool, serde_json::Value), CliError> {
    let runs: Vec<_> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let synth = SynthConfig {
                noise_sd: cfg.noise_sd,
                regime: Regime::Gaussian,
                ..SynthConfig::new(2, cfg.p, cfg.q, cfg.k, cfg.link, derive_seed(cfg.seed, &format!("verify/consistency/{r}")))
            };
            verify_composability(&synth, cfg.k, &cfg.n)
        })
        .collect::<Result<_, _>>()
        .failed("consistency")?;
    let mut medians = Vec::new();
    for (i, &n) in cfg.n.iter().enumerate() {
        let cols: Vec<f64> = (0..cfg.q)
            .map(|j| median(runs.iter().map(|r| r.points[i].cosine_similarities[j]).collect()))
            .collect();
        println!("n={n} median |cosine| per column: {cols:?}");
        medians.push(cols);
    }
    let last = medians.last().expect("non-empty grid");
    let above = last.iter().all(|&c| c >= cfg.min_cosine);
    let monotone = medians
        .windows(2)
        .all(|w| w[1].iter().zip(&w[0]).all(|(b, a)| b >= a));
    println!("largest n above {}: {above}; non-decreasing in n: {monotone}", cfg.min_cosine);
    Ok((
        above && monotone,
        json!({ "sample_sizes": cfg.n, "median_cosines": medians, "above_threshold": above, "non_decreasing": monotone }),
    ))
}

/// PLS fit on random rows composed with a random untrained network.
fn random_model(seed: u64, label: &str, linear: bool) -> DplsModel {
    let mut rng = rng_for(seed, label);
    let p = rng.random_range(3..=7);
    let k = rng.random_range(1..=p.min(3));
    let q = rng.random_range(1..=2);
    let n = 40;
    let mut normal = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rng.sample::<f64, _>(StandardNormal));
    let x = normal(n, p);
    let y = normal(n, q);
    let pls = fit_nipals(x.view(), y.view(), k).expect("random design has full rank");
    let k = pls.k;
    let depth = rng.random_range(1..=2);
    let mut dims = vec![k];
    dims.extend((0..depth).map(|_| rng.random_range(2..=8)));
    dims.push(k);
    let act = if linear {
        Activation::Linear
    } else if rng.random_bool(0.5) {
        Activation::Softplus
    } else {
        Activation::Tanh
    };
    let layers = (0..dims.len() - 1)
        .map(|l| Layer {
            weight: Array2::from_shape_simple_fn((dims[l + 1], dims[l]), || rng.random_range(-1.0..=1.0)),
            bias: Array1::from_shape_simple_fn(dims[l + 1], || rng.random_range(-1.0..=1.0)),
            activation: if l + 2 == dims.len() { Activation::Linear } else { act },
        })
        .collect();
    let net = Network::new(layers).expect("chained widths");
    DplsModel::new(pls, net, ((n - 1) as f64).sqrt()).expect("matching dims")
}

fn point(seed: u64, label: &str, p: usize) -> Array1<f64> {
    let mut rng = rng_for(seed, label);
    Array1::from_shape_simple_fn(p, || rng.sample::<f64, _>(StandardNormal))
}

fn predict_at(m: &DplsModel, z: &Array1<f64>) -> Array1<f64> {
    m.predict_standardized(z.view().insert_axis(Axis(0)))
        .expect("dims checked")
        .row(0)
        .to_owned()
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn gradcheck(cfg: &VerifyConfig) -> Result<(bool, serde_json::Value), CliError> {
    let jac_err = (0..cfg.pairs)
        .into_par_iter()
        .map(|i| {
            let m = random_model(cfg.seed, &format!("verify/gradcheck/{i}"), false);
            let p = m.pls.n_features();
            let z = point(cfg.seed, &format!("verify/gradcheck/{i}/point"), p);
            let j = covariate_jacobian(&m, z.view()).failed("jacobian")?;
            let h = 1e-5;
            let mut fd = Array2::zeros(j.raw_dim());
            for c in 0..p {
                let (mut up, mut dn) = (z.clone(), z.clone());
                up[c] += h;
                dn[c] -= h;
                fd.column_mut(c).assign(&((predict_at(&m, &up) - predict_at(&m, &dn)) / (2.0 * h)));
            }
            Ok(max_abs(&(&j - &fd)) / max_abs(&j).max(1e-8))
        })
        .collect::<Result<Vec<f64>, CliError>>()?
        .into_iter()
        .fold(0.0_f64, f64::max);
    let (hess_err, symmetric) = (0..cfg.hessian_pairs)
        .into_par_iter()
        .map(|i| {
            let m = random_model(cfg.seed, &format!("verify/hessian/{i}"), false);
            let p = m.pls.n_features();
            let z = point(cfg.seed, &format!("verify/hessian/{i}/point"), p);
            let step = 1e-4;
            let mut worst = 0.0_f64;
            let mut sym = true;
            for out in 0..m.pls.n_responses() {
                let h = covariate_hessian(&m, z.view(), out).failed("hessian")?;
                sym &= h == h.t();
                let mut fd = Array2::zeros((p, p));
                for a in 0..p {
                    for b in 0..p {
                        let at = |sa: f64, sb: f64| {
                            let mut x = z.clone();
                            x[a] += sa * step;
                            x[b] += sb * step;
                            predict_at(&m, &x)[out]
                        };
                        fd[[a, b]] = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * step * step);
                    }
                }
                worst = worst.max(max_abs(&(&h - &fd)));
            }
            Ok((worst, sym))
        })
        .collect::<Result<Vec<(f64, bool)>, CliError>>()?
        .into_iter()
        .fold((0.0_f64, true), |(w, s), (e, ok)| (w.max(e), s && ok));
    println!("max relative Jacobian error over {} pairs: {jac_err:e} (limit {:e})", cfg.pairs, cfg.jacobian_rtol);
    println!("max absolute Hessian error over {} pairs: {hess_err:e} (limit {:e})", cfg.hessian_pairs, cfg.hessian_atol);
    println!("Hessians exactly symmetric: {symmetric}");
    let passed = jac_err <= cfg.jacobian_rtol && hess_err <= cfg.hessian_atol && symmetric;
    Ok((
        passed,
        json!({ "jacobian_max_rel_error": jac_err, "hessian_max_abs_error": hess_err, "hessian_symmetric": symmetric }),
    ))
}

fn attribution(cfg: &VerifyConfig) -> Result<(bool, serde_json::Value), CliError> {
    let residual = |linear: bool, label: &str| -> Result<(f64, f64), CliError> {
        let m = random_model(cfg.seed, label, linear);
        let mut rng = rng_for(cfg.seed, &format!("{label}/rows"));
        let v = Array2::from_shape_simple_fn((cfg.rows, m.k()), || 0.2 * rng.sample::<f64, _>(StandardNormal));
        let rows = taylor_attribution(&m, v.view()).failed("attribution")?;
        let mut identity = 0.0_f64;
        let mut curvature = 0.0_f64;
        for a in &rows {
            for j in 0..a.total.len() {
                let scale = [a.total[j], a.alpha[j], a.linear[j], a.quadratic[j]]
                    .iter()
                    .fold(0.0_f64, |m, v| m.max(v.abs()))
                    .max(f64::MIN_POSITIVE);
                let sum = a.alpha[j] + a.linear[j] + a.quadratic[j] + a.hot[j];
                identity = identity.max((sum - a.total[j]).abs() / scale);
                curvature = curvature.max(a.quadratic[j].abs()).max(a.hot[j].abs());
            }
        }
        Ok((identity, curvature))
    };
    let (identity, _) = residual(false, "verify/attribution/nonlinear")?;
    let (linear_identity, curvature) = residual(true, "verify/attribution/linear")?;
    let identity = identity.max(linear_identity);
    println!("max |alpha + linear + quadratic + hot - total| / scale: {identity:e} (limit 1e-12)");
    println!("max |quadratic|, |hot| for a linear network: {curvature:e} (limit 1e-10)");
    Ok((
        identity <= 1e-12 && curvature <= 1e-10,
        json!({ "max_scaled_residual": identity, "linear_net_max_curvature": curvature }),
    ))
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    schema_version: &'static str,
    check: Check,
    passed: bool,
    metrics: serde_json::Value,
}

/// Writes `verify.json`; a failed check is reported after the file exists.
pub fn run(cfg: &VerifyConfig, out: &Path) -> Result<Vec<String>, CliError> {
    let (passed, metrics) = match cfg.check {
        Check::Consistency => consistency(cfg)?,
        Check::Gradcheck => gradcheck(cfg)?,
        Check::Attribution => attribution(cfg)?,
    };
    let report = VerifyReport {
        schema_version: SCHEMA_VERSION,
        check: cfg.check,
        passed,
        metrics,
    };
    let name = write_json(out, "verify.json", &report)?;
    println!("{:?}: {}", cfg.check, if passed { "PASS" } else { "FAIL" });
    if !passed {
        return Err(CliError::CheckFailed(format!("{:?} check failed: {}", cfg.check, report.metrics)));
    }
    Ok(vec![name])
}
