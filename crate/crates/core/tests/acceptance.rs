//! Acceptance suite. Each criterion prints one PASS/FAIL line together with
//! the measured quantities and its runtime; the process fails if any
//! criterion fails or exceeds its time budget.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dpls_core::backtest::{
    build_portfolio, fit_period, information_ratio, run_backtest, total_r2, tune_period, write_report,
    BacktestConfig, BacktestReport, FittedModel, KRule, Method, PeriodPrediction, MIN_TOTAL_R2_OBS,
};
use dpls_core::baselines::{fit_lasso, fit_ols};
use dpls_core::data::{
    load_panel, save_panel, synthetic_panel, Link, PanelDataset, PanelSchema, Regime, SynthConfig,
};
use dpls_core::deepnet::{count_parameters_for, Activation, Architecture, Layer, Network, TrainConfig};
use dpls_core::dpls::{
    covariate_hessian, covariate_jacobian, fit_dpls, taylor_attribution, verify_composability, DplsModel, NetSpec,
};
use dpls_core::pls::{fit_nipals, helland_coefficients, scale_factors};
use dpls_core::seed::{derive_seed, rng_for};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
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

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn randn(seed: u64, label: &str, n: usize, p: usize) -> Array2<f64> {
    let mut rng = rng_for(seed, label);
    Array2::from_shape_simple_fn((n, p), || rng.sample::<f64, _>(StandardNormal))
}

fn parameter_counts() -> Outcome {
    let table = [(14, 100, 11701), (28, 50, 4051), (37, 100, 14001), (49, 200, 50401)];
    let mut passed = true;
    let mut found = Vec::new();
    for (inputs, width, expected) in table {
        let formula = count_parameters_for(inputs, &[width, width, 1]);
        let arch = Architecture {
            input_dim: inputs,
            hidden: vec![width, width],
            output_dim: 1,
            activation: Activation::Softplus,
        };
        let built = Network::glorot(&arch, 0).count_parameters();
        passed &= formula == expected && built == expected;
        found.push(format!("{inputs}:{width},{width},1 -> {built}"));
    }
    outcome(passed, found.join("; "))
}

fn composability() -> Outcome {
    let grid = [500, 5000, 50000];
    let runs: Vec<_> = (0..10u64)
        .into_par_iter()
        .map(|r| {
            let cfg = SynthConfig {
                noise_sd: 0.1,
                regime: Regime::Gaussian,
                ..SynthConfig::new(2, 10, 1, 2, Link::Tanh, derive_seed(0, &format!("acceptance/composability/{r}")))
            };
            verify_composability(&cfg, 2, &grid).expect("valid config")
        })
        .collect();
    let medians: Vec<f64> = (0..grid.len())
        .map(|i| median(runs.iter().map(|r| r.points[i].cosine_similarities[0]).collect()))
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    let last = medians[grid.len() - 1];
    outcome(
        last >= 0.99 && monotone,
        format!("median |cosine| at n = 500, 5000, 50000: {medians:.5?}"),
    )
}

fn estimator_equivalence() -> Outcome {
    let mut worst_helland = 0.0_f64;
    let mut worst_ols = 0.0_f64;
    for i in 0..20u64 {
        let mut rng = rng_for(i, "acceptance/equivalence/shape");
        let n = rng.random_range(20..80);
        let p = rng.random_range(2..9);
        let x = randn(i, "acceptance/equivalence/x", n, p);
        let y = randn(i, "acceptance/equivalence/y", n, 1) + &x.column(0).insert_axis(Axis(1));
        let rank = dpls_core::linalg::rank(x.view());
        for k in 1..=rank {
            let (nipals, _) = fit_nipals(x.view(), y.view(), k).unwrap().raw_coefficients();
            let (helland, _) = helland_coefficients(x.view(), y.view(), k).unwrap().raw_coefficients();
            worst_helland = worst_helland.max(max_abs(&(&nipals - &helland)) / max_abs(&helland));
            if k == rank {
                let ols = fit_ols(x.view(), y.view()).unwrap().coefficients;
                worst_ols = worst_ols.max(max_abs(&(&nipals - &ols)) / max_abs(&ols));
            }
        }
    }
    outcome(
        worst_helland <= 1e-6 && worst_ols <= 1e-6,
        format!("max relative error NIPALS vs Helland {worst_helland:.2e}, K = rank vs OLS {worst_ols:.2e}"),
    )
}

/// A PLS fit on random rows composed with an untrained random network.
fn random_model(label: &str, linear: bool) -> DplsModel {
    let mut rng = rng_for(0, label);
    let p = rng.random_range(3..=7);
    let k = rng.random_range(1..=p.min(3));
    let q = rng.random_range(1..=2);
    let n = 40;
    let x = randn(0, &format!("{label}/x"), n, p);
    let y = randn(0, &format!("{label}/y"), n, q);
    let pls = fit_nipals(x.view(), y.view(), k).unwrap();
    let k = pls.k;
    let mut dims = vec![k];
    dims.extend((0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=8)));
    dims.push(k);
    let act = match (linear, rng.random_bool(0.5)) {
        (true, _) => Activation::Linear,
        (false, true) => Activation::Softplus,
        (false, false) => Activation::Tanh,
    };
    let layers = (0..dims.len() - 1)
        .map(|l| Layer {
            weight: Array2::from_shape_simple_fn((dims[l + 1], dims[l]), || rng.random_range(-1.0..=1.0)),
            bias: Array1::from_shape_simple_fn(dims[l + 1], || rng.random_range(-1.0..=1.0)),
            activation: if l + 2 == dims.len() { Activation::Linear } else { act },
        })
        .collect();
    DplsModel::new(pls, Network::new(layers).unwrap(), ((n - 1) as f64).sqrt()).unwrap()
}

fn predict_at(m: &DplsModel, z: &Array1<f64>) -> Array1<f64> {
    m.predict_standardized(z.view().insert_axis(Axis(0))).unwrap().row(0).to_owned()
}

fn derivative_oracles() -> Outcome {
    let jacobian_err = (0..100)
        .into_par_iter()
        .map(|i| {
            let m = random_model(&format!("acceptance/jacobian/{i}"), false);
            let p = m.pls.n_features();
            let z = randn(i, "acceptance/jacobian/point", 1, p).row(0).to_owned();
            let j = covariate_jacobian(&m, z.view()).unwrap();
            let h = 1e-5;
            let mut fd = Array2::zeros(j.raw_dim());
            for c in 0..p {
                let (mut up, mut dn) = (z.clone(), z.clone());
                up[c] += h;
                dn[c] -= h;
                fd.column_mut(c).assign(&((predict_at(&m, &up) - predict_at(&m, &dn)) / (2.0 * h)));
            }
            max_abs(&(&j - &fd)) / max_abs(&j).max(1e-8)
        })
        .reduce(|| 0.0, f64::max);
    let (hessian_err, symmetric) = (0..50)
        .into_par_iter()
        .map(|i| {
            let m = random_model(&format!("acceptance/hessian/{i}"), false);
            let p = m.pls.n_features();
            let z = randn(i, "acceptance/hessian/point", 1, p).row(0).to_owned();
            let step = 1e-4;
            let mut worst = 0.0_f64;
            let mut sym = true;
            for out in 0..m.pls.n_responses() {
                let h = covariate_hessian(&m, z.view(), out).unwrap();
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
            (worst, sym)
        })
        .reduce(|| (0.0, true), |(w, s), (e, ok)| (w.max(e), s && ok));
    outcome(
        jacobian_err <= 1e-4 && hessian_err <= 1e-3 && symmetric,
        format!(
            "Jacobian max rel error {jacobian_err:.2e} (100 pairs), Hessian max abs error {hessian_err:.2e} (50 pairs), symmetric {symmetric}"
        ),
    )
}

fn attribution_identity() -> Outcome {
    let check = |label: &str, linear: bool| {
        let m = random_model(label, linear);
        let v = randn(0, &format!("{label}/rows"), 1000, m.k()) * 0.2;
        let rows = taylor_attribution(&m, v.view()).unwrap();
        let mut identity = 0.0_f64;
        let mut curvature = 0.0_f64;
        for a in &rows {
            for j in 0..a.total.len() {
                let scale = [a.total[j], a.alpha[j], a.linear[j], a.quadratic[j]]
                    .iter()
                    .fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
                let sum = a.alpha[j] + a.linear[j] + a.quadratic[j] + a.hot[j];
                identity = identity.max((sum - a.total[j]).abs() / scale);
                curvature = curvature.max(a.quadratic[j].abs()).max(a.hot[j].abs());
            }
        }
        (identity, curvature)
    };
    let (identity, _) = check("acceptance/attribution/nonlinear", false);
    let (linear_identity, curvature) = check("acceptance/attribution/linear", true);
    let identity = identity.max(linear_identity);
    outcome(
        identity <= 1e-12 && curvature <= 1e-10,
        format!("identity residual / scale {identity:.2e} on 1000 rows, linear-net curvature {curvature:.2e}"),
    )
}

fn total_r2_identities() -> Outcome {
    let actual = randn(6, "acceptance/r2", 200, 1).column(0).to_owned();
    let r2 = |pred: &Array1<f64>| total_r2(pred.view(), actual.view(), MIN_TOTAL_R2_OBS).unwrap();
    let perfect = r2(&actual);
    let zero = r2(&Array1::zeros(actual.len()));
    let half = r2(&(&actual * 0.5));
    outcome(
        (perfect - 1.0).abs() <= 1e-12 && zero.abs() <= 1e-12 && (half - 0.75).abs() <= 1e-12,
        format!("perfect {perfect}, zero {zero}, half-scale {half}"),
    )
}

fn linf_out(report: &BacktestReport) -> f64 {
    report
        .periods
        .iter()
        .filter_map(|m| m.out.as_ref())
        .map(|o| o.linf)
        .fold(0.0, f64::max)
}

fn dpls_beats_pls() -> Outcome {
    let rows: Vec<(f64, f64, f64, f64)> = (0..10u64)
        .into_par_iter()
        .map(|s| {
            let synth = SynthConfig {
                noise_sd: 0.1,
                latent_scale: 2.0,
                ..SynthConfig::new(300, 15, 1, 3, Link::Tanh, s)
            };
            let (panel, _) = synthetic_panel(&synth, 20).unwrap();
            let base = BacktestConfig {
                k_rule: KRule::Cv { k_max: 10, folds: 5 },
                net: NetSpec {
                    hidden: vec![32, 32],
                    activation: Activation::Tanh,
                },
                train: TrainConfig {
                    epochs: 100,
                    batch_size: 32,
                    learning_rate: 1e-2,
                    ..Default::default()
                },
                portfolio_sizes: vec![10],
                seed: s,
                ..Default::default()
            };
            let pls = run_backtest(&panel, &BacktestConfig { method: Method::Pls, ..base.clone() }).unwrap();
            let dpls = run_backtest(&panel, &BacktestConfig { method: Method::Dpls, ..base }).unwrap();
            (
                pls.totals.r2_total_out.unwrap(),
                dpls.totals.r2_total_out.unwrap(),
                linf_out(&pls),
                linf_out(&dpls),
            )
        })
        .collect();
    let gain = median(rows.iter().map(|r| r.1 - r.0).collect());
    let linf_pls = median(rows.iter().map(|r| r.2).collect());
    let linf_dpls = median(rows.iter().map(|r| r.3).collect());
    outcome(
        gain > 0.0 && linf_dpls <= linf_pls,
        format!("median R2_out(DPLS) - R2_out(PLS) {gain:.4}, median Linf PLS {linf_pls:.4} vs DPLS {linf_dpls:.4}"),
    )
}

fn shrinkage_diagnostic() -> Outcome {
    let mut full = 0.0_f64;
    let mut cross = 0.0_f64;
    for i in 0..10u64 {
        let x = randn(i, "acceptance/shrinkage/x", 60, 6);
        let y = randn(i, "acceptance/shrinkage/y", 60, 1).column(0).to_owned() + x.column(1);
        let rank = dpls_core::linalg::rank(x.view());
        for k in 1..=rank {
            let r = scale_factors(x.view(), y.view(), k).unwrap();
            for j in 0..r.rank() {
                if let (Some(f), false) = (r.factors[j], r.degenerate[j]) {
                    cross = cross.max((f - r.closed_form[j]).abs());
                    if k == rank {
                        full = full.max((f - 1.0).abs());
                    }
                }
            }
        }
    }

    // Response along the leading eigendirection of the predictor correlation.
    let x = randn(8, "acceptance/shrinkage/aligned", 80, 5);
    let mean = x.mean_axis(Axis(0)).unwrap();
    let sd = x.std_axis(Axis(0), 1.0);
    let z = (&x - &mean) / &sd;
    let corr = z.t().dot(&z) / 79.0;
    let eig = dpls_core::linalg::sym_eigen(corr.view());
    let y = z.dot(&eig.vectors.column(0));
    let r = scale_factors(x.view(), y.view(), 1).unwrap();
    let f1 = r.factors[0].unwrap_or(f64::NAN);
    let others = r.factors[1..].iter().flatten().fold(0.0_f64, |m, f| m.max(f.abs()));
    outcome(
        full <= 1e-6 && (f1 - 1.0).abs() <= 1e-6 && others <= 1e-8 && cross <= 1e-5,
        format!(
            "full-K max |f-1| {full:.2e}, aligned f1 {f1:.10}, other defined factors {others:.2e}, closed form vs ratio {cross:.2e}"
        ),
    )
}

fn backtest_hygiene() -> Outcome {
    let synth = SynthConfig {
        noise_sd: 0.1,
        ..SynthConfig::new(80, 6, 1, 2, Link::Tanh, 9)
    };
    let (panel, _) = synthetic_panel(&synth, 10).unwrap();
    let t = 5;
    let mut corrupted = panel.clone();
    corrupted.cross_sections[t + 1].features.fill(1e6);
    corrupted.cross_sections[t + 1].returns.fill(-1e6);
    let mut sentinel = true;
    for method in [Method::Ols, Method::Lasso, Method::Pls, Method::Dpls] {
        let cfg = BacktestConfig {
            method,
            net: NetSpec {
                hidden: vec![8],
                activation: Activation::Tanh,
            },
            train: TrainConfig {
                epochs: 5,
                ..Default::default()
            },
            k_rule: KRule::Cv { k_max: 4, folds: 3 },
            portfolio_sizes: vec![5],
            ..Default::default()
        };
        let fit = |p: &PanelDataset| {
            let s = &p.cross_sections[t];
            let m = fit_period(s, &cfg, tune_period(s, &cfg).unwrap()).unwrap();
            serde_json::to_string(&m).unwrap()
        };
        sentinel &= fit(&panel) == fit(&corrupted);
        let a = run_backtest(&panel, &cfg).unwrap();
        let b = run_backtest(&corrupted, &cfg).unwrap();
        for i in 0..=t {
            let (x, y) = (&a.periods[i], &b.periods[i]);
            sentinel &= x.k_used == y.k_used
                && x.lambda.map(f64::to_bits) == y.lambda.map(f64::to_bits)
                && x.linf_in.map(f64::to_bits) == y.linf_in.map(f64::to_bits)
                && x.mse_in.map(f64::to_bits) == y.mse_in.map(f64::to_bits)
                && x.r2_in.map(f64::to_bits) == y.r2_in.map(f64::to_bits);
            if i < t {
                sentinel &= x.out == y.out;
            }
        }
    }

    let report = run_backtest(
        &panel,
        &BacktestConfig {
            k_rule: KRule::Fixed { k: 2 },
            portfolio_sizes: vec![1, 10, 80],
            ..Default::default()
        },
    )
    .unwrap();
    let mut weight_err = 0.0_f64;
    for p in &report.portfolios {
        let s = &p.series;
        for (i, sel) in s.selections.iter().enumerate() {
            let cs = panel.cross_sections.iter().find(|c| c.period == s.periods[i]).unwrap();
            let w = 1.0 / sel.len() as f64;
            let weights: Vec<f64> = sel.iter().map(|_| w).collect();
            let ret: f64 = sel.iter().zip(&weights).map(|(&r, w)| w * cs.returns[r]).sum();
            weight_err = weight_err
                .max((weights.iter().sum::<f64>() - 1.0).abs())
                .max((ret - s.returns[i]).abs());
            if sel.len() != s.size.min(cs.len()) {
                weight_err = f64::INFINITY;
            }
        }
    }

    let (periods, assets) = (60usize, 100usize);
    let ids: Vec<String> = (0..assets).map(|i| format!("S{i:04}")).collect();
    let preds: Vec<PeriodPrediction> = (0..periods)
        .map(|i| PeriodPrediction {
            period: i as i64,
            index: i,
            asset_ids: ids.clone(),
            predicted: Array1::zeros(assets),
            realized: randn(1000 + i as u64, "backtest-properties", assets, 1).column(0).to_owned() * 0.05,
        })
        .collect();
    let irs: Vec<f64> = (0..50)
        .map(|seed| {
            let s = build_portfolio(&preds, 10, seed).unwrap();
            information_ratio(&s.random_returns, &s.benchmark, false).unwrap()
        })
        .collect();
    let ir = median(irs);
    let band = 2.0 / ((50 * periods) as f64).sqrt();
    outcome(
        sentinel && weight_err <= 1e-12 && ir.abs() <= band,
        format!(
            "sentinel unchanged {sentinel}, weight/return error {weight_err:.1e}, random IR median {ir:.4} (band {band:.4})"
        ),
    )
}

fn determinism_and_serialization() -> Outcome {
    let synth = SynthConfig {
        noise_sd: 0.1,
        ..SynthConfig::new(60, 5, 1, 2, Link::Tanh, 10)
    };
    let (panel, _) = synthetic_panel(&synth, 6).unwrap();
    let cfg = BacktestConfig {
        method: Method::Dpls,
        k_rule: KRule::Cv { k_max: 3, folds: 3 },
        net: NetSpec {
            hidden: vec![8, 8],
            activation: Activation::Softplus,
        },
        train: TrainConfig {
            epochs: 10,
            ..Default::default()
        },
        portfolio_sizes: vec![5],
        k_sweep_max: Some(3),
        seed: 4,
        ..Default::default()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_report(&run_backtest(&panel, &cfg).unwrap(), d.path()).unwrap();
    }
    let mut identical = true;
    for f in ["report.json", "metrics.csv", "portfolio.csv", "tilts.csv", "ksweep.csv"] {
        identical &= std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap();
    }
    let panel_file = dirs[0].path().join("panel.csv");
    save_panel(&panel, &panel_file).unwrap();
    let reloaded = load_panel(&panel_file, &PanelSchema::default()).unwrap();
    identical &= reloaded.cross_sections == panel.cross_sections;

    let s = &panel.cross_sections[0];
    let (x, y) = (s.features.view(), s.target());
    let train = TrainConfig {
        epochs: 10,
        seed: 3,
        ..Default::default()
    };
    let net = NetSpec {
        hidden: vec![8],
        activation: Activation::Tanh,
    };
    let models = [
        FittedModel::Ols(fit_ols(x, y.view()).unwrap()),
        FittedModel::Lasso(fit_lasso(x, y.column(0), 0.01).unwrap()),
        FittedModel::Pls(fit_nipals(x, y.view(), 3).unwrap()),
        FittedModel::Dpls(fit_dpls(x, y.view(), 3, &net, &train).unwrap()),
    ];
    let probe = &panel.cross_sections[1].features;
    let mut roundtrip = 0.0_f64;
    for m in &models {
        let back: FittedModel = serde_json::from_str(&serde_json::to_string(m).unwrap()).unwrap();
        let diff = m.predict(probe.view()).unwrap() - back.predict(probe.view()).unwrap();
        roundtrip = roundtrip.max(diff.iter().fold(0.0_f64, |a, v| a.max(v.abs())));
    }
    let again = FittedModel::Dpls(fit_dpls(x, y.view(), 3, &net, &train).unwrap());
    identical &= serde_json::to_string(&again).unwrap() == serde_json::to_string(&models[3]).unwrap();
    outcome(
        identical && roundtrip <= 1e-12,
        format!("repeat runs byte-identical {identical}, max round-trip prediction change {roundtrip:.1e}"),
    )
}

fn main() {
    let criteria: [(&str, u64, fn() -> Outcome); 10] = [
        ("parameter counts", 1, parameter_counts),
        ("coefficient direction consistency", 120, composability),
        ("NIPALS / closed-form / OLS equivalence", 30, estimator_equivalence),
        ("derivative oracles", 60, derivative_oracles),
        ("attribution identity", 30, attribution_identity),
        ("total R2 identities", 1, total_r2_identities),
        ("DPLS beats PLS on a nonlinear panel", 600, dpls_beats_pls),
        ("shrinkage diagnostic", 30, shrinkage_diagnostic),
        ("backtest hygiene", 120, backtest_hygiene),
        ("determinism and serialization", 60, determinism_and_serialization),
    ];
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let (passed, detail) = match result {
            Ok(o) => (o.passed && elapsed <= Duration::from_secs(*budget), o.detail),
            Err(_) => (false, "panicked".to_string()),
        };
        failures += usize::from(!passed);
        println!(
            "{} {:>2}. {name} [{:.2}s / {budget}s]: {detail}",
            if passed { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
