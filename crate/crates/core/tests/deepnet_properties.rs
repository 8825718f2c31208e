use dpls_core::deepnet::{train_adam, Activation, Architecture, Init, Layer, Network, TrainConfig};
use dpls_core::seed::rng_for;
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

/// Net with every weight and bias uniform in [-1, 1].
fn random_net(seed: u64, dims: &[usize], act: Activation) -> Network {
    let mut rng = rng_for(seed, "random-net");
    let layers = (0..dims.len() - 1)
        .map(|l| Layer {
            weight: Array2::from_shape_simple_fn((dims[l + 1], dims[l]), || rng.random_range(-1.0..=1.0)),
            bias: Array1::from_shape_simple_fn(dims[l + 1], || rng.random_range(-1.0..=1.0)),
            activation: if l + 2 == dims.len() { Activation::Linear } else { act },
        })
        .collect();
    Network::new(layers).unwrap()
}

fn random_point(seed: u64, d: usize) -> Array1<f64> {
    let mut rng = rng_for(seed, "random-point");
    Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal))
}

fn eval(net: &Network, v: &Array1<f64>) -> Array1<f64> {
    net.forward_one(v.view()).unwrap()
}

fn fd_jacobian(net: &Network, v: &Array1<f64>, h: f64) -> Array2<f64> {
    let d = v.len();
    let mut j = Array2::zeros((net.output_dim(), d));
    for c in 0..d {
        let (mut up, mut dn) = (v.clone(), v.clone());
        up[c] += h;
        dn[c] -= h;
        let diff = (eval(net, &up) - eval(net, &dn)) / (2.0 * h);
        j.column_mut(c).assign(&diff);
    }
    j
}

fn fd_hessian(net: &Network, v: &Array1<f64>, k: usize, h: f64) -> Array2<f64> {
    let d = v.len();
    let f = |x: &Array1<f64>| eval(net, x)[k];
    let mut out = Array2::zeros((d, d));
    for a in 0..d {
        for b in 0..d {
            let shift = |sa: f64, sb: f64| {
                let mut x = v.clone();
                x[a] += sa * h;
                x[b] += sb * h;
                f(&x)
            };
            out[[a, b]] = (shift(1.0, 1.0) - shift(1.0, -1.0) - shift(-1.0, 1.0) + shift(-1.0, -1.0)) / (4.0 * h * h);
        }
    }
    out
}

fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[test]
fn jacobian_matches_central_differences() {
    let mut worst = 0.0_f64;
    for pair in 0..100u64 {
        let act = if pair % 2 == 0 { Activation::Softplus } else { Activation::Tanh };
        let net = random_net(pair, &[4, 7, 5, 2], act);
        let v = random_point(pair + 10_000, 4);
        let j = net.jacobian(v.view()).unwrap();
        let fd = fd_jacobian(&net, &v, 1e-5);
        let rel = max_abs(&(&j - &fd)) / max_abs(&j).max(1e-8);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "worst relative error {worst}");
}

#[test]
fn hessian_matches_finite_differences_and_is_symmetric() {
    for pair in 0..50u64 {
        let act = if pair % 2 == 0 { Activation::Softplus } else { Activation::Tanh };
        let net = random_net(pair + 500, &[3, 6, 6, 2], act);
        let v = random_point(pair + 20_000, 3);
        let raw = net.hessian_tensor(v.view()).unwrap();
        for k in 0..2 {
            let hk = raw.index_axis(ndarray::Axis(0), k).to_owned();
            assert!(max_abs(&(&hk - &hk.t())) <= 1e-6);
            let h = net.hessian(v.view(), k).unwrap();
            assert_eq!(h, h.t());
            let fd = fd_hessian(&net, &v, k, 1e-4);
            let err = max_abs(&(&h - &fd));
            assert!(err <= 1e-3, "pair {pair} output {k}: {err}");
        }
    }
}

#[test]
fn linear_nets_collapse_to_one_affine_map() {
    let net = random_net(9, &[5, 8, 6, 3], Activation::Linear);
    let mut w = Array2::<f64>::eye(5);
    let mut b = Array1::<f64>::zeros(5);
    for l in &net.layers {
        b = l.weight.dot(&b) + &l.bias;
        w = l.weight.dot(&w);
    }
    for i in 0..100 {
        let v = random_point(i, 5);
        let direct = w.dot(&v) + &b;
        let out = eval(&net, &v);
        let scale = direct.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
        assert!((&out - &direct).iter().all(|e| e.abs() <= 1e-12 * scale));
        assert_eq!(net.jacobian(v.view()).unwrap(), {
            let mut j = Array2::<f64>::eye(5);
            for l in &net.layers {
                j = l.weight.dot(&j);
            }
            j
        });
    }
}

#[test]
fn lipschitz_bound_holds_on_segments() {
    let net = random_net(77, &[2, 10, 10, 1], Activation::Softplus);
    let mut rng = rng_for(78, "segments");
    let mut pts = Vec::new();
    for _ in 0..40 {
        pts.push(Array1::from_shape_simple_fn(2, || rng.random_range(-2.0..=2.0)));
    }
    // sup of ‖J‖ over a dense grid covering the box
    let mut sup = 0.0_f64;
    for a in 0..=80 {
        for b in 0..=80 {
            let v = Array1::from(vec![-2.0 + 0.05 * a as f64, -2.0 + 0.05 * b as f64]);
            let j = net.jacobian(v.view()).unwrap();
            sup = sup.max(j.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }
    assert!(sup.is_finite());
    for x1 in &pts {
        for x2 in &pts {
            let gap = (eval(&net, x1)[0] - eval(&net, x2)[0]).abs();
            let dist = (x1 - x2).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(gap <= sup * dist * 1.01 + 1e-9);
        }
    }
}

#[test]
fn learns_linear_target_to_least_squares_slope() {
    let n = 200;
    let v = Array2::from_shape_vec((n, 1), random_point(1, n).to_vec()).unwrap();
    let u = &v * 2.0;
    let net = Network::glorot(
        &Architecture {
            input_dim: 1,
            hidden: vec![],
            output_dim: 1,
            activation: Activation::Linear,
        },
        4,
    );
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 32,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let out = train_adam(&net, v.view(), u.view(), &cfg).unwrap();
    // least-squares oracle for u = w·v + b on noiseless data is w = 2
    let ls = v.column(0).dot(&u.column(0)) / v.column(0).dot(&v.column(0));
    assert!((out.net.layers[0].weight[[0, 0]] - ls).abs() <= 1e-2);
    assert!(!out.non_convergent);
}

#[test]
fn dominant_l1_penalty_shrinks_all_weights() {
    let n = 150;
    let v = Array2::from_shape_vec((n, 2), random_point(5, 2 * n).to_vec()).unwrap();
    let noise = random_point(6, n);
    let u = (v.column(0).to_owned() * 0.8 + noise * 0.5).insert_axis(ndarray::Axis(1));
    let arch = Architecture {
        input_dim: 2,
        hidden: vec![4],
        output_dim: 1,
        activation: Activation::Softplus,
    };
    let cfg = TrainConfig {
        epochs: 400,
        batch_size: 50,
        l1_penalty: 1e3,
        ..TrainConfig::default()
    };
    let out = train_adam(&Network::glorot(&arch, 7), v.view(), u.view(), &cfg).unwrap();
    for l in &out.net.layers {
        assert!(l.weight.iter().all(|w| w.abs() < 1e-2), "{:?}", l.weight);
    }
}

#[test]
fn training_is_deterministic() {
    let v = Array2::from_shape_vec((80, 3), random_point(8, 240).to_vec()).unwrap();
    let u = v.mapv(f64::tanh).sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
    let arch = Architecture {
        input_dim: 3,
        hidden: vec![8, 8],
        output_dim: 1,
        activation: Activation::Softplus,
    };
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 16,
        seed: 11,
        init: Init::UniformGlorot,
        ..TrainConfig::default()
    };
    let a = train_adam(&Network::glorot(&arch, 2), v.view(), u.view(), &cfg).unwrap();
    let b = train_adam(&Network::glorot(&arch, 2), v.view(), u.view(), &cfg).unwrap();
    assert_eq!(a.loss_curve, b.loss_curve);
    assert_eq!(a.net, b.net);
    assert!(a.loss_curve.last().unwrap() < &a.initial_mse);
}

#[test]
fn divergence_reports_last_finite_state() {
    let v = Array2::from_shape_vec((40, 1), random_point(3, 40).to_vec()).unwrap();
    let u = v.mapv(|x| 1e300 * x);
    let arch = Architecture {
        input_dim: 1,
        hidden: vec![3],
        output_dim: 1,
        activation: Activation::Tanh,
    };
    let cfg = TrainConfig {
        epochs: 5,
        learning_rate: 1e10,
        ..TrainConfig::default()
    };
    match train_adam(&Network::glorot(&arch, 0), v.view(), u.view(), &cfg) {
        Err(dpls_core::deepnet::NetError::NonFiniteLoss { last_finite, .. }) => {
            assert!(last_finite.layers.iter().all(|l| l.weight.iter().all(|w| w.is_finite())));
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn json_round_trip_is_exact(seed in 0u64..100_000, width in 1usize..12) {
        let net = random_net(seed, &[3, width, width, 2], Activation::Softplus);
        let json = serde_json::to_string(&net).unwrap();
        let back: Network = serde_json::from_str(&json).unwrap();
        let v = Array2::from_shape_vec((5, 3), random_point(seed, 15).to_vec()).unwrap();
        let a = net.forward(v.view()).unwrap();
        let b = back.forward(v.view()).unwrap();
        prop_assert!((&a - &b).iter().all(|e| e.abs() <= 1e-15));
        prop_assert!(json.contains("\"schema_version\":\"1.0.0\""));
    }
}
