//! Feedforward networks with smooth activations.
//!
//! A network is a chain of semi-affine layers `z = σ(W z_prev + b)`. All
//! activations are twice differentiable, so besides the forward pass the
//! module evaluates the exact input Jacobian and input Hessian of the
//! network output. Training is minibatch Adam on mean-squared error with an
//! optional L1 penalty on the weights; gradients come from hand-written
//! backpropagation.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_for;
use crate::{schema_compatible, SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("training loss became non-finite in epoch {epoch}")]
    NonFiniteLoss {
        epoch: usize,
        /// Parameters at the end of the last epoch with a finite loss.
        last_finite: Box<Network>,
        loss_curve: Vec<f64>,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Tanh,
    Linear,
}

impl Activation {
    pub fn value(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => logistic(x),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn second_derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                let s = logistic(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Linear => 0.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "softplus" => Ok(Activation::Softplus),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(format!("unknown activation '{other}' (softplus, tanh, linear)")),
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Layer widths and the hidden activation. The output layer is always
/// linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_dim: 1,
            hidden: vec![100, 100],
            output_dim: 1,
            activation: Activation::Softplus,
        }
    }
}

impl Architecture {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(&self.hidden);
        d.push(self.output_dim);
        d
    }

    pub fn activations(&self) -> Vec<Activation> {
        let mut a = vec![self.activation; self.hidden.len()];
        a.push(Activation::Linear);
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkJson", into = "NetworkJson")]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// On-disk form of a network; weights are stored row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkJson {
    pub schema_version: String,
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<Network> for NetworkJson {
    fn from(net: Network) -> Self {
        let mut dims = vec![net.input_dim()];
        dims.extend(net.layers.iter().map(Layer::output_dim));
        NetworkJson {
            schema_version: SCHEMA_VERSION.to_string(),
            dims,
            activations: net.layers.iter().map(|l| l.activation).collect(),
            weights: net.layers.iter().map(|l| l.weight.iter().copied().collect()).collect(),
            biases: net.layers.iter().map(|l| l.bias.to_vec()).collect(),
        }
    }
}

impl TryFrom<NetworkJson> for Network {
    type Error = NetError;

    fn try_from(j: NetworkJson) -> Result<Self, NetError> {
        if !schema_compatible(&j.schema_version) {
            return Err(NetError::InvalidNetwork(format!("unsupported schema version {}", j.schema_version)));
        }
        let depth = j.dims.len().saturating_sub(1);
        if depth == 0 || j.activations.len() != depth || j.weights.len() != depth || j.biases.len() != depth {
            return Err(NetError::InvalidNetwork(format!(
                "{} dims, {} activations, {} weight and {} bias blocks",
                j.dims.len(),
                j.activations.len(),
                j.weights.len(),
                j.biases.len()
            )));
        }
        let mut layers = Vec::with_capacity(depth);
        for l in 0..depth {
            let (inp, out) = (j.dims[l], j.dims[l + 1]);
            let weight = Array2::from_shape_vec((out, inp), j.weights[l].clone())
                .map_err(|e| NetError::InvalidNetwork(format!("layer {l} weights: {e}")))?;
            if j.biases[l].len() != out {
                return Err(NetError::InvalidNetwork(format!("layer {l} bias length {}", j.biases[l].len())));
            }
            layers.push(Layer {
                weight,
                bias: Array1::from(j.biases[l].clone()),
                activation: j.activations[l],
            });
        }
        Network::new(layers)
    }
}

impl Network {
    /// Checks that layer widths chain and all parameters are finite.
    pub fn new(layers: Vec<Layer>) -> Result<Self, NetError> {
        if layers.is_empty() {
            return Err(NetError::InvalidNetwork("no layers".into()));
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(NetError::InvalidNetwork(format!("layer {l} bias length")));
            }
            if l > 0 && layers[l - 1].output_dim() != layer.input_dim() {
                return Err(NetError::InvalidNetwork(format!(
                    "layer {l} expects {} inputs, previous layer gives {}",
                    layer.input_dim(),
                    layers[l - 1].output_dim()
                )));
            }
            if layer.weight.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(NetError::InvalidNetwork(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Uniform Glorot initialization, biases zero.
    pub fn glorot(arch: &Architecture, seed: u64) -> Self {
        let dims = arch.dims();
        let acts = arch.activations();
        let mut rng = rng_for(seed, "deepnet/init");
        let layers = (0..acts.len())
            .map(|l| {
                let (inp, out) = (dims[l], dims[l + 1]);
                let limit = (6.0 / (inp + out) as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_simple_fn((out, inp), || rng.random_range(-limit..=limit)),
                    bias: Array1::zeros(out),
                    activation: acts[l],
                }
            })
            .collect();
        Self { layers }
    }

    /// Glorot initialization with the first `min(K, width)` first-layer
    /// units set to pass score `i` through with the PLS inner coefficient
    /// `inner[i]`.
    pub fn warm_start(arch: &Architecture, inner: ArrayView1<'_, f64>, seed: u64) -> Self {
        let mut net = Self::glorot(arch, seed);
        let first = &mut net.layers[0].weight;
        let units = first.nrows().min(first.ncols()).min(inner.len());
        for i in 0..units {
            first.row_mut(i).fill(0.0);
            first[[i, i]] = inner[i];
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    fn check_input(&self, cols: usize) -> Result<(), NetError> {
        if cols != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim(),
                actual: cols,
            });
        }
        Ok(())
    }

    /// Row-wise forward pass, `M × input_dim → M × output_dim`.
    pub fn forward(&self, v: ArrayView2<'_, f64>) -> Result<Array2<f64>, NetError> {
        self.check_input(v.ncols())?;
        let mut z = v.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = z.dot(&layer.weight.t()) + &layer.bias;
            a.mapv_inplace(|x| layer.activation.value(x));
            if a.iter().any(|x| !x.is_finite()) {
                return Err(NetError::NonFiniteActivation { layer: l });
            }
            z = a;
        }
        Ok(z)
    }

    pub fn forward_one(&self, v: ArrayView1<'_, f64>) -> Result<Array1<f64>, NetError> {
        let m = v.insert_axis(Axis(0));
        Ok(self.forward(m)?.row(0).to_owned())
    }

    /// Pre-activations of every layer at a single point.
    fn pre_activations(&self, v: ArrayView1<'_, f64>) -> Vec<Array1<f64>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut z = v.to_owned();
        for layer in &self.layers {
            let a = layer.weight.dot(&z) + &layer.bias;
            z = a.mapv(|x| layer.activation.value(x));
            out.push(a);
        }
        out
    }

    /// Input Jacobian `∂G/∂v`, `output_dim × input_dim`.
    pub fn jacobian(&self, v: ArrayView1<'_, f64>) -> Result<Array2<f64>, NetError> {
        self.check_input(v.len())?;
        let pre = self.pre_activations(v);
        let mut j = Array2::<f64>::eye(self.input_dim());
        for (layer, a) in self.layers.iter().zip(&pre) {
            let mut next = layer.weight.dot(&j);
            for (mut row, &x) in next.rows_mut().into_iter().zip(a) {
                row *= layer.activation.derivative(x);
            }
            j = next;
        }
        Ok(j)
    }

    /// Input Hessians of every output before symmetrization,
    /// `output_dim × input_dim × input_dim`.
    ///
    /// For unit `i` of layer `ℓ` with pre-activation `aᵢ` and `gᵢ` the `i`-th
    /// row of `Wℓ·J_{ℓ-1}`:
    /// `Hᵢ = σ''(aᵢ)·gᵢgᵢᵀ + σ'(aᵢ)·Σₘ Wℓ[i,m]·H_{ℓ-1,m}`.
    pub fn hessian_tensor(&self, v: ArrayView1<'_, f64>) -> Result<Array3<f64>, NetError> {
        self.check_input(v.len())?;
        let d = self.input_dim();
        let pre = self.pre_activations(v);
        let mut j = Array2::<f64>::eye(d);
        let mut h = Array3::<f64>::zeros((d, d, d));
        for (layer, a) in self.layers.iter().zip(&pre) {
            let g = layer.weight.dot(&j);
            let out = layer.output_dim();
            let mut next_h = Array3::<f64>::zeros((out, d, d));
            let prev = h.view().into_shape_with_order((h.shape()[0], d * d)).expect("contiguous");
            let mixed = layer.weight.dot(&prev);
            for i in 0..out {
                let s1 = layer.activation.derivative(a[i]);
                let s2 = layer.activation.second_derivative(a[i]);
                let gi = g.row(i);
                let mut hi = next_h.index_axis_mut(Axis(0), i);
                for r in 0..d {
                    for c in 0..d {
                        hi[[r, c]] = s2 * gi[r] * gi[c] + s1 * mixed[[i, r * d + c]];
                    }
                }
            }
            let mut next_j = g;
            for (mut row, &x) in next_j.rows_mut().into_iter().zip(a) {
                row *= layer.activation.derivative(x);
            }
            j = next_j;
            h = next_h;
        }
        Ok(h)
    }

    /// Symmetrized input Hessian of output `k`.
    pub fn hessian(&self, v: ArrayView1<'_, f64>, k: usize) -> Result<Array2<f64>, NetError> {
        if k >= self.output_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.output_dim(),
                actual: k,
            });
        }
        let h = self.hessian_tensor(v)?;
        let hk = h.index_axis(Axis(0), k);
        Ok((&hk + &hk.t()) * 0.5)
    }

    pub fn count_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.iter().map(|w| w.abs()).sum::<f64>()).sum()
    }

    pub fn mse(&self, v: ArrayView2<'_, f64>, u: ArrayView2<'_, f64>) -> Result<f64, NetError> {
        let pred = self.forward(v)?;
        Ok(mean_squared(&pred, u))
    }
}

pub fn count_parameters(net: &Network) -> usize {
    net.count_parameters()
}

/// Parameter count of a fully connected net with the given widths.
pub fn count_parameters_for(input_dim: usize, widths: &[usize]) -> usize {
    let mut prev = input_dim;
    widths
        .iter()
        .map(|&w| {
            let c = prev * w + w;
            prev = w;
            c
        })
        .sum()
}

fn mean_squared(pred: &Array2<f64>, u: ArrayView2<'_, f64>) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter().zip(u.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    UniformGlorot,
    PlsWarmStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub l1_penalty: f64,
    pub seed: u64,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            l1_penalty: 0.0,
            seed: 0,
            init: Init::UniformGlorot,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if !(self.l1_penalty >= 0.0 && self.l1_penalty.is_finite()) {
            return bad("l1_penalty must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    /// Training MSE before the first update.
    pub initial_mse: f64,
    /// Training MSE after each epoch.
    pub loss_curve: Vec<f64>,
    /// Set when the final MSE exceeds the initial one.
    pub non_convergent: bool,
}

struct Moments {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    step: i32,
}

impl Moments {
    fn new(net: &Network) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// Gradients of the batch MSE with respect to every weight and bias.
fn backprop(net: &Network, v: &Array2<f64>, u: &Array2<f64>) -> Vec<(Array2<f64>, Array1<f64>)> {
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut pres = Vec::with_capacity(net.layers.len());
    let mut z = v.clone();
    for layer in &net.layers {
        let a = z.dot(&layer.weight.t()) + &layer.bias;
        let next = a.mapv(|x| layer.activation.value(x));
        inputs.push(z);
        pres.push(a);
        z = next;
    }
    let scale = 2.0 / z.len() as f64;
    let mut delta = (&z - u) * scale;
    let mut grads = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); net.layers.len()];
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let act = layer.activation;
        delta.zip_mut_with(&pres[l], |d, &a| *d *= act.derivative(a));
        let gw = delta.t().dot(&inputs[l]);
        let gb = delta.sum_axis(Axis(0));
        if l > 0 {
            delta = delta.dot(&layer.weight);
        }
        grads[l] = (gw, gb);
    }
    grads
}

fn adam_step(net: &mut Network, grads: &[(Array2<f64>, Array1<f64>)], mom: &mut Moments, cfg: &TrainConfig) {
    mom.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(mom.step);
    let c2 = 1.0 - cfg.beta2.powi(mom.step);
    let lr = cfg.learning_rate;
    let (b1, b2, eps, lam) = (cfg.beta1, cfg.beta2, cfg.epsilon, cfg.l1_penalty);
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads[l];
        let (mw, mb) = &mut mom.m[l];
        let (vw, vb) = &mut mom.v[l];
        ndarray::Zip::from(&mut layer.weight)
            .and(gw)
            .and(mw)
            .and(vw)
            .for_each(|w, &g, m, v| {
                let g = g + lam * signum0(*w);
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        ndarray::Zip::from(&mut layer.bias)
            .and(gb)
            .and(mb)
            .and(vb)
            .for_each(|b, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *b -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Minibatch Adam on `MSE + λ₁·Σ|W|`, starting from `net`.
///
/// Batch order in epoch `e` is a shuffle drawn from the stream
/// `(cfg.seed, "deepnet/epoch/e")`, so a run is reproducible from its
/// config alone.
pub fn train_adam(
    net: &Network,
    v: ArrayView2<'_, f64>,
    u: ArrayView2<'_, f64>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    net.check_input(v.ncols())?;
    if u.nrows() != v.nrows() {
        return Err(NetError::DimensionMismatch {
            expected: v.nrows(),
            actual: u.nrows(),
        });
    }
    if u.ncols() != net.output_dim() {
        return Err(NetError::DimensionMismatch {
            expected: net.output_dim(),
            actual: u.ncols(),
        });
    }
    let n = v.nrows();
    let initial_mse = net.mse(v, u)?;
    let mut current = net.clone();
    let mut mom = Moments::new(&current);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let snapshot = current.clone();
        let mut rng = rng_for(cfg.seed, &format!("deepnet/epoch/{epoch}"));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let vb = v.select(Axis(0), batch);
            let ub = u.select(Axis(0), batch);
            let grads = backprop(&current, &vb, &ub);
            adam_step(&mut current, &grads, &mut mom, cfg);
        }
        let loss = current
            .forward(v)
            .map(|p| mean_squared(&p, u))
            .unwrap_or(f64::NAN);
        let params_finite = current
            .layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()));
        if !loss.is_finite() || !params_finite {
            return Err(NetError::NonFiniteLoss {
                epoch,
                last_finite: Box::new(snapshot),
                loss_curve,
            });
        }
        loss_curve.push(loss);
    }
    let last = *loss_curve.last().expect("at least one epoch");
    Ok(TrainOutcome {
        net: current,
        initial_mse,
        non_convergent: last > initial_mse,
        loss_curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_net(w: f64, b: f64, act: Activation, out_w: f64) -> Network {
        Network::new(vec![
            Layer {
                weight: array![[w]],
                bias: array![b],
                activation: act,
            },
            Layer {
                weight: array![[out_w]],
                bias: array![0.0],
                activation: Activation::Linear,
            },
        ])
        .unwrap()
    }

    #[test]
    fn softplus_at_zero_is_ln2() {
        let net = Network::new(vec![Layer {
            weight: array![[1.0]],
            bias: array![0.0],
            activation: Activation::Softplus,
        }])
        .unwrap();
        let out = net.forward(array![[0.0]].view()).unwrap();
        assert!((out[[0, 0]] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut net = Network::glorot(
            &Architecture {
                input_dim: 3,
                hidden: vec![4],
                output_dim: 2,
                activation: Activation::Tanh,
            },
            1,
        );
        for l in &mut net.layers {
            l.weight.fill(0.0);
        }
        net.layers[1].bias = array![0.7, -1.5];
        let out = net.forward(array![[1.0, 2.0, 3.0], [-4.0, 0.5, 9.0]].view()).unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.7, -1.5]);
        }
    }

    #[test]
    fn tanh_jacobian_at_origin() {
        let net = scalar_net(1.0, 0.0, Activation::Tanh, 1.0);
        let j = net.jacobian(array![0.0].view()).unwrap();
        assert!((j[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softplus_unit_hessian() {
        let (a, b, c, v) = (1.3, -0.4, 0.8, 0.6);
        let net = scalar_net(a, b, Activation::Softplus, c);
        let h = net.hessian(array![v].view(), 0).unwrap();
        let s = 1.0 / (1.0 + (-(a * v + b)).exp());
        assert!((h[[0, 0]] - c * a * a * s * (1.0 - s)).abs() < 1e-14);
    }

    #[test]
    fn linear_net_has_zero_hessian() {
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![5, 4],
            output_dim: 2,
            activation: Activation::Linear,
        };
        let net = Network::glorot(&arch, 3);
        let h = net.hessian(array![0.3, -1.0, 2.0].view(), 1).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reference_architecture_parameter_counts() {
        assert_eq!(count_parameters_for(14, &[100, 100, 1]), 11701);
        assert_eq!(count_parameters_for(28, &[50, 50, 1]), 4051);
        assert_eq!(count_parameters_for(49, &[200, 200, 1]), 50401);
        let arch = Architecture {
            input_dim: 14,
            hidden: vec![100, 100],
            output_dim: 1,
            activation: Activation::Softplus,
        };
        assert_eq!(count_parameters(&Network::glorot(&arch, 0)), 11701);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig {
            beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(NetError::InvalidConfig(_))));
    }

    #[test]
    fn json_shape_checked() {
        let bad = r#"{"schema_version":"1.0.0","dims":[2,1],"activations":["linear"],"weights":[[1.0]],"biases":[[0.0]]}"#;
        assert!(serde_json::from_str::<Network>(bad).is_err());
    }
}
