//! MLP embedding network, classifier matrix and momentum SGD.
//!
//! Weight matrices are stored row-major as `fan_in x fan_out`, so a layer
//! computes `y = x W + b` on row-major batches.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by inherent methods when std is in the graph
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::row;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation value.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weights[i * dim + i] = 1.0;
        }
        l
    }

    fn forward(&self, input: &[f64], batch: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(batch * self.fan_out);
        for b in 0..batch {
            let x = row(input, self.fan_in, b);
            let mut y = self.bias.clone();
            for (k, &xk) in x.iter().enumerate() {
                if xk != 0.0 {
                    let w = row(&self.weights, self.fan_out, k);
                    for (yj, wj) in y.iter_mut().zip(w) {
                        *yj += xk * wj;
                    }
                }
            }
            out.extend_from_slice(&y);
        }
        out
    }
}

/// Embedding network `Theta`: linear layers with an activation between
/// consecutive layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

/// Activations saved by [`MlpParams::forward`] for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub batch: usize,
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of every layer but the last.
    pre_activations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<LinearGrad>,
    pub grad_input: Vec<f64>,
}

impl MlpParams {
    pub fn new(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig(
                "network needs at least one layer".into(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.fan_in == 0 || l.fan_out == 0 {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} has a zero dimension"
                )));
            }
            if l.weights.len() != l.fan_in * l.fan_out || l.bias.len() != l.fan_out {
                return Err(Error::DimensionMismatch {
                    expected: l.fan_in * l.fan_out,
                    got: l.weights.len(),
                });
            }
            if let Some(next) = layers.get(i + 1) {
                if next.fan_in != l.fan_out {
                    return Err(Error::DimensionMismatch {
                        expected: l.fan_out,
                        got: next.fan_in,
                    });
                }
            }
        }
        Ok(Self { layers, activation })
    }

    /// He-style uniform init `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, zero
    /// biases. `dims` lists every width from input to output.
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig("need input and output widths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = (6.0 / w[0] as f64).sqrt();
                let mut l = Linear::zeros(w[0], w[1]);
                l.weights
                    .iter_mut()
                    .for_each(|x| *x = rng.random_range(-bound..bound));
                l
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<(Vec<f64>, ForwardCache)> {
        if inputs.len() != batch * self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: batch * self.input_dim(),
                got: inputs.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut cache = ForwardCache {
            batch,
            inputs: Vec::with_capacity(self.layers.len()),
            pre_activations: Vec::with_capacity(last),
        };
        let mut x = inputs.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.forward(&x, batch);
            cache.inputs.push(x);
            if i < last {
                x = y.iter().map(|&v| self.activation.apply(v)).collect();
                cache.pre_activations.push(y);
            } else {
                x = y;
            }
        }
        Ok((x, cache))
    }

    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Result<MlpGradients> {
        let batch = cache.batch;
        if cache.inputs.len() != self.layers.len()
            || cache.pre_activations.len() + 1 != self.layers.len()
        {
            return Err(Error::StaleCache(format!(
                "cache holds {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        for (l, x) in self.layers.iter().zip(&cache.inputs) {
            if x.len() != batch * l.fan_in {
                return Err(Error::StaleCache("layer input width changed".into()));
            }
        }
        if grad_output.len() != batch * self.output_dim() {
            return Err(Error::StaleCache(format!(
                "gradient has {} entries, expected {}",
                grad_output.len(),
                batch * self.output_dim()
            )));
        }

        let mut grads: Vec<LinearGrad> = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_output.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                let pre = &cache.pre_activations[i];
                for (g, &p) in upstream.iter_mut().zip(pre) {
                    *g *= self.activation.derivative(p);
                }
            }
            let x = &cache.inputs[i];
            let mut gw = vec![0.0; layer.fan_in * layer.fan_out];
            let mut gb = vec![0.0; layer.fan_out];
            let mut down = vec![0.0; batch * layer.fan_in];
            for b in 0..batch {
                let xb = row(x, layer.fan_in, b);
                let gy = row(&upstream, layer.fan_out, b);
                for (acc, g) in gb.iter_mut().zip(gy) {
                    *acc += g;
                }
                for k in 0..layer.fan_in {
                    let w = row(&layer.weights, layer.fan_out, k);
                    let gwk = &mut gw[k * layer.fan_out..(k + 1) * layer.fan_out];
                    let mut dx = 0.0;
                    for j in 0..layer.fan_out {
                        gwk[j] += xb[k] * gy[j];
                        dx += w[j] * gy[j];
                    }
                    down[b * layer.fan_in + k] = dx;
                }
            }
            grads.push(LinearGrad {
                weights: gw,
                bias: gb,
            });
            upstream = down;
        }
        grads.reverse();
        Ok(MlpGradients {
            layers: grads,
            grad_input: upstream,
        })
    }
}

/// Raw `C x d` classification weights; rows are normalized at use.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
}

impl ClassifierParams {
    pub fn new(classes: usize, dim: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != classes * dim {
            return Err(Error::DimensionMismatch {
                expected: classes * dim,
                got: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidConfig(
                "classifier weights must be finite".into(),
            ));
        }
        Ok(Self {
            classes,
            dim,
            weights,
        })
    }

    /// Seeded Gaussian-like init, `U(-1, 1)` per entry.
    pub fn init(classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..classes * dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Self {
            classes,
            dim,
            weights,
        }
    }
}

/// One step of classical momentum SGD with coupled weight decay:
/// `v = momentum * v + (g + wd * p)`, `p -= lr * v`.
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    debug_assert!(params.len() == grads.len() && params.len() == velocity.len());
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        *v = momentum * *v + (g + weight_decay * *p);
        *p -= lr * *v;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} must lie in [0, 1)",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay {} must be nonnegative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Momentum buffers for both parameter groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    config: SgdConfig,
    layer_weights: Vec<Vec<f64>>,
    layer_bias: Vec<Vec<f64>>,
    classifier: Vec<f64>,
}

impl SgdState {
    pub fn new(config: SgdConfig, mlp: &MlpParams, classifier: &ClassifierParams) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            layer_weights: mlp
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            layer_bias: mlp.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            classifier: vec![0.0; classifier.weights.len()],
        })
    }

    pub fn step(
        &mut self,
        lr: f64,
        mlp: &mut MlpParams,
        mlp_grads: &MlpGradients,
        classifier: &mut ClassifierParams,
        classifier_grad: &[f64],
    ) {
        let SgdConfig {
            momentum,
            weight_decay,
        } = self.config;
        for (i, (layer, g)) in mlp.layers.iter_mut().zip(&mlp_grads.layers).enumerate() {
            sgd_step(
                &mut layer.weights,
                &g.weights,
                &mut self.layer_weights[i],
                lr,
                momentum,
                weight_decay,
            );
            sgd_step(
                &mut layer.bias,
                &g.bias,
                &mut self.layer_bias[i],
                lr,
                momentum,
                weight_decay,
            );
        }
        sgd_step(
            &mut classifier.weights,
            classifier_grad,
            &mut self.classifier,
            lr,
            momentum,
            weight_decay,
        );
    }
}
