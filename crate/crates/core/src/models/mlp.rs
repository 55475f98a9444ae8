//! Fully connected ReLU networks for count regression.
//!
//! Each layer computes `z = W a + b`; hidden layers apply ReLU, the output
//! layer is linear with a single unit. Training minimizes mean squared error
//! with mini-batch gradient steps and keeps the parameters of the epoch with
//! the lowest validation error.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{mse, Regressor, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// One hidden layer.
    Wnn,
    /// Three hidden layers.
    Dnn,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, a: &[f64], z: &mut [f64]) {
        for (o, zo) in z.iter_mut().enumerate() {
            let w = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *zo = self.bias[o] + w.iter().zip(a).map(|(w, x)| w * x).sum::<f64>();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub arch: Arch,
    pub layers: Vec<Layer>,
}

/// Gradient of the loss with the same layout as [`MlpModel::layers`].
pub type Gradients = Vec<Layer>;

fn zeros_like(model: &MlpModel) -> Gradients {
    model.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect()
}

/// Pre-activations of every layer for one forward pass.
struct Trace {
    z: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Weights drawn from N(0, 1/fan_in), biases zero.
    pub fn init(arch: Arch, hidden: &[usize], input_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be at least 1".into()));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(format!("hidden widths must be nonzero and non-empty, got {hidden:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        g * scale
                    })
                    .collect();
                Layer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights,
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(MlpModel { arch, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.outputs];
            layer.affine(&a, &mut z);
            if k < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a[0]
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let last = self.layers.len() - 1;
        let mut z_all = Vec::with_capacity(self.layers.len());
        let mut a_all = vec![x.to_vec()];
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = vec![0.0; layer.outputs];
            layer.affine(&a_all[k], &mut z);
            let a = if k < last { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
            z_all.push(z);
            a_all.push(a);
        }
        Trace { z: z_all, a: a_all }
    }

    /// Adds the gradient of `scale * (f(x) - y)^2` into `grads` and returns
    /// the unscaled squared error.
    fn accumulate(&self, x: &[f64], y: f64, scale: f64, grads: &mut Gradients) -> f64 {
        let t = self.trace(x);
        let pred = t.a[self.layers.len()][0];
        let err = pred - y;
        let mut delta = vec![2.0 * err * scale];
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grads[k];
            let input = &t.a[k];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if k > 0 {
                let mut prev = vec![0.0; layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += w * d;
                    }
                }
                for (p, z) in prev.iter_mut().zip(&t.z[k - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        err * err
    }

    /// Backpropagated gradient of the single-sample loss `(f(x) - y)^2`.
    pub fn gradients(&self, x: &[f64], y: f64) -> Result<(f64, Gradients)> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut g = zeros_like(self);
        let loss = self.accumulate(x, y, 1.0, &mut g);
        Ok((loss, g))
    }

    /// Pre-activations of the hidden layers for `x`.
    pub fn hidden_preactivations(&self, x: &[f64]) -> Vec<f64> {
        let t = self.trace(x);
        t.z[..t.z.len() - 1].concat()
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

impl Regressor for MlpModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        self.forward_unchecked(x)
    }
}

fn flat(grads: &Gradients) -> impl Iterator<Item = &f64> {
    grads.iter().flat_map(|l| l.weights.iter().chain(l.bias.iter()))
}

/// `mlp_init` with the default widths for `arch`.
pub fn mlp_init(arch: Arch, input_dim: usize, seed: u64) -> Result<MlpModel> {
    let cfg = TrainConfig::default();
    MlpModel::init(arch, cfg.hidden_for(arch), input_dim, seed)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    /// 1-based epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
}

impl TrainHistory {
    /// CSV with header `epoch,train_mse,val_mse`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for (i, (t, v)) in self.train_mse.iter().zip(&self.val_mse).enumerate() {
            s.push_str(&format!("{},{t},{v}\n", i + 1));
        }
        s
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Mini-batch training on MSE. Returns the best-validation snapshot and the
/// per-epoch train/validation MSE.
pub fn mlp_train(
    mut model: MlpModel,
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainHistory)> {
    if train.n_cols() != model.input_dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            actual: train.n_cols(),
        });
    }
    if val.n_rows() > 0 && val.n_cols() != model.input_dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            actual: val.n_cols(),
        });
    }
    if train.n_rows() == 0 {
        return Err(Error::InsufficientData("training matrix is empty".into()));
    }
    let score = |m: &MlpModel| {
        let tr = mse(&m.predict(train), &train.target);
        let va = if val.n_rows() > 0 { mse(&m.predict(val), &val.target) } else { tr };
        (tr, va)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let n_params = flat(&zeros_like(&model)).count();
    let mut m1 = vec![0.0; n_params];
    let mut m2 = vec![0.0; n_params];
    let mut step = 0i32;

    let mut order: Vec<usize> = (0..train.n_rows()).collect();
    let mut history = TrainHistory::default();
    let (_, mut best_val) = score(&model);
    let mut best = model.clone();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zeros_like(&model);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                model.accumulate(train.row(i), train.target[i], scale, &mut grads);
            }
            step += 1;
            let lr = cfg.learning_rate;
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, g) in model.params_mut().zip(flat(&grads)) {
                        *p -= lr * g;
                    }
                }
                Optimizer::Adam => {
                    let c1 = 1.0 - ADAM_BETA1.powi(step);
                    let c2 = 1.0 - ADAM_BETA2.powi(step);
                    let params = model.params_mut().zip(flat(&grads)).zip(m1.iter_mut().zip(m2.iter_mut()));
                    for ((p, g), (m, v)) in params {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        let (tr, va) = score(&model);
        if !tr.is_finite() || !va.is_finite() {
            return Err(Error::Diverged { epoch, loss: tr });
        }
        history.train_mse.push(tr);
        history.val_mse.push(va);
        if va < best_val {
            best_val = va;
            best = model.clone();
            history.best_epoch = epoch;
        }
    }
    Ok((best, history))
}
