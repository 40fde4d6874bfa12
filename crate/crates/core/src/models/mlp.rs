use super::lr::{dot, sigmoid, softmax, softplus};
use super::{argmax, check_labels, check_width, ModelError};
use crate::data::TabularDataset;
use crate::rng::rng_from_seed;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Logistic,
}

impl Activation {
    pub fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Logistic => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation value `a = act(z)`.
    fn derivative(&self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Logistic => a * (1.0 - a),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHyperparams {
    pub hidden_size: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// L2 penalty on weights, scaled by 1/batch as in the usual MLP objective.
    #[serde(default = "default_l2")]
    pub l2: f64,
}

fn default_batch() -> usize {
    32
}

fn default_l2() -> f64 {
    1e-4
}

impl Default for MlpHyperparams {
    fn default() -> Self {
        MlpHyperparams {
            hidden_size: 16,
            activation: Activation::Relu,
            learning_rate: 1e-2,
            epochs: 300,
            batch_size: default_batch(),
            l2: default_l2(),
        }
    }
}

impl MlpHyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_size == 0
            || self.epochs == 0
            || self.batch_size == 0
            || !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !(self.l2 >= 0.0)
        {
            return Err(ModelError::InvalidHyperparams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// One hidden layer. Binary problems use a single output logit `z` with
/// `P(class 1) = σ(z)`; otherwise the outputs are softmaxed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    pub activation: Activation,
    pub n_classes: usize,
    #[serde(default = "yes")]
    pub converged: bool,
}

fn yes() -> bool {
    true
}

impl MlpModel {
    /// Zero-filled network of the given shape.
    pub fn zeros(d: usize, hidden: usize, n_classes: usize, activation: Activation) -> MlpModel {
        let out = if n_classes == 2 { 1 } else { n_classes };
        MlpModel {
            w1: vec![vec![0.0; d]; hidden],
            b1: vec![0.0; hidden],
            w2: vec![vec![0.0; hidden]; out],
            b2: vec![0.0; out],
            activation,
            n_classes,
            converged: true,
        }
    }

    pub fn n_features(&self) -> usize {
        self.w1.first().map_or(0, Vec::len)
    }

    pub fn hidden_size(&self) -> usize {
        self.b1.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.b2.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        let d = self.n_features();
        let h = self.hidden_size();
        let out = if self.n_classes == 2 { 1 } else { self.n_classes };
        let ok = self.w1.len() == h
            && self.w1.iter().all(|r| r.len() == d)
            && self.w2.len() == out
            && self.b2.len() == out
            && self.w2.iter().all(|r| r.len() == h);
        if ok {
            Ok(())
        } else {
            Err("inconsistent layer shapes".into())
        }
    }

    /// Parameters in the fixed order W1 (row-major), b1, W2, b2.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.w1.iter().flatten().chain(&self.b1).chain(self.w2.iter().flatten()).chain(&self.b2)
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w1
            .iter_mut()
            .flatten()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut().flatten())
            .chain(self.b2.iter_mut())
    }

    pub fn n_params(&self) -> usize {
        self.params().count()
    }

    fn hidden(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z: Vec<f64> = self.w1.iter().zip(&self.b1).map(|(w, b)| dot(w, x) + b).collect();
        let a = z.iter().map(|&v| self.activation.apply(v)).collect();
        (z, a)
    }

    fn logits(&self, a: &[f64]) -> Vec<f64> {
        self.w2.iter().zip(&self.b2).map(|(w, b)| dot(w, a) + b).collect()
    }

    /// Class probability vector for one row.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (_, a) = self.hidden(x);
        let o = self.logits(&a);
        if o.len() == 1 {
            let p = sigmoid(o[0]);
            vec![1.0 - p, p]
        } else {
            softmax(&o)
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> u32 {
        let (_, a) = self.hidden(x);
        let o = self.logits(&a);
        if o.len() == 1 {
            u32::from(o[0] > 0.0)
        } else {
            argmax(&o)
        }
    }

    /// Mean cross-entropy over the rows plus `l2/(2n)·‖W‖²`, and its gradient
    /// laid out like the model.
    pub fn loss_and_gradient(&self, x: &[&[f64]], y: &[u32], l2: f64) -> (f64, MlpModel) {
        let n = x.len() as f64;
        let mut g = MlpModel::zeros(self.n_features(), self.hidden_size(), self.n_classes, self.activation);
        let mut loss = 0.0;
        let out = self.n_outputs();
        let mut dz = vec![0.0; out];
        for (xi, &yi) in x.iter().zip(y) {
            let (zh, a) = self.hidden(xi);
            let o = self.logits(&a);
            if out == 1 {
                let t = f64::from(yi);
                loss += softplus(o[0]) - t * o[0];
                dz[0] = sigmoid(o[0]) - t;
            } else {
                let p = softmax(&o);
                loss -= p[yi as usize].max(f64::MIN_POSITIVE).ln();
                for k in 0..out {
                    dz[k] = p[k] - if k == yi as usize { 1.0 } else { 0.0 };
                }
            }
            for k in 0..out {
                g.b2[k] += dz[k];
                for (gw, aj) in g.w2[k].iter_mut().zip(&a) {
                    *gw += dz[k] * aj;
                }
            }
            for j in 0..self.hidden_size() {
                let back: f64 = (0..out).map(|k| self.w2[k][j] * dz[k]).sum();
                let dh = back * self.activation.derivative(zh[j], a[j]);
                if dh == 0.0 {
                    continue;
                }
                g.b1[j] += dh;
                for (gw, xv) in g.w1[j].iter_mut().zip(xi.iter()) {
                    *gw += dh * xv;
                }
            }
        }
        let mut sq = 0.0;
        for (gr, wr) in g.w1.iter_mut().zip(&self.w1).chain(g.w2.iter_mut().zip(&self.w2)) {
            for (gv, wv) in gr.iter_mut().zip(wr) {
                sq += wv * wv;
                *gv += l2 * wv;
            }
        }
        g.params_mut().for_each(|v| *v /= n);
        ((loss + 0.5 * l2 * sq) / n, g)
    }
}

/// Mini-batch Adam on cross-entropy. Stops early, as converged, once the epoch
/// loss has failed to improve by 1e-4 for ten consecutive epochs.
pub fn train_mlp(train: &TabularDataset, hp: &MlpHyperparams, seed: u64) -> Result<MlpModel, ModelError> {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    const TOL: f64 = 1e-4;
    const PATIENCE: usize = 10;

    hp.validate()?;
    check_labels(&train.targets)?;
    let d = train.n_features();
    check_width(&train.features, d)?;
    let mut rng = rng_from_seed(seed);
    let mut model = MlpModel::zeros(d, hp.hidden_size, train.n_classes(), hp.activation);
    let out = model.n_outputs();
    let h = hp.hidden_size;

    let limit1 = (6.0 / (d + h) as f64).sqrt();
    let limit2 = (6.0 / (h + out) as f64).sqrt();
    for row in &mut model.w1 {
        row.iter_mut().for_each(|w| *w = rng.random_range(-limit1..limit1));
    }
    for row in &mut model.w2 {
        row.iter_mut().for_each(|w| *w = rng.random_range(-limit2..limit2));
    }

    let p = model.n_params();
    let mut m = vec![0.0; p];
    let mut v = vec![0.0; p];
    let mut t = 0i32;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut converged = false;

    for _ in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hp.batch_size) {
            let xs: Vec<&[f64]> = batch.iter().map(|&i| train.features[i].as_slice()).collect();
            let ys: Vec<u32> = batch.iter().map(|&i| train.targets[i]).collect();
            let (loss, grad) = model.loss_and_gradient(&xs, &ys, hp.l2);
            epoch_loss += loss * batch.len() as f64;
            t += 1;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            for (k, (w, g)) in model.params_mut().zip(grad.params()).enumerate() {
                m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
                v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
                *w -= hp.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + EPS);
            }
        }
        epoch_loss /= train.len() as f64;
        if epoch_loss > best - TOL {
            stale += 1;
        } else {
            stale = 0;
        }
        best = best.min(epoch_loss);
        if stale >= PATIENCE {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("MLP reached {} epochs without settling", hp.epochs);
    }
    model.converged = converged;
    Ok(model)
}
