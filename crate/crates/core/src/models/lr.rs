use super::{argmax, check_labels, check_width, ModelError};
use crate::data::TabularDataset;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrHyperparams {
    /// L2 penalty on the weights (intercepts are not penalized).
    pub l2: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_max_iter() -> usize {
    1000
}

fn default_tol() -> f64 {
    1e-6
}

impl Default for LrHyperparams {
    fn default() -> Self {
        LrHyperparams {
            l2: 1.0,
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

impl LrHyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.l2 >= 0.0 && self.l2.is_finite()) || self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(ModelError::InvalidHyperparams(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Softmax regression. With two classes a single score row is stored and
/// class 1 is predicted iff its score is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegressionModel {
    pub coefficients: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub n_classes: usize,
    pub l2: f64,
    /// False when the gradient-norm tolerance was not reached.
    pub converged: bool,
}

impl LogisticRegressionModel {
    pub fn zeros(d: usize, n_classes: usize) -> Self {
        let rows = if n_classes == 2 { 1 } else { n_classes };
        LogisticRegressionModel {
            coefficients: vec![vec![0.0; d]; rows],
            intercepts: vec![0.0; rows],
            n_classes,
            l2: 0.0,
            converged: true,
        }
    }

    pub fn n_features(&self) -> usize {
        self.coefficients.first().map_or(0, Vec::len)
    }

    pub fn is_binary(&self) -> bool {
        self.coefficients.len() == 1
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.intercepts)
            .map(|(w, b)| dot(w, x) + b)
            .collect()
    }

    pub fn predict_row(&self, x: &[f64]) -> u32 {
        let s = self.scores(x);
        if self.is_binary() {
            u32::from(s[0] > 0.0)
        } else {
            argmax(&s)
        }
    }

    /// Class probabilities for one row.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let s = self.scores(x);
        if self.is_binary() {
            let p = sigmoid(s[0]);
            vec![1.0 - p, p]
        } else {
            softmax(&s)
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
pub(crate) fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn softmax(s: &[f64]) -> Vec<f64> {
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Parameters laid out as `rows × (d + 1)`; the last column is the intercept.
struct Objective<'a> {
    x: &'a [Vec<f64>],
    y: &'a [u32],
    rows: usize,
    d: usize,
    l2: f64,
}

impl Objective<'_> {
    fn value_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.x.len() as f64;
        let w = self.d + 1;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let mut scores = vec![0.0; self.rows];
        for (xi, &yi) in self.x.iter().zip(self.y) {
            for (r, s) in scores.iter_mut().enumerate() {
                let row = &theta[r * w..(r + 1) * w];
                *s = dot(&row[..self.d], xi) + row[self.d];
            }
            if self.rows == 1 {
                let z = scores[0];
                let t = f64::from(yi);
                loss += softplus(z) - t * z;
                let dz = sigmoid(z) - t;
                accumulate(&mut grad[..w], xi, dz);
            } else {
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
                loss += lse - scores[yi as usize];
                for r in 0..self.rows {
                    let p = (scores[r] - lse).exp();
                    let dz = p - if r == yi as usize { 1.0 } else { 0.0 };
                    accumulate(&mut grad[r * w..(r + 1) * w], xi, dz);
                }
            }
        }
        let mut penalty = 0.0;
        for r in 0..self.rows {
            for j in 0..self.d {
                let k = r * w + j;
                penalty += theta[k] * theta[k];
                grad[k] += self.l2 * theta[k];
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        (loss + 0.5 * self.l2 * penalty) / n
    }
}

fn accumulate(g: &mut [f64], x: &[f64], dz: f64) {
    let d = x.len();
    for j in 0..d {
        g[j] += dz * x[j];
    }
    g[d] += dz;
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Full-batch gradient descent on mean cross-entropy plus `l2/(2n)·‖W‖²`.
///
/// Step sizes follow the Barzilai–Borwein rule, safeguarded by Armijo
/// backtracking so the objective never increases. The seed is accepted for
/// interface symmetry; the fit is deterministic from a zero start.
pub fn train_lr(train: &TabularDataset, hp: &LrHyperparams, _seed: u64) -> Result<LogisticRegressionModel, ModelError> {
    hp.validate()?;
    check_labels(&train.targets)?;
    let d = train.n_features();
    check_width(&train.features, d)?;
    let n_classes = train.n_classes();
    let rows = if n_classes == 2 { 1 } else { n_classes };
    let obj = Objective {
        x: &train.features,
        y: &train.targets,
        rows,
        d,
        l2: hp.l2,
    };

    let p = rows * (d + 1);
    let mut theta = vec![0.0; p];
    let mut grad = vec![0.0; p];
    let mut f = obj.value_and_grad(&theta, &mut grad);
    let mut step = 1.0;
    let mut converged = false;
    let mut trial = vec![0.0; p];
    let mut trial_grad = vec![0.0; p];

    for _ in 0..hp.max_iter {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() < hp.tol {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            for k in 0..p {
                trial[k] = theta[k] - step * grad[k];
            }
            let ft = obj.value_and_grad(&trial, &mut trial_grad);
            if ft.is_finite() && ft <= f - 1e-4 * step * gnorm2 {
                // BB1 step from the accepted move
                let mut ss = 0.0;
                let mut sy = 0.0;
                for k in 0..p {
                    let s = trial[k] - theta[k];
                    ss += s * s;
                    sy += s * (trial_grad[k] - grad[k]);
                }
                std::mem::swap(&mut theta, &mut trial);
                std::mem::swap(&mut grad, &mut trial_grad);
                f = ft;
                step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { step * 2.0 };
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no descent possible at machine precision: treat as stationary
            converged = norm(&grad) < hp.tol.sqrt();
            break;
        }
    }
    if !converged {
        log::debug!("logistic regression stopped at gradient norm {:.3e}", norm(&grad));
    }

    let w = d + 1;
    Ok(LogisticRegressionModel {
        coefficients: (0..rows).map(|r| theta[r * w..r * w + d].to_vec()).collect(),
        intercepts: (0..rows).map(|r| theta[r * w + d]).collect(),
        n_classes,
        l2: hp.l2,
        converged,
    })
}
