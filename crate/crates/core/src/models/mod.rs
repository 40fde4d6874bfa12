//! From-scratch classifiers: logistic regression, CART trees and a
//! single-hidden-layer perceptron, plus randomized CV search.

mod dt;
mod internals;
mod lr;
mod mlp;
mod search;

pub use dt::{train_dt, DecisionTreeModel, DtHyperparams, TreeNode};
pub use internals::describe_internals;
pub use lr::{train_lr, LogisticRegressionModel, LrHyperparams};
pub use mlp::{train_mlp, Activation, MlpHyperparams, MlpModel};
pub use search::{
    random_search, stratified_folds, train, CandidateScore, DtSpace, HyperparamSpace, LrSpace, MlpSpace,
    SearchOutcome,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("expected {expected} features, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("training split is empty")]
    EmptyTrainingSet,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("hyperparameters for {expected} given to a {found} trainer")]
    KindMismatch { expected: ModelKind, found: ModelKind },
    #[error("every search candidate failed: {0}")]
    NoViableCandidate(String),
    #[error("model document: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Dt,
    Mlp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Lr, ModelKind::Dt, ModelKind::Mlp];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Dt => "dt",
            ModelKind::Mlp => "mlp",
        }
    }

    /// Name used inside prompts.
    pub fn type_name(&self) -> &'static str {
        match self {
            ModelKind::Lr => "logistic regression",
            ModelKind::Dt => "decision tree",
            ModelKind::Mlp => "MLP",
        }
    }

    /// Short label for report tables.
    pub fn label(&self) -> &'static str {
        match self {
            ModelKind::Lr => "LR",
            ModelKind::Dt => "DT",
            ModelKind::Mlp => "MLP",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(ModelKind::Lr),
            "dt" => Ok(ModelKind::Dt),
            "mlp" => Ok(ModelKind::Mlp),
            other => Err(ModelError::Format(format!("unknown model kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyperparams {
    Lr(LrHyperparams),
    Dt(DtHyperparams),
    Mlp(MlpHyperparams),
}

impl Hyperparams {
    pub fn kind(&self) -> ModelKind {
        match self {
            Hyperparams::Lr(_) => ModelKind::Lr,
            Hyperparams::Dt(_) => ModelKind::Dt,
            Hyperparams::Mlp(_) => ModelKind::Mlp,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Lr(LogisticRegressionModel),
    Dt(DecisionTreeModel),
    Mlp(MlpModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Lr(_) => ModelKind::Lr,
            TrainedModel::Dt(_) => ModelKind::Dt,
            TrainedModel::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Lr(m) => m.n_features(),
            TrainedModel::Dt(m) => m.n_features,
            TrainedModel::Mlp(m) => m.n_features(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            TrainedModel::Lr(m) => m.n_classes,
            TrainedModel::Dt(m) => m.n_classes,
            TrainedModel::Mlp(m) => m.n_classes,
        }
    }

    /// Class code for one row. The caller guarantees the row width.
    pub fn predict_row(&self, x: &[f64]) -> u32 {
        match self {
            TrainedModel::Lr(m) => m.predict_row(x),
            TrainedModel::Dt(m) => m.predict_row(x),
            TrainedModel::Mlp(m) => m.predict_row(x),
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<u32>, ModelError> {
        let d = self.n_features();
        if let Some(row) = x.iter().find(|r| r.len() != d) {
            return Err(ModelError::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        Ok(x.iter().map(|r| self.predict_row(r)).collect())
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[u32]) -> Result<f64, ModelError> {
        let pred = self.predict(x)?;
        Ok(accuracy(&pred, y))
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        match self {
            TrainedModel::Lr(m) => m.coefficients.iter().flatten().chain(&m.intercepts).all(|v| v.is_finite()),
            TrainedModel::Dt(m) => m.nodes.iter().all(|n| match n {
                TreeNode::Split { threshold, .. } => threshold.is_finite(),
                TreeNode::Leaf { .. } => true,
            }),
            TrainedModel::Mlp(m) => m.params().all(|v| v.is_finite()),
        }
    }
}

pub fn accuracy(pred: &[u32], y: &[u32]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).filter(|(p, t)| p == t).count() as f64 / y.len() as f64
}

/// Index of the largest score; ties go to the lowest index.
pub(crate) fn argmax(scores: &[f64]) -> u32 {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best as u32
}

pub(crate) fn check_labels(y: &[u32]) -> Result<(), ModelError> {
    match y.first() {
        None => Err(ModelError::EmptyTrainingSet),
        Some(first) if y.iter().all(|c| c == first) => Err(ModelError::DegenerateLabels),
        Some(_) => Ok(()),
    }
}

pub(crate) fn check_width(x: &[Vec<f64>], d: usize) -> Result<(), ModelError> {
    match x.iter().find(|r| r.len() != d) {
        Some(r) => Err(ModelError::DimensionMismatch {
            expected: d,
            found: r.len(),
        }),
        None => Ok(()),
    }
}

/// A trained model with the hyperparameters and seed that produced it.
///
/// Serializes to the on-disk model document:
/// `{"format_version":1,"kind":"dt","params":{..},"hyperparams":{..},"training_seed":7}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub model: TrainedModel,
    pub hyperparams: Hyperparams,
    pub training_seed: u64,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    kind: ModelKind,
    params: serde_json::Value,
    hyperparams: serde_json::Value,
    training_seed: u64,
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        self.model.kind()
    }

    pub fn to_value(&self) -> serde_json::Value {
        let to = |v: Result<serde_json::Value, serde_json::Error>| v.expect("model parameters serialize");
        let params = match &self.model {
            TrainedModel::Lr(m) => to(serde_json::to_value(m)),
            TrainedModel::Dt(m) => to(serde_json::to_value(m)),
            TrainedModel::Mlp(m) => to(serde_json::to_value(m)),
        };
        let hyperparams = match &self.hyperparams {
            Hyperparams::Lr(h) => to(serde_json::to_value(h)),
            Hyperparams::Dt(h) => to(serde_json::to_value(h)),
            Hyperparams::Mlp(h) => to(serde_json::to_value(h)),
        };
        let doc = ModelDocument {
            format_version: MODEL_FORMAT_VERSION,
            kind: self.kind(),
            params,
            hyperparams,
            training_seed: self.training_seed,
        };
        to(serde_json::to_value(doc))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_value()).expect("model document serializes")
    }

    pub fn from_value(value: serde_json::Value) -> Result<FittedModel, ModelError> {
        let fmt = |e: serde_json::Error| ModelError::Format(e.to_string());
        let doc: ModelDocument = serde_json::from_value(value).map_err(fmt)?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Format(format!("unsupported format_version {}", doc.format_version)));
        }
        let (model, hyperparams) = match doc.kind {
            ModelKind::Lr => (
                TrainedModel::Lr(serde_json::from_value(doc.params).map_err(fmt)?),
                Hyperparams::Lr(serde_json::from_value(doc.hyperparams).map_err(fmt)?),
            ),
            ModelKind::Dt => {
                let tree: DecisionTreeModel = serde_json::from_value(doc.params).map_err(fmt)?;
                tree.validate().map_err(ModelError::Format)?;
                (
                    TrainedModel::Dt(tree),
                    Hyperparams::Dt(serde_json::from_value(doc.hyperparams).map_err(fmt)?),
                )
            }
            ModelKind::Mlp => {
                let mlp: MlpModel = serde_json::from_value(doc.params).map_err(fmt)?;
                mlp.validate().map_err(ModelError::Format)?;
                (
                    TrainedModel::Mlp(mlp),
                    Hyperparams::Mlp(serde_json::from_value(doc.hyperparams).map_err(fmt)?),
                )
            }
        };
        Ok(FittedModel {
            model,
            hyperparams,
            training_seed: doc.training_seed,
        })
    }

    pub fn from_json(text: &str) -> Result<FittedModel, ModelError> {
        let value = serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        FittedModel::from_value(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
    }

    #[test]
    fn zero_lr_predicts_lowest_class() {
        let m = TrainedModel::Lr(LogisticRegressionModel::zeros(3, 4));
        assert_eq!(m.predict(&[vec![1.0, -2.0, 3.0], vec![0.0; 3]]).unwrap(), vec![0, 0]);
        let binary = TrainedModel::Lr(LogisticRegressionModel::zeros(2, 2));
        assert_eq!(binary.predict(&[vec![5.0, 5.0]]).unwrap(), vec![0]);
        assert!(matches!(binary.predict(&[vec![1.0]]), Err(ModelError::DimensionMismatch { expected: 2, found: 1 })));
    }

    #[test]
    fn document_round_trip_is_lossless() {
        let mut lr = LogisticRegressionModel::zeros(2, 2);
        lr.coefficients[0] = vec![0.1 + 0.2, std::f64::consts::PI / 7.0];
        lr.intercepts[0] = -1.0 / 3.0;
        let fitted = FittedModel {
            model: TrainedModel::Lr(lr),
            hyperparams: Hyperparams::Lr(LrHyperparams::default()),
            training_seed: 11,
        };
        let back = FittedModel::from_json(&fitted.to_json()).unwrap();
        assert_eq!(back, fitted);
        let v = fitted.to_value();
        assert_eq!(v["kind"], "lr");
        assert_eq!(v["format_version"], 1);
    }
}
