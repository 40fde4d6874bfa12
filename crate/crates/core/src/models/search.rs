use super::{
    accuracy, train_dt, train_lr, train_mlp, Activation, DtHyperparams, FittedModel, Hyperparams, LrHyperparams,
    MlpHyperparams, ModelError, ModelKind, TrainedModel,
};
use crate::data::TabularDataset;
use crate::rng::{derive_seed, derived_rng, Rng};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSpace {
    /// Log-uniform bounds.
    pub l2: (f64, f64),
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtSpace {
    /// Inclusive integer ranges.
    pub max_depth: (usize, usize),
    pub min_samples_split: (usize, usize),
    pub min_samples_leaf: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpace {
    pub hidden_size: usize,
    pub activations: Vec<Activation>,
    /// Log-uniform bounds.
    pub learning_rate: (f64, f64),
    pub epochs: Vec<usize>,
    pub batch_size: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperparamSpace {
    pub lr: LrSpace,
    pub dt: DtSpace,
    pub mlp: MlpSpace,
}

impl Default for HyperparamSpace {
    fn default() -> Self {
        HyperparamSpace {
            lr: LrSpace {
                l2: (1e-4, 10.0),
                max_iter: 1000,
            },
            dt: DtSpace {
                max_depth: (2, 12),
                min_samples_split: (2, 20),
                min_samples_leaf: (1, 10),
            },
            mlp: MlpSpace {
                hidden_size: 16,
                activations: vec![Activation::Relu, Activation::Tanh, Activation::Logistic],
                learning_rate: (1e-3, 3e-2),
                epochs: vec![100, 200, 300],
                batch_size: 32,
                l2: 1e-4,
            },
        }
    }
}

fn log_uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn int_range(rng: &mut Rng, (lo, hi): (usize, usize)) -> usize {
    rng.random_range(lo..=hi)
}

impl HyperparamSpace {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::InvalidHyperparams(format!("search space: {what}")));
        let (a, b) = self.lr.l2;
        if !(a > 0.0 && a <= b) {
            return bad("lr.l2 bounds");
        }
        let dt = &self.dt;
        for (name, (lo, hi)) in [
            ("dt.max_depth", dt.max_depth),
            ("dt.min_samples_split", dt.min_samples_split),
            ("dt.min_samples_leaf", dt.min_samples_leaf),
        ] {
            if lo > hi {
                return bad(name);
            }
        }
        if dt.min_samples_split.0 < 2 || dt.min_samples_leaf.0 < 1 {
            return bad("dt minimum sizes");
        }
        let (a, b) = self.mlp.learning_rate;
        if !(a > 0.0 && a <= b) || self.mlp.activations.is_empty() || self.mlp.epochs.is_empty() {
            return bad("mlp");
        }
        if self.mlp.epochs.contains(&0) || self.mlp.hidden_size == 0 || self.mlp.batch_size == 0 {
            return bad("mlp sizes");
        }
        Ok(())
    }

    pub fn sample(&self, kind: ModelKind, rng: &mut Rng) -> Hyperparams {
        match kind {
            ModelKind::Lr => Hyperparams::Lr(LrHyperparams {
                l2: log_uniform(rng, self.lr.l2),
                max_iter: self.lr.max_iter,
                ..Default::default()
            }),
            ModelKind::Dt => Hyperparams::Dt(DtHyperparams {
                max_depth: int_range(rng, self.dt.max_depth),
                min_samples_split: int_range(rng, self.dt.min_samples_split),
                min_samples_leaf: int_range(rng, self.dt.min_samples_leaf),
            }),
            ModelKind::Mlp => Hyperparams::Mlp(MlpHyperparams {
                hidden_size: self.mlp.hidden_size,
                activation: *self.mlp.activations.choose(rng).expect("non-empty activations"),
                learning_rate: log_uniform(rng, self.mlp.learning_rate),
                epochs: *self.mlp.epochs.choose(rng).expect("non-empty epochs"),
                batch_size: self.mlp.batch_size,
                l2: self.mlp.l2,
            }),
        }
    }
}

/// Trains the model family selected by `hp`.
pub fn train(hp: &Hyperparams, data: &TabularDataset, seed: u64) -> Result<TrainedModel, ModelError> {
    Ok(match hp {
        Hyperparams::Lr(h) => TrainedModel::Lr(train_lr(data, h, seed)?),
        Hyperparams::Dt(h) => TrainedModel::Dt(train_dt(data, h, seed)?),
        Hyperparams::Mlp(h) => TrainedModel::Mlp(train_mlp(data, h, seed)?),
    })
}

/// Fold id per row: each class is shuffled and dealt round-robin.
pub fn stratified_folds(targets: &[u32], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = derived_rng(seed, "folds", k as u64);
    let n_classes = targets.iter().max().map_or(0, |m| *m as usize + 1);
    let mut fold = vec![0; targets.len()];
    let mut next = 0;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..targets.len()).filter(|&i| targets[i] as usize == class).collect();
        members.shuffle(&mut rng);
        for i in members {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub index: usize,
    pub hyperparams: Hyperparams,
    /// Mean fold accuracy; absent when a fold failed to train.
    pub cv_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub model: FittedModel,
    pub cv_accuracy: f64,
    pub candidates: Vec<CandidateScore>,
}

fn cross_validate(hp: &Hyperparams, data: &TabularDataset, folds: &[usize], k: usize, seed: u64) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for f in 0..k {
        let train_idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
        let test_idx: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
        let fit = train(hp, &data.subset(&train_idx), derive_seed(seed, "fold", f as u64))?;
        let held = data.subset(&test_idx);
        total += accuracy(&fit.predict(&held.features)?, &held.targets);
    }
    Ok(total / k as f64)
}

/// Randomized search with stratified k-fold CV, then a refit of the winner on
/// all of `train`. Candidates are drawn up front and scored in parallel; the
/// earliest-drawn candidate wins ties.
pub fn random_search(
    kind: ModelKind,
    space: &HyperparamSpace,
    train_set: &TabularDataset,
    k_folds: usize,
    n_candidates: usize,
    seed: u64,
) -> Result<SearchOutcome, ModelError> {
    if k_folds < 2 || n_candidates == 0 {
        return Err(ModelError::InvalidHyperparams(format!(
            "search needs k_folds >= 2 and n_candidates >= 1 (got {k_folds}, {n_candidates})"
        )));
    }
    space.validate()?;
    let mut rng = derived_rng(seed, "search-space", 0);
    let points: Vec<Hyperparams> = (0..n_candidates).map(|_| space.sample(kind, &mut rng)).collect();
    let folds = stratified_folds(&train_set.targets, k_folds, seed);

    let scores: Vec<Result<f64, ModelError>> = points
        .par_iter()
        .enumerate()
        .map(|(i, hp)| cross_validate(hp, train_set, &folds, k_folds, derive_seed(seed, "candidate", i as u64)))
        .collect();

    let mut best: Option<(usize, f64)> = None;
    let mut failures = Vec::new();
    let candidates = points
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(i, (hp, score))| {
            match score {
                Ok(acc) => {
                    if best.is_none_or(|(_, b)| *acc > b) {
                        best = Some((i, *acc));
                    }
                }
                Err(e) => failures.push(format!("candidate {i}: {e}")),
            }
            CandidateScore {
                index: i,
                hyperparams: hp.clone(),
                cv_accuracy: score.as_ref().ok().copied(),
            }
        })
        .collect();

    let Some((winner, cv_accuracy)) = best else {
        return Err(ModelError::NoViableCandidate(failures.join("; ")));
    };
    let training_seed = derive_seed(seed, "refit", 0);
    let hyperparams = points[winner].clone();
    let model = train(&hyperparams, train_set, training_seed)?;
    Ok(SearchOutcome {
        model: FittedModel {
            model,
            hyperparams,
            training_seed,
        },
        cv_accuracy,
        candidates,
    })
}
