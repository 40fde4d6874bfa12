//! Small in-memory datasets for unit tests.

use crate::data::{ClassLabel, DatasetName, DatasetSpec, SplitBundle, TabularDataset};
use crate::models::{train_lr, FittedModel, Hyperparams, LrHyperparams, TrainedModel};
use crate::pairgen::{disagreement_rate, perturb_lr, ModelPair, Perturbation, Provenance};
use crate::rng::derived_rng;
use rand::Rng as _;
use std::sync::Arc;

pub fn toy_spec(d: usize, n_classes: u32) -> DatasetSpec {
    DatasetSpec {
        version: 1,
        name: DatasetName::Blood,
        feature_names: (0..d).map(|i| format!("f{i}")).collect(),
        class_labels: (0..n_classes)
            .map(|code| ClassLabel {
                code,
                meaning: format!("c{code}"),
            })
            .collect(),
        categorical_encodings: Default::default(),
        target_encoding: None,
        train_fraction: 0.5,
        standardize: true,
    }
}

pub fn toy(features: Vec<Vec<f64>>, targets: Vec<u32>, n_classes: u32) -> TabularDataset {
    let d = features[0].len();
    TabularDataset::new(features, targets, Arc::new(toy_spec(d, n_classes))).unwrap()
}

/// The four corners of the unit square, replicated, labelled by XOR.
pub fn xor(copies: usize) -> TabularDataset {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..copies {
        for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
            x.push(vec![a, b]);
            y.push(u32::from((a == 1.0) != (b == 1.0)));
        }
    }
    toy(x, y, 2)
}

/// 600 noisy rows over three features with a linear boundary.
pub fn synthetic_bundle(seed: u64) -> SplitBundle {
    let mut rng = derived_rng(seed, "synthetic", 0);
    let x: Vec<Vec<f64>> = (0..600)
        .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let y = x
        .iter()
        .map(|r| u32::from(r[0] + 0.5 * r[1] - 0.25 * r[2] + rng.random_range(-3.0..3.0) > 0.0))
        .collect();
    let ds = toy(x, y, 2);
    SplitBundle::prepare(&ds, seed).unwrap()
}

/// An LR base and a perturbed copy, without calibration.
pub fn synthetic_pair(bundle: &SplitBundle) -> ModelPair {
    let hp = LrHyperparams { l2: 0.1, ..Default::default() };
    let base = train_lr(&bundle.train, &hp, 0).unwrap();
    let fitted = |m| FittedModel {
        model: TrainedModel::Lr(m),
        hyperparams: Hyperparams::Lr(hp.clone()),
        training_seed: 0,
    };
    let model_a = fitted(base.clone());
    let model_b = fitted(perturb_lr(&base, 1.0, 9, true));
    let x = &bundle.test.features;
    ModelPair {
        disagreement: disagreement_rate(&model_a.model, &model_b.model, x).unwrap(),
        accuracy_a: model_a.model.accuracy(x, &bundle.test.targets).unwrap(),
        accuracy_b: model_b.model.accuracy(x, &bundle.test.targets).unwrap(),
        model_a,
        model_b,
        level: None,
        provenance: Provenance::BaseVsModified,
        modification_factor: Some(1.0),
        perturbation_a: None,
        perturbation_b: Some(Perturbation { m: 1.0, seed: 9 }),
        seed: 0,
    }
}
