use super::{DataError, TabularDataset};
use serde::{Deserialize, Serialize};

/// Per-feature z-score map `(x - mean) / std`, with population std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit on the training split only.
    pub fn fit(train: &TabularDataset) -> Result<Standardizer, DataError> {
        if train.is_empty() {
            return Err(DataError::TooFewRows("cannot fit scaling on an empty split".into()));
        }
        let n = train.len() as f64;
        let d = train.n_features();
        let mut mean = vec![0.0; d];
        for row in &train.features {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in &train.features {
            for j in 0..d {
                let c = row[j] - mean[j];
                var[j] += c * c;
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for (j, s) in std.iter().enumerate() {
            let scale = mean[j].abs().max(1.0);
            if !(*s > 1e-12 * scale) {
                return Err(DataError::ZeroVariance(train.spec.feature_names[j].clone()));
            }
        }
        Ok(Standardizer { mean, std })
    }

    /// The pass-through map used for datasets shown to the evaluator as raw codes.
    pub fn identity(d: usize) -> Standardizer {
        Standardizer {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.std.iter().all(|&s| s == 1.0)
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.mean.iter().zip(&self.std)).map(|(x, (m, s))| (x - m) / s).collect()
    }

    pub fn inverse_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.mean.iter().zip(&self.std)).map(|(z, (m, s))| z * s + m).collect()
    }

    pub fn transform(&self, ds: &TabularDataset) -> TabularDataset {
        if self.is_identity() {
            return ds.clone();
        }
        let mut out = ds.clone();
        out.features = ds.features.iter().map(|r| self.transform_row(r)).collect();
        out
    }

    pub fn inverse_transform(&self, ds: &TabularDataset) -> TabularDataset {
        let mut out = ds.clone();
        out.features = ds.features.iter().map(|r| self.inverse_row(r)).collect();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ClassLabel, DatasetName, DatasetSpec};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn dataset(features: Vec<Vec<f64>>) -> TabularDataset {
        let d = features[0].len();
        let spec = DatasetSpec {
            version: 1,
            name: DatasetName::Blood,
            feature_names: (0..d).map(|i| format!("f{i}")).collect(),
            class_labels: vec![
                ClassLabel { code: 0, meaning: "a".into() },
                ClassLabel { code: 1, meaning: "b".into() },
            ],
            categorical_encodings: Default::default(),
            target_encoding: None,
            train_fraction: 0.5,
            standardize: true,
        };
        let n = features.len();
        TabularDataset::new(features, vec![0; n], Arc::new(spec)).unwrap()
    }

    #[test]
    fn one_two_three() {
        let ds = dataset(vec![vec![1.0], vec![2.0], vec![3.0]]);
        let s = Standardizer::fit(&ds).unwrap();
        let z: Vec<f64> = s.transform(&ds).features.iter().map(|r| r[0]).collect();
        // sqrt(3/2) by hand
        for (got, want) in z.iter().zip([-1.224744871, 0.0, 1.224744871]) {
            assert!((got - want).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_column_is_an_error() {
        let ds = dataset(vec![vec![1.0, 5.0], vec![2.0, 5.0]]);
        assert!(matches!(Standardizer::fit(&ds), Err(DataError::ZeroVariance(f)) if f == "f1"));
    }

    #[test]
    fn shift_invariance() {
        let a = dataset(vec![vec![1.0], vec![4.0], vec![9.0]]);
        let b = dataset(vec![vec![101.0], vec![104.0], vec![109.0]]);
        let za = Standardizer::fit(&a).unwrap().transform(&a);
        let zb = Standardizer::fit(&b).unwrap().transform(&b);
        for (x, y) in za.features.iter().zip(&zb.features) {
            assert!((x[0] - y[0]).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn moments_and_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 4..40)) {
            let ds = dataset(rows);
            let Ok(s) = Standardizer::fit(&ds) else { return Ok(()) };
            let z = s.transform(&ds);
            let n = z.len() as f64;
            for j in 0..3 {
                let mean: f64 = z.features.iter().map(|r| r[j]).sum::<f64>() / n;
                let var: f64 = z.features.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
                for (i, row) in z.features.iter().enumerate() {
                    prop_assert!((row[j] - (ds.features[i][j] - s.mean[j]) / s.std[j]).abs() < 1e-12);
                }
            }
            let back = s.inverse_transform(&z);
            for (x, y) in back.features.iter().flatten().zip(ds.features.iter().flatten()) {
                prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
        }
    }
}
