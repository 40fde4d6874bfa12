use super::{DataError, Standardizer, TabularDataset};
use crate::rng::{derive_seed, derived_rng, Rng};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// Decimal places kept in prepared features; matches the prompt rendering so
/// that models see exactly the values an evaluator sees.
pub const FEATURE_DECIMALS: i32 = 4;

/// Per-class quotas summing to `total`, allocated by largest remainder.
/// Remainder ties go to the lowest class code.
fn class_quotas(counts: &[usize], fraction: f64, total: usize) -> Vec<usize> {
    let mut quotas: Vec<usize> = counts.iter().map(|&c| (c as f64 * fraction).floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    let remainder = |c: usize| counts[c] as f64 * fraction - quotas[c] as f64;
    let rems: Vec<f64> = order.iter().map(|&c| remainder(c)).collect();
    order.sort_by(|&a, &b| rems[b].total_cmp(&rems[a]).then(a.cmp(&b)));
    let mut assigned: usize = quotas.iter().sum();
    // A second pass is only needed when rounding pushes past one extra per class.
    while assigned < total {
        let before = assigned;
        for &c in &order {
            if assigned == total {
                break;
            }
            if quotas[c] < counts[c] {
                quotas[c] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    quotas
}

/// Stratified two-way partition of positions. Returns (first, second), each
/// shuffled.
fn stratified_partition(ds: &TabularDataset, fraction: f64, total: usize, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let counts = ds.class_counts();
    let quotas = class_quotas(&counts, fraction, total);
    let mut first = Vec::with_capacity(total);
    let mut second = Vec::with_capacity(ds.len() - total);
    for (class, &quota) in quotas.iter().enumerate() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.targets[i] as usize == class).collect();
        members.shuffle(rng);
        first.extend_from_slice(&members[..quota]);
        second.extend_from_slice(&members[quota..]);
    }
    first.shuffle(rng);
    second.shuffle(rng);
    (first, second)
}

/// Seeded, class-stratified train/test split with `|train| = round(fraction·n)`.
pub fn split_train_test(
    ds: &TabularDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(TabularDataset, TabularDataset), DataError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    let counts = ds.class_counts();
    if let Some(class) = counts.iter().position(|&c| c == 1) {
        return Err(DataError::TooFewRows(format!("class {class} has a single row")));
    }
    if ds.len() < 2 {
        return Err(DataError::TooFewRows(format!("{} rows", ds.len())));
    }
    let total = (train_fraction * ds.len() as f64).round() as usize;
    let mut rng = derived_rng(seed, "split-train-test", 0);
    let (train, test) = stratified_partition(ds, train_fraction, total, &mut rng);
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Seeded, stratified 2:1 split of the test partition with `|verb| = round(2/3·|test|)`.
pub fn split_verb_eval(test: &TabularDataset, seed: u64) -> Result<(TabularDataset, TabularDataset), DataError> {
    if test.len() < 3 {
        return Err(DataError::TooFewRows(format!("{} test rows, need at least 3", test.len())));
    }
    // 2n/3 never lands on .5, so this integer form equals round(2n/3).
    let total = (2 * test.len() + 1) / 3;
    let mut rng = derived_rng(seed, "split-verb-eval", 0);
    let (verb, eval) = stratified_partition(test, 2.0 / 3.0, total, &mut rng);
    Ok((test.subset(&verb), test.subset(&eval)))
}

/// Flips the sign of `feature` on exactly `round(fraction·n)` seeded-random rows.
pub fn negate_feature_fraction(
    ds: &TabularDataset,
    feature: &str,
    fraction: f64,
    seed: u64,
) -> Result<TabularDataset, DataError> {
    let j = ds
        .spec
        .feature_index(feature)
        .ok_or_else(|| DataError::UnknownFeature(feature.to_string()))?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DataError::InvalidFraction(fraction));
    }
    let k = (fraction * ds.len() as f64).round() as usize;
    let mut positions: Vec<usize> = (0..ds.len()).collect();
    positions.shuffle(&mut derived_rng(seed, "negate", j as u64));
    let mut out = ds.clone();
    for &p in &positions[..k] {
        let v = out.features[p][j];
        if v != 0.0 {
            out.features[p][j] = -v;
        }
    }
    Ok(out)
}

/// The four partitions used throughout an experiment, already scaled.
#[derive(Debug, Clone)]
pub struct SplitBundle {
    pub train: TabularDataset,
    pub test: TabularDataset,
    pub verb: TabularDataset,
    pub eval: TabularDataset,
    pub standardizer: Standardizer,
    pub seed: u64,
}

impl SplitBundle {
    /// Splits with the dataset's train fraction, fits scaling on train (unless the
    /// spec disables it), rounds features to prompt precision, then carves the
    /// test split into verb and eval.
    pub fn prepare(ds: &TabularDataset, seed: u64) -> Result<SplitBundle, DataError> {
        let (train, test) = split_train_test(ds, ds.spec.train_fraction, derive_seed(seed, "bundle", 0))?;
        let standardizer = if ds.spec.standardize {
            Standardizer::fit(&train)?
        } else {
            Standardizer::identity(ds.n_features())
        };
        let train = standardizer.transform(&train).round_features(FEATURE_DECIMALS);
        let test = standardizer.transform(&test).round_features(FEATURE_DECIMALS);
        let (verb, eval) = split_verb_eval(&test, derive_seed(seed, "bundle", 1))?;
        Ok(SplitBundle {
            train,
            test,
            verb,
            eval,
            standardizer,
            seed,
        })
    }

    pub fn record(&self) -> SplitRecord {
        SplitRecord {
            format_version: 1,
            dataset: self.train.spec.name.as_str().to_string(),
            seed: self.seed,
            train: self.train.row_ids.clone(),
            test: self.test.row_ids.clone(),
            verb: self.verb.row_ids.clone(),
            eval: self.eval.row_ids.clone(),
            mean: self.standardizer.mean.clone(),
            std: self.standardizer.std.clone(),
        }
    }
}

/// Source-row indices of each partition, persisted for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub format_version: u32,
    pub dataset: String,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub verb: Vec<usize>,
    pub eval: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}
