//! Model pairs with controlled disagreement: multiplicative parameter noise,
//! band-calibrated search over a pool of perturbed models, and pairs from
//! training on a partially sign-flipped feature.

use crate::data::{negate_feature_fraction, DataError, SplitBundle};
use crate::models::{
    accuracy, random_search, train, DecisionTreeModel, FittedModel, HyperparamSpace,
    LogisticRegressionModel, MlpModel, ModelError, ModelKind, TrainedModel, TreeNode,
};
use crate::rng::{derive_seed, derived_rng, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PairgenError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("no pair found for {level} after {tried} candidates; nearest: {}", format_misses(.nearest))]
    CalibrationFailed {
        level: DisagreementLevel,
        tried: usize,
        nearest: Vec<NearMiss>,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("pair file {path}: {message}")]
    Io { path: String, message: String },
}

fn format_misses(misses: &[NearMiss]) -> String {
    let parts: Vec<String> = misses
        .iter()
        .map(|m| format!("disagreement {:.3}, accuracy gap {:.3}", m.disagreement, m.accuracy_gap))
        .collect();
    if parts.is_empty() {
        "none".into()
    } else {
        parts.join("; ")
    }
}

/// Target disagreement stratum, as a half-open band `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DisagreementLevel {
    L1,
    L2,
    L3,
}

impl DisagreementLevel {
    pub const ALL: [DisagreementLevel; 3] = [DisagreementLevel::L1, DisagreementLevel::L2, DisagreementLevel::L3];

    pub fn band(&self) -> (f64, f64) {
        match self {
            DisagreementLevel::L1 => (0.15, 0.20),
            DisagreementLevel::L2 => (0.20, 0.25),
            DisagreementLevel::L3 => (0.25, 0.30),
        }
    }

    pub fn contains(&self, rate: f64) -> bool {
        let (lo, hi) = self.band();
        rate >= lo && rate < hi
    }

    /// Distance from `rate` to the band, 0 inside it.
    pub fn distance(&self, rate: f64) -> f64 {
        let (lo, hi) = self.band();
        if rate < lo {
            lo - rate
        } else if rate >= hi {
            rate - hi + f64::EPSILON
        } else {
            0.0
        }
    }

    pub fn number(&self) -> u8 {
        match self {
            DisagreementLevel::L1 => 1,
            DisagreementLevel::L2 => 2,
            DisagreementLevel::L3 => 3,
        }
    }
}

impl fmt::Display for DisagreementLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.number())
    }
}

impl FromStr for DisagreementLevel {
    type Err = PairgenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim_start_matches(['L', 'l']) {
            "1" => Ok(DisagreementLevel::L1),
            "2" => Ok(DisagreementLevel::L2),
            "3" => Ok(DisagreementLevel::L3),
            _ => Err(PairgenError::InvalidRequest(format!("unknown level `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    BaseVsModified,
    ModifiedVsModified,
    DataVariation,
}

/// How a perturbed model was produced from its base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub m: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelPair {
    pub model_a: FittedModel,
    pub model_b: FittedModel,
    pub disagreement: f64,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// Absent for data-variation pairs, which carry no band constraint.
    pub level: Option<DisagreementLevel>,
    pub provenance: Provenance,
    /// Noise scale of the more perturbed side; absent for data-variation pairs.
    pub modification_factor: Option<f64>,
    pub perturbation_a: Option<Perturbation>,
    pub perturbation_b: Option<Perturbation>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearMiss {
    pub disagreement: f64,
    pub accuracy_gap: f64,
    pub perturbation_a: Option<Perturbation>,
    pub perturbation_b: Option<Perturbation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbOptions {
    /// Apply noise to LR intercepts as well as coefficients.
    pub perturb_intercepts: bool,
    /// Redraw DT hyperparameters and retrain before perturbing thresholds.
    pub dt_resample: bool,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        PerturbOptions {
            perturb_intercepts: true,
            dt_resample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Noise scales tried in order.
    pub grid: Vec<f64>,
    /// Perturbation seeds drawn per grid value.
    pub seeds_per_m: usize,
    pub max_accuracy_gap: f64,
    pub perturb: PerturbOptions,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            grid: (0..15).map(|k| 1e-3 * f64::from(1u32 << k)).collect(),
            seeds_per_m: 8,
            max_accuracy_gap: 0.05,
            perturb: PerturbOptions::default(),
        }
    }
}

impl CalibrationConfig {
    fn validate(&self) -> Result<(), PairgenError> {
        if self.grid.is_empty() || self.seeds_per_m == 0 || self.grid.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(PairgenError::InvalidRequest("calibration grid must be non-empty and non-negative".into()));
        }
        Ok(())
    }
}

/// Everything needed to train a base model and calibrate pairs around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairgenConfig {
    pub space: HyperparamSpace,
    pub k_folds: usize,
    pub n_candidates: usize,
    pub calibration: CalibrationConfig,
}

impl Default for PairgenConfig {
    fn default() -> Self {
        PairgenConfig {
            space: HyperparamSpace::default(),
            k_folds: 3,
            n_candidates: 20,
            calibration: CalibrationConfig::default(),
        }
    }
}

fn noise(rng: &mut Rng, m: f64) -> f64 {
    // std 0 yields exactly 0, so m = 0 leaves parameters bit-identical
    Normal::new(0.0, m).expect("finite non-negative noise scale").sample(rng)
}

/// Each coefficient (and, if enabled, intercept) becomes `β·(1+ε)`, `ε ~ N(0, m)`.
pub fn perturb_lr(base: &LogisticRegressionModel, m: f64, seed: u64, perturb_intercepts: bool) -> LogisticRegressionModel {
    let mut rng = derived_rng(seed, "perturb-lr", 0);
    let mut out = base.clone();
    for w in out.coefficients.iter_mut().flatten() {
        *w *= 1.0 + noise(&mut rng, m);
    }
    if perturb_intercepts {
        for b in &mut out.intercepts {
            *b *= 1.0 + noise(&mut rng, m);
        }
    }
    out
}

/// Every threshold becomes `τ·(1+ε)`; topology is preserved.
pub fn perturb_thresholds(tree: &DecisionTreeModel, m: f64, seed: u64) -> DecisionTreeModel {
    let mut rng = derived_rng(seed, "perturb-dt", 0);
    let mut out = tree.clone();
    for node in &mut out.nodes {
        if let TreeNode::Split { threshold, .. } = node {
            *threshold *= 1.0 + noise(&mut rng, m);
        }
    }
    out
}

/// Two stages: optionally redraw hyperparameters from `space` and retrain on
/// `bundle.train`, then apply threshold noise to the resulting tree.
pub fn perturb_dt(
    base: &FittedModel,
    space: &HyperparamSpace,
    bundle: &SplitBundle,
    m: f64,
    seed: u64,
    resample: bool,
) -> Result<FittedModel, PairgenError> {
    let (tree, hyperparams, training_seed) = if resample {
        let mut rng = derived_rng(seed, "resample-dt", 0);
        let hp = space.sample(ModelKind::Dt, &mut rng);
        let training_seed = rng.random();
        match train(&hp, &bundle.train, training_seed)? {
            TrainedModel::Dt(t) => (t, hp, training_seed),
            _ => unreachable!("decision tree hyperparameters train a tree"),
        }
    } else {
        match &base.model {
            TrainedModel::Dt(t) => (t.clone(), base.hyperparams.clone(), base.training_seed),
            other => {
                return Err(PairgenError::InvalidRequest(format!("perturb_dt given a {} model", other.kind())));
            }
        }
    };
    Ok(FittedModel {
        model: TrainedModel::Dt(perturb_thresholds(&tree, m, seed)),
        hyperparams,
        training_seed,
    })
}

/// Every entry of W1, b1, W2, b2 becomes `w·(1+ε)`.
pub fn perturb_mlp(base: &MlpModel, m: f64, seed: u64) -> MlpModel {
    let mut rng = derived_rng(seed, "perturb-mlp", 0);
    let mut out = base.clone();
    for w in out.params_mut() {
        *w *= 1.0 + noise(&mut rng, m);
    }
    out
}

/// Dispatches to the kind-specific perturbation.
pub fn perturb(
    base: &FittedModel,
    m: f64,
    seed: u64,
    space: &HyperparamSpace,
    bundle: &SplitBundle,
    options: &PerturbOptions,
) -> Result<FittedModel, PairgenError> {
    let model = match &base.model {
        TrainedModel::Lr(lr) => TrainedModel::Lr(perturb_lr(lr, m, seed, options.perturb_intercepts)),
        TrainedModel::Mlp(mlp) => TrainedModel::Mlp(perturb_mlp(mlp, m, seed)),
        TrainedModel::Dt(_) => return perturb_dt(base, space, bundle, m, seed, options.dt_resample),
    };
    Ok(FittedModel {
        model,
        hyperparams: base.hyperparams.clone(),
        training_seed: base.training_seed,
    })
}

pub fn disagreement_from_predictions(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

/// Fraction of rows on which the two models predict different classes.
pub fn disagreement_rate(a: &TrainedModel, b: &TrainedModel, x: &[Vec<f64>]) -> Result<f64, ModelError> {
    if a.n_features() != b.n_features() {
        return Err(ModelError::DimensionMismatch {
            expected: a.n_features(),
            found: b.n_features(),
        });
    }
    Ok(disagreement_from_predictions(&a.predict(x)?, &b.predict(x)?))
}

/// A perturbed model with its test-split predictions.
struct PoolEntry {
    model: FittedModel,
    perturbation: Perturbation,
    preds: Vec<u32>,
    accuracy: f64,
}

fn perturbation_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, "perturb", index as u64)
}

/// The perturbed candidates in grid order (m ascending, then seed index).
fn build_pool(
    base: &FittedModel,
    bundle: &SplitBundle,
    space: &HyperparamSpace,
    config: &CalibrationConfig,
    seed: u64,
) -> Result<Vec<PoolEntry>, PairgenError> {
    let slots: Vec<(usize, f64)> = config
        .grid
        .iter()
        .flat_map(|&m| std::iter::repeat_n(m, config.seeds_per_m))
        .enumerate()
        .collect();
    slots
        .par_iter()
        .map(|&(i, m)| {
            let pseed = perturbation_seed(seed, i);
            let model = perturb(base, m, pseed, space, bundle, &config.perturb)?;
            let preds = model.model.predict(&bundle.test.features)?;
            let accuracy = accuracy(&preds, &bundle.test.targets);
            Ok(PoolEntry {
                model,
                perturbation: Perturbation { m, seed: pseed },
                preds,
                accuracy,
            })
        })
        .collect()
}

struct Misses {
    level: DisagreementLevel,
    max_gap: f64,
    best: Vec<(f64, NearMiss)>,
    tried: usize,
}

impl Misses {
    fn new(level: DisagreementLevel, max_gap: f64) -> Self {
        Misses {
            level,
            max_gap,
            best: Vec::new(),
            tried: 0,
        }
    }

    fn record(&mut self, miss: NearMiss) {
        self.tried += 1;
        let score = self.level.distance(miss.disagreement) + (miss.accuracy_gap - self.max_gap).max(0.0);
        let pos = self.best.partition_point(|(s, _)| *s <= score);
        if pos < 3 {
            self.best.insert(pos, (score, miss));
            self.best.truncate(3);
        }
    }

    fn into_error(self) -> PairgenError {
        PairgenError::CalibrationFailed {
            level: self.level,
            tried: self.tried,
            nearest: self.best.into_iter().map(|(_, m)| m).collect(),
        }
    }
}

fn acceptable(level: DisagreementLevel, max_gap: f64, disagreement: f64, gap: f64) -> bool {
    level.contains(disagreement) && gap <= max_gap + 1e-12
}

/// Perturbs `base` over the noise grid, `seeds_per_m` draws per value, and
/// returns the first base-vs-modified pair inside the band whose accuracy gap
/// is within budget.
pub fn calibrate_pair(
    base: &FittedModel,
    level: DisagreementLevel,
    bundle: &SplitBundle,
    space: &HyperparamSpace,
    config: &CalibrationConfig,
    seed: u64,
) -> Result<ModelPair, PairgenError> {
    config.validate()?;
    let base_preds = base.model.predict(&bundle.test.features)?;
    let base_acc = accuracy(&base_preds, &bundle.test.targets);
    let mut misses = Misses::new(level, config.max_accuracy_gap);
    let mut index = 0;
    for &m in &config.grid {
        for _ in 0..config.seeds_per_m {
            let pseed = perturbation_seed(seed, index);
            index += 1;
            let model = perturb(base, m, pseed, space, bundle, &config.perturb)?;
            let preds = model.model.predict(&bundle.test.features)?;
            let acc = accuracy(&preds, &bundle.test.targets);
            let dis = disagreement_from_predictions(&base_preds, &preds);
            let perturbation = Perturbation { m, seed: pseed };
            if acceptable(level, config.max_accuracy_gap, dis, (base_acc - acc).abs()) {
                return Ok(ModelPair {
                    model_a: base.clone(),
                    model_b: model,
                    disagreement: dis,
                    accuracy_a: base_acc,
                    accuracy_b: acc,
                    level: Some(level),
                    provenance: Provenance::BaseVsModified,
                    modification_factor: Some(m),
                    perturbation_a: None,
                    perturbation_b: Some(perturbation),
                    seed,
                });
            }
            misses.record(NearMiss {
                disagreement: dis,
                accuracy_gap: (base_acc - acc).abs(),
                perturbation_a: None,
                perturbation_b: Some(perturbation),
            });
        }
    }
    Err(misses.into_error())
}

/// Builds `n_pairs` pairs around an already trained base. Slots alternate
/// between base-vs-modified and modified-vs-modified pairs, falling back to
/// the other provenance when one runs dry. Each perturbed model is used in at
/// most one pair when possible, and no pair repeats.
pub fn suite_from_base(
    base: &FittedModel,
    level: DisagreementLevel,
    bundle: &SplitBundle,
    n_pairs: usize,
    space: &HyperparamSpace,
    config: &CalibrationConfig,
    seed: u64,
) -> Result<Vec<ModelPair>, PairgenError> {
    if n_pairs == 0 {
        return Err(PairgenError::InvalidRequest("n_pairs must be at least 1".into()));
    }
    config.validate()?;
    let base_preds = base.model.predict(&bundle.test.features)?;
    let base_acc = accuracy(&base_preds, &bundle.test.targets);
    let pool = build_pool(base, bundle, space, config, seed)?;
    let gap = config.max_accuracy_gap;
    let mut misses = Misses::new(level, gap);

    let mut bvm = Vec::new();
    for (i, e) in pool.iter().enumerate() {
        let dis = disagreement_from_predictions(&base_preds, &e.preds);
        let g = (base_acc - e.accuracy).abs();
        if acceptable(level, gap, dis, g) {
            bvm.push((i, dis));
        } else {
            misses.record(NearMiss {
                disagreement: dis,
                accuracy_gap: g,
                perturbation_a: None,
                perturbation_b: Some(e.perturbation),
            });
        }
    }
    let mut mvm = Vec::new();
    for j in 0..pool.len() {
        for i in 0..j {
            let dis = disagreement_from_predictions(&pool[i].preds, &pool[j].preds);
            let g = (pool[i].accuracy - pool[j].accuracy).abs();
            if acceptable(level, gap, dis, g) {
                mvm.push((i, j, dis));
            } else if level.distance(dis) < 0.05 {
                misses.record(NearMiss {
                    disagreement: dis,
                    accuracy_gap: g,
                    perturbation_a: Some(pool[i].perturbation),
                    perturbation_b: Some(pool[j].perturbation),
                });
            }
        }
    }

    // (a, b) pool indices; None stands for the base model
    let mut chosen: Vec<(Option<usize>, usize, f64)> = Vec::new();
    for strict in [true, false] {
        chosen.clear();
        let mut used = vec![false; pool.len()];
        let mut taken_b = vec![false; bvm.len()];
        let mut taken_m = vec![false; mvm.len()];
        for slot in 0..n_pairs {
            let prefer_bvm = slot % 2 == 0;
            let mut pick = None;
            for try_bvm in [prefer_bvm, !prefer_bvm] {
                if try_bvm {
                    if let Some(k) = (0..bvm.len()).find(|&k| !taken_b[k] && (!strict || !used[bvm[k].0])) {
                        taken_b[k] = true;
                        pick = Some((None, bvm[k].0, bvm[k].1));
                    }
                } else if let Some(k) =
                    (0..mvm.len()).find(|&k| !taken_m[k] && (!strict || (!used[mvm[k].0] && !used[mvm[k].1])))
                {
                    taken_m[k] = true;
                    pick = Some((Some(mvm[k].0), mvm[k].1, mvm[k].2));
                }
                if pick.is_some() {
                    break;
                }
            }
            let Some(p) = pick else { break };
            if let Some(a) = p.0 {
                used[a] = true;
            }
            used[p.1] = true;
            chosen.push(p);
        }
        if chosen.len() == n_pairs {
            break;
        }
    }
    if chosen.len() < n_pairs {
        return Err(misses.into_error());
    }

    Ok(chosen
        .into_iter()
        .map(|(a, b, dis)| {
            let eb = &pool[b];
            match a {
                None => ModelPair {
                    model_a: base.clone(),
                    model_b: eb.model.clone(),
                    disagreement: dis,
                    accuracy_a: base_acc,
                    accuracy_b: eb.accuracy,
                    level: Some(level),
                    provenance: Provenance::BaseVsModified,
                    modification_factor: Some(eb.perturbation.m),
                    perturbation_a: None,
                    perturbation_b: Some(eb.perturbation),
                    seed,
                },
                Some(a) => {
                    let ea = &pool[a];
                    ModelPair {
                        model_a: ea.model.clone(),
                        model_b: eb.model.clone(),
                        disagreement: dis,
                        accuracy_a: ea.accuracy,
                        accuracy_b: eb.accuracy,
                        level: Some(level),
                        provenance: Provenance::ModifiedVsModified,
                        modification_factor: Some(ea.perturbation.m.max(eb.perturbation.m)),
                        perturbation_a: Some(ea.perturbation),
                        perturbation_b: Some(eb.perturbation),
                        seed,
                    }
                }
            }
        })
        .collect())
}

/// Base model selected by randomized CV search on `bundle.train`.
pub fn train_base(kind: ModelKind, bundle: &SplitBundle, config: &PairgenConfig, seed: u64) -> Result<FittedModel, PairgenError> {
    let out = random_search(
        kind,
        &config.space,
        &bundle.train,
        config.k_folds,
        config.n_candidates,
        derive_seed(seed, "base", 0),
    )?;
    Ok(out.model)
}

/// Trains a base by random search, then fills a suite around it.
pub fn generate_pair_suite(
    kind: ModelKind,
    level: DisagreementLevel,
    bundle: &SplitBundle,
    n_pairs: usize,
    config: &PairgenConfig,
    seed: u64,
) -> Result<Vec<ModelPair>, PairgenError> {
    let base = train_base(kind, bundle, config, seed)?;
    suite_from_base(&base, level, bundle, n_pairs, &config.space, &config.calibration, seed)
}

/// model_a is the searched base; model_b reuses its hyperparameters and
/// training seed on a copy of the train split where `fraction` of `feature`'s
/// values are negated. Both are scored on the unmodified test split.
pub fn pair_via_data_variation(
    kind: ModelKind,
    bundle: &SplitBundle,
    feature: &str,
    fraction: f64,
    config: &PairgenConfig,
    seed: u64,
) -> Result<ModelPair, PairgenError> {
    let negated = negate_feature_fraction(&bundle.train, feature, fraction, derive_seed(seed, "negate", 0))?;
    let model_a = train_base(kind, bundle, config, seed)?;
    let model_b = FittedModel {
        model: train(&model_a.hyperparams, &negated, model_a.training_seed)?,
        hyperparams: model_a.hyperparams.clone(),
        training_seed: model_a.training_seed,
    };
    let x = &bundle.test.features;
    let y = &bundle.test.targets;
    Ok(ModelPair {
        disagreement: disagreement_rate(&model_a.model, &model_b.model, x)?,
        accuracy_a: model_a.model.accuracy(x, y)?,
        accuracy_b: model_b.model.accuracy(x, y)?,
        model_a,
        model_b,
        level: None,
        provenance: Provenance::DataVariation,
        modification_factor: None,
        perturbation_a: None,
        perturbation_b: None,
        seed,
    })
}

pub const PAIR_FORMAT_VERSION: u32 = 1;

/// `pair.json`: pair metadata referencing the two model documents beside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub format_version: u32,
    pub kind: ModelKind,
    pub level: Option<DisagreementLevel>,
    pub provenance: Provenance,
    pub disagreement: f64,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub modification_factor: Option<f64>,
    pub perturbation_a: Option<Perturbation>,
    pub perturbation_b: Option<Perturbation>,
    pub seed: u64,
    pub model_a: String,
    pub model_b: String,
}

impl ModelPair {
    pub fn kind(&self) -> ModelKind {
        self.model_a.kind()
    }

    pub fn record(&self) -> PairRecord {
        PairRecord {
            format_version: PAIR_FORMAT_VERSION,
            kind: self.kind(),
            level: self.level,
            provenance: self.provenance,
            disagreement: self.disagreement,
            accuracy_a: self.accuracy_a,
            accuracy_b: self.accuracy_b,
            modification_factor: self.modification_factor,
            perturbation_a: self.perturbation_a,
            perturbation_b: self.perturbation_b,
            seed: self.seed,
            model_a: "model_a.json".into(),
            model_b: "model_b.json".into(),
        }
    }

    /// The three JSON documents that persist this pair, as (file name, text).
    pub fn documents(&self) -> [(String, String); 3] {
        let record = self.record();
        [
            (
                "pair.json".to_string(),
                serde_json::to_string_pretty(&record).expect("pair record serializes"),
            ),
            (record.model_a.clone(), self.model_a.to_json()),
            (record.model_b.clone(), self.model_b.to_json()),
        ]
    }

    pub fn load(dir: &Path) -> Result<ModelPair, PairgenError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| PairgenError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        let record: PairRecord = serde_json::from_str(&read("pair.json")?).map_err(|e| PairgenError::Io {
            path: dir.join("pair.json").display().to_string(),
            message: e.to_string(),
        })?;
        let model_a = FittedModel::from_json(&read(&record.model_a)?)?;
        let model_b = FittedModel::from_json(&read(&record.model_b)?)?;
        Ok(ModelPair {
            model_a,
            model_b,
            disagreement: record.disagreement,
            accuracy_a: record.accuracy_a,
            accuracy_b: record.accuracy_b,
            level: record.level,
            provenance: record.provenance,
            modification_factor: record.modification_factor,
            perturbation_a: record.perturbation_a,
            perturbation_b: record.perturbation_b,
            seed: record.seed,
        })
    }

    /// Recomputes disagreement and accuracies from the stored models and
    /// checks them against the recorded values and the pair's constraints.
    pub fn audit(&self, bundle: &SplitBundle, max_accuracy_gap: f64) -> Result<(), String> {
        let x = &bundle.test.features;
        let y = &bundle.test.targets;
        let pa = self.model_a.model.predict(x).map_err(|e| e.to_string())?;
        let pb = self.model_b.model.predict(x).map_err(|e| e.to_string())?;
        let dis = disagreement_from_predictions(&pa, &pb);
        let (acc_a, acc_b) = (accuracy(&pa, y), accuracy(&pb, y));
        if dis != self.disagreement || acc_a != self.accuracy_a || acc_b != self.accuracy_b {
            return Err(format!(
                "re-measured ({dis}, {acc_a}, {acc_b}) differs from recorded ({}, {}, {})",
                self.disagreement, self.accuracy_a, self.accuracy_b
            ));
        }
        if let Some(level) = self.level {
            if !level.contains(dis) {
                return Err(format!("disagreement {dis} outside {level}"));
            }
            if (acc_a - acc_b).abs() > max_accuracy_gap + 1e-12 {
                return Err(format!("accuracy gap {} exceeds {max_accuracy_gap}", (acc_a - acc_b).abs()));
            }
        }
        if self.model_a.model.n_features() != self.model_b.model.n_features() {
            return Err("models disagree on feature count".into());
        }
        Ok(())
    }
}
