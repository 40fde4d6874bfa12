//! Stage runner: splits → base model and pairs → verbalizations →
//! simulations → metrics → report. Every stage persists its outputs under
//! the run directory and reuses them on the next run when their inputs are
//! unchanged.
//!
//! ```text
//! splits.json
//! pairs/<dataset>/<kind>/{inputs.json, base.json}
//! pairs/<dataset>/<kind>/<L1|L2|L3|data_variation>/pair_<i>/{pair,model_a,model_b}.json
//! runs/<dataset>/<kind>/<level<N>|data_variation>/pair_<i>/<verbalizer>/
//!     verbalization_prompt.txt  verbalization.json
//!     eval_<0to1|1to0>_prompt.txt  eval_<dir>_response.txt  simulation_<dir>.json
//! metrics/<dataset>/<kind>/<condition>/<verbalizer>/pair_<i>.json
//! reports/{report.csv, report.md, summary.json}
//! manifest.json  timings.json
//! ```

use crate::config::{ConfigError, ExperimentConfig, LevelSpec, MockEvaluator};
use crate::report::{render_csv, render_markdown, summarize, MetricsRecord, SummaryDoc, METRICS_FORMAT_VERSION};
use modeldiff::data::{load_builtin, DataError, SplitBundle};
use modeldiff::evaluation::{compute_metrics, simulate_prompt, EvalError, SimulationResult};
use modeldiff::llm::{prompt_digest, sha256_hex, write_atomic, Evaluator, LlmClient, LlmError, Verbalization, Verbalizer};
use modeldiff::models::{describe_internals, FittedModel, ModelKind};
use modeldiff::pairgen::{pair_via_data_variation, suite_from_base, train_base, DisagreementLevel, ModelPair, PairgenError};
use modeldiff::prompts::{
    assemble_evaluation_prompt, assemble_verbalization_prompt, Direction, PromptError, PromptKind, PromptTemplate,
};
use modeldiff::rng::derive_seed;
use modeldiff::sampling::{build_eval_sample, build_representative_sample};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Pairgen(#[from] PairgenError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("no metrics records to report")]
    EmptyInput,
    #[error("artifact {path} does not match its manifest digest")]
    DigestMismatch { path: String },
}

impl RunError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Data(_) => "data",
            RunError::Pairgen(_) => "pairgen",
            RunError::Llm(_) => "llm",
            RunError::Prompt(_) => "prompt",
            RunError::Eval(_) => "evaluation",
            RunError::Io { .. } => "io",
            RunError::EmptyInput => "empty_input",
            RunError::DigestMismatch { .. } => "digest_mismatch",
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// How far a run goes. Each later stage includes the earlier ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Pairs,
    Verbalize,
    Evaluate,
    Report,
}

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    /// Relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub pair_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub id: String,
    pub dir: String,
    pub kind: ModelKind,
    pub level: Option<DisagreementLevel>,
    pub provenance: modeldiff::pairgen::Provenance,
    pub disagreement: f64,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
}

/// Everything a run produced, with content digests. Wall-clock times and
/// call counts live in `timings.json` so that reruns of the same
/// experiment reproduce this file exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub config_digest: String,
    pub mock: bool,
    /// Stage name → artifacts, sorted by path.
    pub artifacts: BTreeMap<String, Vec<ArtifactRef>>,
    pub pairs: Vec<PairEntry>,
    pub failures: Vec<StageFailure>,
}

impl RunManifest {
    pub fn load(run_dir: &Path) -> Result<RunManifest, RunError> {
        let path = run_dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(&path, e))
    }

    pub fn stage(&self, name: &str) -> &[ArtifactRef] {
        self.artifacts.get(name).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Seconds per stage.
    pub stages: BTreeMap<String, f64>,
    /// Verbalizer and evaluator requests issued (not counting cache hits
    /// inside the live client).
    pub channel_calls: usize,
    /// Verbalizations and simulations reused from disk.
    pub reused: usize,
}

/// Mutable state of one run.
struct Run {
    root: PathBuf,
    artifacts: Mutex<BTreeMap<String, BTreeSet<String>>>,
    failures: Mutex<Vec<StageFailure>>,
    pairs: Mutex<Vec<PairEntry>>,
    calls: AtomicUsize,
    reused: AtomicUsize,
    timings: Mutex<BTreeMap<String, f64>>,
}

impl Run {
    fn new(root: &Path) -> Run {
        Run {
            root: root.to_path_buf(),
            artifacts: Mutex::default(),
            failures: Mutex::default(),
            pairs: Mutex::default(),
            calls: AtomicUsize::new(0),
            reused: AtomicUsize::new(0),
            timings: Mutex::default(),
        }
    }

    fn track(&self, stage: &str, rel: &str) {
        self.artifacts.lock().expect("lock").entry(stage.to_string()).or_default().insert(rel.to_string());
    }

    /// Writes unless the file already holds exactly these bytes.
    fn write(&self, stage: &str, rel: &str, bytes: &[u8]) -> Result<(), RunError> {
        let path = self.root.join(rel);
        if std::fs::read(&path).ok().as_deref() != Some(bytes) {
            write_atomic(&path, bytes).map_err(|e| io_err(&path, e))?;
        }
        self.track(stage, rel);
        Ok(())
    }

    fn read(&self, rel: &str) -> Option<String> {
        std::fs::read_to_string(self.root.join(rel)).ok()
    }

    fn fail(&self, stage: &str, pair_id: &str, e: impl std::fmt::Display) {
        log::error!("{stage} failed for {pair_id}: {e}");
        self.failures.lock().expect("lock").push(StageFailure {
            stage: stage.into(),
            pair_id: pair_id.into(),
            message: e.to_string(),
        });
    }

    fn timed<T>(&self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.lock().expect("lock").entry(stage.into()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    fn manifest(&self, config: &ExperimentConfig) -> Result<RunManifest, RunError> {
        let mut artifacts = BTreeMap::new();
        for (stage, paths) in self.artifacts.lock().expect("lock").iter() {
            let refs = paths
                .iter()
                .map(|rel| {
                    let path = self.root.join(rel);
                    let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
                    Ok(ArtifactRef {
                        path: rel.clone(),
                        sha256: sha256_hex(&bytes),
                    })
                })
                .collect::<Result<Vec<_>, RunError>>()?;
            artifacts.insert(stage.clone(), refs);
        }
        let mut pairs = self.pairs.lock().expect("lock").clone();
        pairs.sort_by(|a, b| a.id.cmp(&b.id));
        let mut failures = self.failures.lock().expect("lock").clone();
        failures.sort_by(|a, b| (&a.stage, &a.pair_id).cmp(&(&b.stage, &b.pair_id)));
        Ok(RunManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_digest: config.digest(),
            mock: config.mock,
            artifacts,
            pairs,
            failures,
        })
    }

    fn finish(&self, config: &ExperimentConfig, report: bool) -> Result<RunManifest, RunError> {
        let mut manifest = self.manifest(config)?;
        if report && !manifest.stage("metrics").is_empty() {
            let written = self.timed("report", || emit_report(&manifest, &self.root))?;
            manifest.artifacts.insert("reports".into(), written);
        }
        let timings = Timings {
            stages: self.timings.lock().expect("lock").clone(),
            channel_calls: self.calls.load(Ordering::SeqCst),
            reused: self.reused.load(Ordering::SeqCst),
        };
        write_json(&self.root.join("timings.json"), &timings)?;
        write_json(&self.root.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    write_atomic(path, text.as_bytes()).map_err(|e| io_err(path, e))
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    (serde_json::to_string_pretty(value).expect("serializable") + "\n").into_bytes()
}

/// Prompt-level treatment of a group of pairs.
#[derive(Debug, Clone)]
struct Condition {
    /// Directory name under `runs/<dataset>/<kind>/`.
    dir: String,
    level: Option<u8>,
    with_internals: bool,
    omit_model_type: bool,
}

impl Condition {
    fn from_level(spec: &LevelSpec) -> Condition {
        Condition {
            dir: format!("level{}", spec.number),
            level: Some(spec.number),
            with_internals: spec.with_internals,
            omit_model_type: spec.omit_model_type,
        }
    }

    fn data_variation() -> Condition {
        Condition {
            dir: "data_variation".into(),
            level: None,
            with_internals: false,
            omit_model_type: false,
        }
    }
}

/// Pairs of one kind evaluated under one condition.
struct Cell {
    kind: ModelKind,
    condition: Condition,
    pairs: Vec<ModelPair>,
}

struct Channels {
    verbalizers: Vec<Verbalizer>,
    evaluator: Evaluator,
    pool: rayon::ThreadPool,
}

impl Channels {
    fn new(config: &ExperimentConfig) -> Result<Channels, RunError> {
        let (verbalizers, evaluator) = if config.mock {
            let evaluator = match config.mock_evaluator {
                MockEvaluator::Rule => Evaluator::MockRule,
                MockEvaluator::Copy => Evaluator::Copy,
            };
            (vec![Verbalizer::MockOracle], evaluator)
        } else {
            let cache = Some(config.cache_dir());
            let verbalizers = config
                .verbalizers
                .iter()
                .map(|c| LlmClient::new(c.clone(), cache.clone()).map(Verbalizer::Live))
                .collect::<Result<Vec<_>, _>>()?;
            let evaluator_config = config.evaluator.clone().expect("validated: live runs have an evaluator");
            (verbalizers, Evaluator::Live(LlmClient::new(evaluator_config, cache)?))
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.max_in_flight)
            .build()
            .map_err(|e| RunError::Io {
                path: PathBuf::new(),
                message: format!("thread pool: {e}"),
            })?;
        Ok(Channels {
            verbalizers,
            evaluator,
            pool,
        })
    }
}

fn slug(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '-' })
        .collect()
}

fn prepare_bundle(config: &ExperimentConfig, run: &Run) -> Result<SplitBundle, RunError> {
    let ds = load_builtin(&config.data_dir, config.dataset)?;
    let bundle = SplitBundle::prepare(&ds, derive_seed(config.seed, "splits", 0))?;
    run.write("splits", "splits.json", &pretty(&bundle.record()))?;
    Ok(bundle)
}

fn pair_entry(id: String, dir: String, pair: &ModelPair) -> PairEntry {
    PairEntry {
        id,
        dir,
        kind: pair.kind(),
        level: pair.level,
        provenance: pair.provenance,
        disagreement: pair.disagreement,
        accuracy_a: pair.accuracy_a,
        accuracy_b: pair.accuracy_b,
    }
}

/// Loads `n` persisted pairs, or `None` if any is missing or unreadable.
fn load_pairs(run: &Run, dir: &str, n: usize) -> Option<Vec<ModelPair>> {
    (0..n).map(|i| ModelPair::load(&run.root.join(format!("{dir}/pair_{i}"))).ok()).collect()
}

fn save_pairs(run: &Run, dir: &str, pairs: &[ModelPair]) -> Result<(), RunError> {
    for (i, pair) in pairs.iter().enumerate() {
        for (name, text) in pair.documents() {
            let stage = if name == "pair.json" { "pairs" } else { "models" };
            run.write(stage, &format!("{dir}/pair_{i}/{name}"), text.as_bytes())?;
        }
        run.pairs
            .lock()
            .expect("lock")
            .push(pair_entry(format!("{dir}/pair_{i}").trim_start_matches("pairs/").to_string(), format!("{dir}/pair_{i}"), pair));
    }
    Ok(())
}

/// Digest of everything pair generation depends on, stored beside the pairs.
fn pair_inputs(config: &ExperimentConfig, kind: ModelKind, extra: serde_json::Value) -> String {
    let inputs = json!({
        "dataset": config.dataset,
        "kind": kind,
        "seed": config.seed,
        "n_pairs": config.n_pairs,
        "pairgen": config.pairgen,
        "extra": extra,
    });
    sha256_hex(inputs.to_string().as_bytes())
}

fn inputs_match(run: &Run, rel: &str, key: &str) -> bool {
    run.read(rel)
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .is_some_and(|v| v["inputs"] == key)
}

fn level_cells(config: &ExperimentConfig, bundle: &SplitBundle, run: &Run) -> Result<Vec<Cell>, RunError> {
    let kind = config.require_kind()?;
    let base_dir = format!("pairs/{}/{}", config.dataset.as_str(), kind.as_str());
    let key = pair_inputs(config, kind, json!(null));
    let inputs_rel = format!("{base_dir}/inputs.json");
    let base_rel = format!("{base_dir}/base.json");
    let fresh = inputs_match(run, &inputs_rel, &key);

    let base = match run.read(&base_rel).filter(|_| fresh).and_then(|t| FittedModel::from_json(&t).ok()) {
        Some(base) => base,
        None => {
            let base = run.timed("pairs", || train_base(kind, bundle, &config.pairgen, derive_seed(config.seed, "pairs", 0)));
            match base {
                Ok(base) => base,
                Err(e) => {
                    run.fail("pairs", &base_dir, &e);
                    return Ok(Vec::new());
                }
            }
        }
    };
    run.write("models", &base_rel, base.to_json().as_bytes())?;
    run.write("pairs", &inputs_rel, &pretty(&json!({ "inputs": key })))?;

    let specs = config.level_specs();
    let bands: BTreeSet<DisagreementLevel> = specs.iter().map(|s| s.band).collect();
    let mut suites: BTreeMap<DisagreementLevel, Vec<ModelPair>> = BTreeMap::new();
    for band in bands {
        let dir = format!("{base_dir}/{band}");
        let loaded = if fresh { load_pairs(run, &dir, config.n_pairs) } else { None };
        let suite = match loaded {
            Some(pairs) => pairs,
            None => {
                let seed = derive_seed(config.seed, "suite", u64::from(band.number()));
                let pg = &config.pairgen;
                match run.timed("pairs", || {
                    suite_from_base(&base, band, bundle, config.n_pairs, &pg.space, &pg.calibration, seed)
                }) {
                    Ok(pairs) => pairs,
                    Err(e) => {
                        run.fail("pairs", &dir, &e);
                        continue;
                    }
                }
            }
        };
        save_pairs(run, &dir, &suite)?;
        suites.insert(band, suite);
    }
    Ok(specs
        .iter()
        .filter_map(|s| {
            suites.get(&s.band).map(|pairs| Cell {
                kind,
                condition: Condition::from_level(s),
                pairs: pairs.clone(),
            })
        })
        .collect())
}

fn data_variation_cells(config: &ExperimentConfig, bundle: &SplitBundle, run: &Run) -> Result<Vec<Cell>, RunError> {
    let dv = config
        .data_variation
        .as_ref()
        .ok_or_else(|| ConfigError::Invalid("a [data_variation] section is required".into()))?;
    let mut cells = Vec::new();
    for &kind in &dv.kinds {
        let base_dir = format!("pairs/{}/{}", config.dataset.as_str(), kind.as_str());
        let dir = format!("{base_dir}/data_variation");
        let key = pair_inputs(config, kind, json!({"feature": dv.feature, "fraction": dv.fraction}));
        let inputs_rel = format!("{dir}/inputs.json");
        let cached = if inputs_match(run, &inputs_rel, &key) { load_pairs(run, &dir, 1) } else { None };
        let pair = match cached {
            Some(mut pairs) => pairs.remove(0),
            None => {
                let seed = derive_seed(config.seed, "data-variation", 0);
                match run.timed("pairs", || {
                    pair_via_data_variation(kind, bundle, &dv.feature, dv.fraction, &config.pairgen, seed)
                }) {
                    Ok(p) => p,
                    Err(e) => {
                        run.fail("pairs", &dir, &e);
                        continue;
                    }
                }
            }
        };
        run.write("pairs", &inputs_rel, &pretty(&json!({ "inputs": key })))?;
        save_pairs(run, &dir, std::slice::from_ref(&pair))?;
        cells.push(Cell {
            kind,
            condition: Condition::data_variation(),
            pairs: vec![pair],
        });
    }
    Ok(cells)
}

/// One pair × verbalizer slot in a cell.
struct Slot<'a> {
    cell: &'a Cell,
    index: usize,
    verbalizer: usize,
    dir: String,
    pair_id: String,
}

fn slots<'a>(config: &ExperimentConfig, cells: &'a [Cell], channels: &Channels) -> Vec<Slot<'a>> {
    let mut out = Vec::new();
    for cell in cells {
        for index in 0..cell.pairs.len() {
            for (v, verbalizer) in channels.verbalizers.iter().enumerate() {
                let pair_id = format!(
                    "{}/{}/{}/pair_{index}",
                    config.dataset.as_str(),
                    cell.kind.as_str(),
                    cell.condition.dir
                );
                out.push(Slot {
                    cell,
                    index,
                    verbalizer: v,
                    dir: format!("runs/{pair_id}/{}", slug(&verbalizer.id())),
                    pair_id,
                });
            }
        }
    }
    out
}

fn verbalization_prompt(config: &ExperimentConfig, bundle: &SplitBundle, slot: &Slot) -> Result<String, RunError> {
    let cond = &slot.cell.condition;
    let pair = &slot.cell.pairs[slot.index];
    let template =
        PromptTemplate::builtin(config.dataset, PromptKind::Verbalization, cond.with_internals, cond.omit_model_type)?;
    let sample = build_representative_sample(bundle, pair).map_err(PairgenError::from)?;
    let spec = &bundle.verb.spec;
    let internals = cond
        .with_internals
        .then(|| (describe_internals(&pair.model_a.model, spec), describe_internals(&pair.model_b.model, spec)));
    Ok(assemble_verbalization_prompt(
        &template,
        Some(slot.cell.kind.type_name()),
        &sample.to_json(),
        internals.as_ref().map(|(a, b)| (a.as_str(), b.as_str())),
    )?)
}

fn verbalize_stage(
    config: &ExperimentConfig,
    bundle: &SplitBundle,
    slots: &[Slot],
    channels: &Channels,
    run: &Run,
) -> Result<Vec<Option<Verbalization>>, RunError> {
    let work = |slot: &Slot| -> Result<Verbalization, RunError> {
        let prompt = verbalization_prompt(config, bundle, slot)?;
        run.write("prompts", &format!("{}/verbalization_prompt.txt", slot.dir), prompt.as_bytes())?;
        let verbalizer = &channels.verbalizers[slot.verbalizer];
        let rel = format!("{}/verbalization.json", slot.dir);
        let digest = prompt_digest(&prompt);
        if let Some(v) = run
            .read(&rel)
            .and_then(|t| serde_json::from_str::<Verbalization>(&t).ok())
            .filter(|v| v.prompt_digest == digest && v.verbalizer == verbalizer.id() && !v.text.trim().is_empty())
        {
            run.reused.fetch_add(1, Ordering::SeqCst);
            run.track("verbalizations", &rel);
            return Ok(v);
        }
        run.calls.fetch_add(1, Ordering::SeqCst);
        let v = verbalizer.verbalize(&slot.cell.pairs[slot.index], &bundle.verb.spec, &prompt)?;
        run.write("verbalizations", &rel, &pretty(&v))?;
        Ok(v)
    };
    let results: Vec<Result<Verbalization, RunError>> =
        run.timed("verbalize", || channels.pool.install(|| slots.par_iter().map(work).collect()));
    Ok(results
        .into_iter()
        .zip(slots)
        .map(|(r, slot)| r.map_err(|e| run.fail("verbalize", &slot.pair_id, e)).ok())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimulationRecord {
    evaluator: String,
    /// Digest of the assembled evaluation prompt (before any re-prompt).
    prompt_digest: String,
    verbalization_digest: String,
    attempts: usize,
    result: SimulationResult,
}

fn evaluate_stage(
    config: &ExperimentConfig,
    bundle: &SplitBundle,
    slots: &[Slot],
    verbalizations: &[Option<Verbalization>],
    channels: &Channels,
    run: &Run,
) -> Result<(), RunError> {
    let jobs: Vec<(usize, Direction)> = (0..slots.len())
        .filter(|&s| verbalizations[s].is_some())
        .flat_map(|s| Direction::BOTH.map(|d| (s, d)))
        .collect();
    let evaluator_id = channels.evaluator.id();
    let work = |&(s, direction): &(usize, Direction)| -> Result<SimulationResult, RunError> {
        let slot = &slots[s];
        let verbalization = verbalizations[s].as_ref().expect("filtered");
        let pair = &slot.cell.pairs[slot.index];
        let cond = &slot.cell.condition;
        let template = PromptTemplate::builtin(config.dataset, PromptKind::Evaluation, false, cond.omit_model_type)?;
        let sample = build_eval_sample(bundle, pair, direction.source()).map_err(PairgenError::from)?;
        let prompt = assemble_evaluation_prompt(
            &template,
            Some(slot.cell.kind.type_name()),
            &sample.to_json(),
            &verbalization.text,
            direction,
        )?;
        let d = direction.as_str();
        let rel = format!("{}/simulation_{d}.json", slot.dir);
        let digest = prompt_digest(&prompt);
        let verbalization_digest = prompt_digest(&verbalization.text);
        if let Some(rec) = run.read(&rel).and_then(|t| serde_json::from_str::<SimulationRecord>(&t).ok()).filter(|r| {
            r.prompt_digest == digest && r.evaluator == evaluator_id && r.verbalization_digest == verbalization_digest
        }) {
            run.reused.fetch_add(1, Ordering::SeqCst);
            for name in ["prompt.txt", "response.txt"] {
                let p = format!("{}/eval_{d}_{name}", slot.dir);
                if run.root.join(&p).exists() {
                    run.track(if name == "prompt.txt" { "prompts" } else { "responses" }, &p);
                }
            }
            run.track("responses", &rel);
            return Ok(rec.result);
        }
        run.calls.fetch_add(1, Ordering::SeqCst);
        let sim = simulate_prompt(
            &channels.evaluator,
            verbalization,
            &sample,
            pair.model_a.model.n_classes(),
            direction,
            prompt,
        )?;
        run.calls.fetch_add(sim.attempts - 1, Ordering::SeqCst);
        run.write("prompts", &format!("{}/eval_{d}_prompt.txt", slot.dir), sim.prompt.as_bytes())?;
        run.write("responses", &format!("{}/eval_{d}_response.txt", slot.dir), sim.response.as_bytes())?;
        let record = SimulationRecord {
            evaluator: evaluator_id.clone(),
            prompt_digest: digest,
            verbalization_digest,
            attempts: sim.attempts,
            result: sim.result,
        };
        run.write("responses", &rel, &pretty(&record))?;
        Ok(record.result)
    };
    let results: Vec<Result<SimulationResult, RunError>> =
        run.timed("evaluate", || channels.pool.install(|| jobs.par_iter().map(work).collect()));

    let mut sims: BTreeMap<usize, [Option<SimulationResult>; 2]> = BTreeMap::new();
    for ((s, direction), r) in jobs.iter().zip(results) {
        match r {
            Ok(sim) => sims.entry(*s).or_default()[direction.target()] = Some(sim),
            Err(e) => run.fail("evaluate", &format!("{}/{}", slots[*s].pair_id, direction.as_str()), e),
        }
    }

    run.timed("metrics", || {
        for (s, [sim_a, sim_b]) in sims {
            let (Some(sim_a), Some(sim_b)) = (sim_a, sim_b) else { continue };
            let slot = &slots[s];
            let pair = &slot.cell.pairs[slot.index];
            let x = &bundle.eval.features;
            let metrics = pair
                .model_a
                .model
                .predict(x)
                .and_then(|ya| Ok((ya, pair.model_b.model.predict(x)?)))
                .map_err(EvalError::from)
                .and_then(|(ya, yb)| compute_metrics(&ya, &yb, &sim_a.simulated, &sim_b.simulated));
            let metrics = match metrics {
                Ok(m) => m,
                Err(e) => {
                    run.fail("metrics", &slot.pair_id, e);
                    continue;
                }
            };
            let verbalizer = channels.verbalizers[slot.verbalizer].id();
            let record = MetricsRecord {
                format_version: METRICS_FORMAT_VERSION,
                pair_id: slot.pair_id.clone(),
                dataset: config.dataset,
                kind: slot.cell.kind,
                level: slot.cell.condition.level,
                provenance: pair.provenance,
                disagreement: pair.disagreement,
                with_internals: slot.cell.condition.with_internals,
                omit_model_type: slot.cell.condition.omit_model_type,
                verbalizer: verbalizer.clone(),
                evaluator: evaluator_id.clone(),
                unresolved: [sim_a.unresolved_rows.len(), sim_b.unresolved_rows.len()],
                metrics,
            };
            let rel = format!(
                "metrics/{}/{}/{}/{}/pair_{}.json",
                config.dataset.as_str(),
                slot.cell.kind.as_str(),
                slot.cell.condition.dir,
                slug(&verbalizer),
                slot.index
            );
            run.write("metrics", &rel, &pretty(&record))?;
        }
        Ok::<_, RunError>(())
    })
}

fn run_cells(
    config: &ExperimentConfig,
    until: Stage,
    build: impl FnOnce(&ExperimentConfig, &SplitBundle, &Run) -> Result<Vec<Cell>, RunError>,
) -> Result<RunManifest, RunError> {
    config.validate()?;
    let run = Run::new(&config.output_dir);
    let bundle = run.timed("splits", || prepare_bundle(config, &run))?;
    let cells = build(config, &bundle, &run)?;
    if until >= Stage::Verbalize {
        let channels = Channels::new(config)?;
        let slots = slots(config, &cells, &channels);
        let verbalizations = verbalize_stage(config, &bundle, &slots, &channels, &run)?;
        if until >= Stage::Evaluate {
            evaluate_stage(config, &bundle, &slots, &verbalizations, &channels, &run)?;
        }
    }
    run.finish(config, until >= Stage::Report)
}

/// Level experiments for the configured kind, up to and including `until`.
pub fn run_experiment_until(config: &ExperimentConfig, until: Stage) -> Result<RunManifest, RunError> {
    run_cells(config, until, level_cells)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest, RunError> {
    run_experiment_until(config, Stage::Report)
}

/// One data-variation pair per configured kind, verbalized and evaluated
/// like the level experiments.
pub fn run_data_variation(config: &ExperimentConfig) -> Result<RunManifest, RunError> {
    run_cells(config, Stage::Report, data_variation_cells)
}

/// Writes `reports/report.{csv,md}` and `reports/summary.json` from the
/// manifest's metrics records, checking each record against its digest.
pub fn emit_report(manifest: &RunManifest, run_dir: &Path) -> Result<Vec<ArtifactRef>, RunError> {
    let mut records = Vec::new();
    for art in manifest.stage("metrics") {
        let path = run_dir.join(&art.path);
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        if sha256_hex(&bytes) != art.sha256 {
            return Err(RunError::DigestMismatch { path: art.path.clone() });
        }
        let record: MetricsRecord = serde_json::from_slice(&bytes).map_err(|e| io_err(&path, e))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(RunError::EmptyInput);
    }
    let rows = summarize(&records);
    let doc = SummaryDoc {
        format_version: METRICS_FORMAT_VERSION,
        std_over: "pairs".into(),
        rows: rows.clone(),
    };
    let outputs = [
        ("reports/report.csv", render_csv(&rows).into_bytes()),
        ("reports/report.md", render_markdown(&rows).into_bytes()),
        ("reports/summary.json", pretty(&doc)),
    ];
    let mut refs = Vec::new();
    for (rel, bytes) in outputs {
        let path = run_dir.join(rel);
        if std::fs::read(&path).ok().as_deref() != Some(&bytes[..]) {
            write_atomic(&path, &bytes).map_err(|e| io_err(&path, e))?;
        }
        refs.push(ArtifactRef {
            path: rel.into(),
            sha256: sha256_hex(&bytes),
        });
    }
    Ok(refs)
}

/// Regenerates the report of a finished run and records it in its manifest.
pub fn report_run(run_dir: &Path) -> Result<RunManifest, RunError> {
    let mut manifest = RunManifest::load(run_dir)?;
    let refs = emit_report(&manifest, run_dir)?;
    manifest.artifacts.insert("reports".into(), refs);
    write_json(&run_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_path_safe() {
        assert_eq!(slug("meta/llama-3.3 70b"), "meta-llama-3.3-70b");
    }
}
