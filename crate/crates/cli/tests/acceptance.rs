//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any gated criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,7` runs a subset; `UPDATE_GOLDENS=1` rewrites the
//! prompt goldens; `MODELDIFF_LIVE_CONFIG=<path>` enables the live run.

use modeldiff::data::{load_builtin, DatasetName, DatasetSpec, SplitBundle};
use modeldiff::evaluation::compute_metrics;
use modeldiff::models::{
    describe_internals, Activation, DecisionTreeModel, LogisticRegressionModel, MlpModel, ModelKind, TrainedModel,
    TreeNode,
};
use modeldiff::pairgen::{
    disagreement_rate, generate_pair_suite, train_base, DisagreementLevel, PairgenConfig, Provenance,
};
use modeldiff::prompts::{assemble_evaluation_prompt, assemble_verbalization_prompt, Direction, PromptKind, PromptTemplate};
use modeldiff::sampling::{EvalRow, EvalSample, RepresentativeSample, SampleRow};
use modeldiff_cli::config::MockEvaluator;
use modeldiff_cli::report::MetricsRecord;
use modeldiff_cli::{run_data_variation, run_experiment, ExperimentConfig, RunManifest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

type Outcome = Result<String, String>;

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn data_dir() -> PathBuf {
    workspace().join("data")
}

fn bundle(ds: DatasetName) -> SplitBundle {
    SplitBundle::prepare(&load_builtin(&data_dir(), ds).expect("dataset present"), 7).expect("splits")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn mock_config(dataset: DatasetName, kind: Option<ModelKind>, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(&format!(
        "format_version = 1\ndataset = \"{}\"\noutput_dir = \"{}\"\nmock = true\n",
        dataset.as_str(),
        out.display()
    ))
    .expect("valid config");
    c.kind = kind;
    c.data_dir = data_dir();
    c
}

fn metrics_records(out: &Path, manifest: &RunManifest) -> Vec<MetricsRecord> {
    manifest
        .stage("metrics")
        .iter()
        .map(|a| serde_json::from_str(&std::fs::read_to_string(out.join(&a.path)).unwrap()).unwrap())
        .collect()
}

// 1 ----------------------------------------------------------------------

/// Counts every (direction, row) cell independently of the library code.
fn brute_force(y: &[Vec<u32>; 2], sim: &[Vec<Option<u32>>; 2]) -> (Option<f64>, Option<f64>, f64) {
    let mut cells: BTreeMap<bool, (u64, u64)> = BTreeMap::new();
    for k in 0..2 {
        for i in 0..y[0].len() {
            let mismatch = y[0][i] != y[1][i];
            let e = cells.entry(mismatch).or_default();
            e.1 += 1;
            if sim[k][i] == Some(y[k][i]) {
                e.0 += 1;
            }
        }
    }
    let acc = |m: bool| cells.get(&m).map(|(h, t)| *h as f64 / *t as f64);
    let (h, t) = cells.values().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    (acc(true), acc(false), h as f64 / t as f64)
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let same = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    };
    for trial in 0..200 {
        let n = rng.random_range(1..=12);
        let c = rng.random_range(2..=4u32);
        let y: [Vec<u32>; 2] = std::array::from_fn(|_| (0..n).map(|_| rng.random_range(0..c)).collect());
        let p_unresolved = rng.random_range(0.0..0.5);
        let sim: [Vec<Option<u32>>; 2] = std::array::from_fn(|_| {
            (0..n).map(|_| (!rng.random_bool(p_unresolved)).then(|| rng.random_range(0..c))).collect()
        });
        let m = compute_metrics(&y[0], &y[1], &sim[0], &sim[1]).map_err(|e| e.to_string())?;
        let (mismatch, matched, overall) = brute_force(&y, &sim);
        ensure(
            same(m.acc_mismatch, mismatch) && same(m.acc_match, matched) && (m.acc_overall - overall).abs() <= 1e-12,
            || format!("trial {trial}: library {m:?} vs brute force {mismatch:?} {matched:?} {overall}"),
        )?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("200 instances agree to 1e-12 ({secs:.3}s)"))
}

// 2 & 3 ------------------------------------------------------------------

fn level2_run(root: &Path, ds: DatasetName, kind: ModelKind, evaluator: MockEvaluator) -> Result<Vec<MetricsRecord>, String> {
    let out = root.join(format!("{}-{}", ds.as_str(), kind.as_str()));
    let mut c = mock_config(ds, Some(kind), &out);
    c.levels = vec![2];
    c.n_pairs = 2;
    c.mock_evaluator = evaluator;
    let manifest = run_experiment(&c).map_err(|e| format!("{ds} {kind}: {e}"))?;
    ensure(manifest.failures.is_empty(), || format!("{ds} {kind}: {:?}", manifest.failures))?;
    let records = metrics_records(&out, &manifest);
    ensure(records.len() == 2, || format!("{ds} {kind}: {} metrics records", records.len()))?;
    Ok(records)
}

fn criterion_2(root: &Path) -> Outcome {
    let t = Instant::now();
    let mut n = 0;
    for ds in DatasetName::ALL {
        for kind in ModelKind::ALL {
            for r in level2_run(root, ds, kind, MockEvaluator::Rule)? {
                ensure(r.metrics.acc_overall == 1.0, || format!("{}: Acc_overall {}", r.pair_id, r.metrics.acc_overall))?;
                n += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!("{n} pairs, Acc_overall = 1.0 on all ({secs:.1}s)"))
}

fn criterion_3(root: &Path) -> Outcome {
    let mut n = 0;
    for ds in DatasetName::ALL {
        for kind in ModelKind::ALL {
            for r in level2_run(root, ds, kind, MockEvaluator::Copy)? {
                let m = &r.metrics;
                let total = m.n_match + m.n_mismatch;
                ensure(m.n_match == 0 || m.acc_match == Some(1.0), || format!("{}: acc_match {:?}", r.pair_id, m.acc_match))?;
                ensure(m.n_mismatch == 0 || m.acc_mismatch == Some(0.0), || {
                    format!("{}: acc_mismatch {:?}", r.pair_id, m.acc_mismatch)
                })?;
                ensure(m.acc_overall == m.n_match as f64 / total as f64, || {
                    format!("{}: acc_overall {} vs {}/{}", r.pair_id, m.acc_overall, m.n_match, total)
                })?;
                n += 1;
            }
        }
    }
    Ok(format!("{n} pairs: match 1.0, mismatch 0.0, overall |I_match|/|eval|"))
}

// 4 ----------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let config = PairgenConfig::default();
    let mut lines = Vec::new();
    for ds in DatasetName::ALL {
        let b = bundle(ds);
        for kind in ModelKind::ALL {
            for level in DisagreementLevel::ALL {
                let suite = generate_pair_suite(kind, level, &b, 3, &config, 11).map_err(|e| format!("{ds} {kind} {level}: {e}"))?;
                ensure(suite.len() == 3, || format!("{ds} {kind} {level}: {} pairs", suite.len()))?;
                let mut mvm = 0;
                for p in &suite {
                    let x = &b.test.features;
                    let d = disagreement_rate(&p.model_a.model, &p.model_b.model, x).map_err(|e| e.to_string())?;
                    let acc_a = p.model_a.model.accuracy(x, &b.test.targets).map_err(|e| e.to_string())?;
                    let acc_b = p.model_b.model.accuracy(x, &b.test.targets).map_err(|e| e.to_string())?;
                    ensure(level.contains(d), || format!("{ds} {kind} {level}: disagreement {d}"))?;
                    ensure((acc_a - acc_b).abs() <= 0.05, || format!("{ds} {kind} {level}: gap {}", (acc_a - acc_b).abs()))?;
                    p.audit(&b, 0.05).map_err(|e| format!("{ds} {kind} {level}: {e}"))?;
                    mvm += usize::from(p.provenance == Provenance::ModifiedVsModified);
                }
                lines.push(format!("{ds}/{kind}/{level}:{}bvm+{mvm}mvm", 3 - mvm));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 900.0, || format!("took {secs:.0}s"))?;
    Ok(format!("27 suites x 3 pairs in band, gap <= 0.05 ({secs:.1}s) [{}]", lines.join(" ")))
}

// 5 ----------------------------------------------------------------------

fn gradient_error(n_classes: usize, activation: Activation, rng: &mut ChaCha8Rng) -> f64 {
    let x: Vec<Vec<f64>> = (0..16).map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let y: Vec<u32> = (0..16).map(|_| rng.random_range(0..n_classes as u32)).collect();
    let mut m = MlpModel::zeros(4, 5, n_classes, activation);
    m.params_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    let xs: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let l2 = 1e-2;
    let analytic: Vec<f64> = m.loss_and_gradient(&xs, &y, l2).1.params().copied().collect();
    let h = 1e-6;
    let numeric: Vec<f64> = (0..m.n_params())
        .map(|k| {
            let mut plus = m.clone();
            *plus.params_mut().nth(k).unwrap() += h;
            let mut minus = m.clone();
            *minus.params_mut().nth(k).unwrap() -= h;
            (plus.loss_and_gradient(&xs, &y, l2).0 - minus.loss_and_gradient(&xs, &y, l2).0) / (2.0 * h)
        })
        .collect();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(&analytic).max(norm(&numeric))
}

fn criterion_5() -> Outcome {
    let floors = [
        (DatasetName::Blood, ModelKind::Lr, 0.70),
        (DatasetName::Car, ModelKind::Dt, 0.85),
        (DatasetName::Diabetes, ModelKind::Mlp, 0.70),
    ];
    let mut report = Vec::new();
    for (ds, kind, floor) in floors {
        let b = bundle(ds);
        let m = train_base(kind, &b, &PairgenConfig::default(), 11).map_err(|e| e.to_string())?;
        let acc = m.model.accuracy(&b.test.features, &b.test.targets).map_err(|e| e.to_string())?;
        ensure(acc >= floor, || format!("{kind} on {ds}: {acc:.3} < {floor}"))?;
        report.push(format!("{kind}/{ds} {acc:.3}>={floor}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for activation in [Activation::Relu, Activation::Tanh, Activation::Logistic] {
        for classes in [2, 3] {
            worst = worst.max(gradient_error(classes, activation, &mut rng));
        }
    }
    ensure(worst < 1e-4, || format!("MLP gradient relative error {worst:e}"))?;
    report.push(format!("MLP grad rel err {worst:.1e}"));
    Ok(report.join(", "))
}

// 6 ----------------------------------------------------------------------

fn criterion_6() -> Outcome {
    let mut report = Vec::new();
    for ds in DatasetName::ALL {
        let data = load_builtin(&data_dir(), ds).map_err(|e| e.to_string())?;
        let n = data.len();
        let frac = data.spec.train_fraction;
        for seed in [0, 7, 123] {
            let b = SplitBundle::prepare(&data, seed).map_err(|e| e.to_string())?;
            let (tr, te, v, ev) = (b.train.len(), b.test.len(), b.verb.len(), b.eval.len());
            ensure(tr == (frac * n as f64).round() as usize && tr + te == n, || format!("{ds}: train {tr} of {n}"))?;
            ensure(v + ev == te && v == (2 * te + 1) / 3, || format!("{ds}: verb {v} eval {ev} of {te}"))?;
            let mut ids: Vec<usize> = [&b.train, &b.verb, &b.eval].iter().flat_map(|s| s.row_ids.clone()).collect();
            ids.sort_unstable();
            ensure(ids == (0..n).collect::<Vec<_>>(), || format!("{ds}: splits do not partition the rows"))?;
            let all = data.class_counts();
            for (c, (&k, &total)) in b.train.class_counts().iter().zip(&all).enumerate() {
                let target = frac * total as f64;
                ensure((k as f64 - target).abs() <= 1.0, || format!("{ds}: class {c} has {k} train rows, target {target:.1}"))?;
            }
            if seed == 7 {
                let pct = |k: usize| (100.0 * k as f64 / n as f64).round();
                report.push(format!("{} {}% / {}% ({tr}/{te}, verb:eval {v}:{ev})", ds.title(), pct(tr), pct(te)));
            }
        }
    }
    let expected = ["Blood 70% / 30%", "Diabetes 70% / 30%", "Car 87% / 13%"];
    for e in expected {
        ensure(report.iter().any(|r| r.starts_with(e)), || format!("missing `{e}` in {report:?}"))?;
    }
    Ok(report.join("; "))
}

// 7 ----------------------------------------------------------------------

/// Fixed model pair per dataset: a stump pair for Blood, weight vectors for
/// Diabetes and small networks for Car, covering all three internals formats.
fn golden_models(ds: DatasetName) -> (ModelKind, TrainedModel, TrainedModel) {
    match ds {
        DatasetName::Blood => {
            let stump = |feature, threshold, left| {
                TrainedModel::Dt(DecisionTreeModel {
                    nodes: vec![
                        TreeNode::Split { feature, threshold, left: 1, right: 2 },
                        TreeNode::Leaf { class: left, counts: vec![10, 30] },
                        TreeNode::Leaf { class: 1 - left, counts: vec![40, 5] },
                    ],
                    n_features: 4,
                    n_classes: 2,
                })
            };
            (ModelKind::Dt, stump(0, -0.25, 1), stump(1, 0.5, 0))
        }
        DatasetName::Diabetes => {
            let lr = |scale: f64| {
                let mut m = LogisticRegressionModel::zeros(8, 2);
                m.coefficients[0] = (0..8).map(|j| scale * (j as f64 - 3.5) / 4.0).collect();
                m.intercepts[0] = -0.5 * scale;
                TrainedModel::Lr(m)
            };
            (ModelKind::Lr, lr(1.0), lr(-0.8))
        }
        DatasetName::Car => {
            let mlp = |shift: f64| {
                let mut m = MlpModel::zeros(6, 2, 4, Activation::Relu);
                for (k, w) in m.params_mut().enumerate() {
                    *w = ((k as f64 * 0.37 + shift).sin() * 100.0).round() / 100.0;
                }
                TrainedModel::Mlp(m)
            };
            (ModelKind::Mlp, mlp(0.0), mlp(1.0))
        }
    }
}

fn golden_rows(ds: DatasetName, spec: &DatasetSpec) -> Vec<Vec<f64>> {
    match ds {
        DatasetName::Blood => vec![vec![-0.9277, 0.1245, 0.1245, -0.0089], vec![0.5, -0.6055, -0.6055, 1.25], vec![0.0, 2.4, 2.4, -1.1]],
        DatasetName::Diabetes => vec![
            vec![0.6399, 0.8483, 0.1496, 0.9073, -0.6929, 0.2040, 0.4685, 1.4260],
            vec![-0.8449, -1.1234, -0.1605, 0.5309, -0.6929, -0.6844, -0.3651, -0.1907],
            vec![1.2339, 1.9437, -0.2639, -1.2882, -0.6929, -1.1033, 0.6044, -0.1056],
        ],
        DatasetName::Car => {
            assert!((0..spec.n_features()).all(|j| spec.is_categorical(j)));
            vec![vec![3.0, 3.0, 2.0, 2.0, 0.0, 0.0], vec![0.0, 1.0, 4.0, 5.0, 2.0, 2.0], vec![1.0, 0.0, 5.0, 4.0, 1.0, 1.0]]
        }
    }
}

/// The 18 golden prompts: (file stem, text).
fn golden_prompts() -> Vec<(String, String)> {
    const VERBALIZATION: &str = "Model 2 predicts donation less often than Model 1 when the first feature is low.";
    let mut out = Vec::new();
    for ds in DatasetName::ALL {
        let spec = DatasetSpec::builtin(ds);
        let (kind, a, b) = golden_models(ds);
        let rows = golden_rows(ds, &spec);
        let integer: Vec<bool> = (0..spec.n_features()).map(|j| spec.is_categorical(j)).collect();
        let sample = RepresentativeSample {
            dataset: ds,
            feature_names: spec.feature_names.clone(),
            integer_features: integer.clone(),
            rows: rows
                .iter()
                .map(|x| SampleRow { features: x.clone(), prediction_a: a.predict_row(x), prediction_b: b.predict_row(x) })
                .collect(),
            row_ids: vec![0, 1, 2],
        };
        let eval = EvalSample {
            dataset: ds,
            feature_names: spec.feature_names.clone(),
            integer_features: integer,
            rows: rows.iter().map(|x| EvalRow { features: x.clone(), prediction: a.predict_row(x) }).collect(),
            source_model_index: 0,
            row_ids: vec![0, 1, 2],
        };
        let internals = (describe_internals(&a, &spec), describe_internals(&b, &spec));
        for (variant, with_internals, omit) in [("base", false, false), ("level4", true, false), ("level5", false, true)] {
            let vt = PromptTemplate::builtin(ds, PromptKind::Verbalization, with_internals, omit).unwrap();
            let v = assemble_verbalization_prompt(
                &vt,
                Some(kind.type_name()),
                &sample.to_json(),
                with_internals.then(|| (internals.0.as_str(), internals.1.as_str())),
            )
            .unwrap();
            out.push((format!("{}_verbalization_{variant}", ds.as_str()), v));
            let et = PromptTemplate::builtin(ds, PromptKind::Evaluation, false, omit).unwrap();
            let e = assemble_evaluation_prompt(&et, Some(kind.type_name()), &eval.to_json(), VERBALIZATION, Direction::ZeroToOne)
                .unwrap();
            out.push((format!("{}_evaluation_{variant}", ds.as_str()), e));
        }
    }
    out
}

/// Sentences the assembled prompts must carry verbatim.
const ANCHORS: &[(&str, &str)] = &[
    ("blood_", "Recency (months), Frequency (times), Monetary (c.c. blood), and Time (months)"),
    ("blood_verbalization", "could reveal sensitive information to a third person"),
    ("diabetes_verbalization", "could reveal sensitive information to a third person"),
    ("car_verbalization", "could reveal sensitive information to a third person"),
    ("_evaluation", "Do not provide any further details after the JSON."),
    ("_evaluation", "The accompanying verbalization provides a verbal explanation of how the decision boundaries of the two models differ."),
    ("car_", "The dataset was derived from a simple hierarchical decision model developed for the evaluation of cars."),
    ("diabetes_", "Pregnancies, Glucose, BloodPressure, SkinThickness, Insulin, BMI, DiabetesPedigreeFunction and Age"),
];

fn criterion_7() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();
    let prompts = golden_prompts();
    for (stem, text) in &prompts {
        let path = dir.join(format!("{stem}.txt"));
        if update {
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            std::fs::write(&path, text).map_err(|e| e.to_string())?;
        }
        let golden = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(&golden == text, || format!("{stem} differs from its golden"))?;
        for (prefix, anchor) in ANCHORS {
            if stem.contains(prefix) {
                ensure(text.contains(anchor), || format!("{stem} lacks `{anchor}`"))?;
            }
        }
        if stem.ends_with("level5") {
            for name in ["logistic regression", "decision tree", "MLP"] {
                ensure(!text.contains(name), || format!("{stem} names `{name}`"))?;
            }
        }
        if stem.contains("verbalization_level4") {
            ensure(text.contains("Model Information:"), || format!("{stem} lacks internals"))?;
        }
    }
    ensure(prompts.iter().any(|(s, t)| s.starts_with("blood") && t.contains("c.c. blood")), || "no c.c. blood".into())?;
    Ok(format!("{} goldens byte-identical{}", prompts.len(), if update { " (rewritten)" } else { "" }))
}

// 8 ----------------------------------------------------------------------

fn criterion_8(root: &Path) -> Outcome {
    let out = root.join("data-variation");
    let mut c = mock_config(DatasetName::Blood, None, &out);
    c.data_variation = Some(modeldiff_cli::config::DataVariationConfig {
        feature: "Recency (months)".into(),
        fraction: 0.25,
        kinds: ModelKind::ALL.to_vec(),
    });
    let manifest = run_data_variation(&c).map_err(|e| e.to_string())?;
    ensure(manifest.failures.is_empty(), || format!("{:?}", manifest.failures))?;
    ensure(manifest.pairs.len() == 3 && manifest.pairs.iter().all(|p| p.provenance == Provenance::DataVariation), || {
        format!("pairs: {:?}", manifest.pairs)
    })?;
    let records = metrics_records(&out, &manifest);
    let mut kinds: Vec<ModelKind> = records.iter().map(|r| r.kind).collect();
    kinds.sort();
    ensure(kinds == ModelKind::ALL.to_vec(), || format!("metrics groups {kinds:?}"))?;
    let md = std::fs::read_to_string(out.join("reports/report.md")).map_err(|e| e.to_string())?;
    ensure(md.contains("| LLM | Metric | LR | DT | MLP |"), || "report lacks LR/DT/MLP columns".into())?;
    for name in ["Acc_overall", "Acc_mismatch", "Acc_match"] {
        ensure(md.contains(name), || format!("report lacks {name}"))?;
    }
    let dis: Vec<String> = manifest.pairs.iter().map(|p| format!("{} {:.3}", p.kind.label(), p.disagreement)).collect();
    Ok(format!("LR/DT/MLP groups reported; disagreement {}", dis.join(", ")))
}

// 9 ----------------------------------------------------------------------

fn tree_bytes(root: &Path, sub: &str) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).into_iter().flatten().flatten() {
            let p = entry.path();
            if p.is_dir() {
                walk(&p, base, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().display().to_string(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(&root.join(sub), root, &mut out);
    out
}

fn criterion_9(root: &Path) -> Outcome {
    let base = ExperimentConfig::load(&workspace().join("configs/mock-blood-dt.toml")).map_err(|e| e.to_string())?;
    let mut dirs = Vec::new();
    for i in 0..2 {
        let out = root.join(format!("determinism-{i}"));
        let mut c = base.clone();
        c.output_dir = out.clone();
        c.data_dir = data_dir();
        let m = run_experiment(&c).map_err(|e| e.to_string())?;
        ensure(m.failures.is_empty(), || format!("{:?}", m.failures))?;
        dirs.push(out);
    }
    let metrics: Vec<_> = dirs.iter().map(|d| tree_bytes(d, "metrics")).collect();
    ensure(!metrics[0].is_empty(), || "no metrics written".into())?;
    ensure(metrics[0] == metrics[1], || "metrics JSON differs between runs".into())?;
    for file in ["manifest.json", "reports/summary.json", "reports/report.csv"] {
        let a = std::fs::read(dirs[0].join(file)).map_err(|e| e.to_string())?;
        let b = std::fs::read(dirs[1].join(file)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{file} differs between runs"))?;
    }
    Ok(format!("{} metrics files, manifest and summary byte-identical", metrics[0].len()))
}

// 10 ---------------------------------------------------------------------

fn criterion_10() -> Option<Outcome> {
    let path = std::env::var_os("MODELDIFF_LIVE_CONFIG")?;
    let run = || -> Outcome {
        let config = ExperimentConfig::load(Path::new(&path)).map_err(|e| e.to_string())?;
        let manifest = run_experiment(&config).map_err(|e| e.to_string())?;
        let records = metrics_records(&config.output_dir, &manifest);
        let overall: Vec<f64> = records.iter().map(|r| r.metrics.acc_overall).collect();
        ensure(!overall.is_empty(), || "no metrics".into())?;
        let mean = overall.iter().sum::<f64>() / overall.len() as f64;
        Ok(format!(
            "Acc_overall {mean:.2} over {} pairs (reference band 0.86-0.90; {} failures)",
            overall.len(),
            manifest.failures.len()
        ))
    };
    Some(run())
}

fn main() {
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let selected = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        (1, "metric oracle equivalence", Box::new(criterion_1)),
        (2, "perfect-verbalization property", Box::new(|| criterion_2(root))),
        (3, "copy-baseline property", Box::new(|| criterion_3(root))),
        (4, "calibration bands", Box::new(criterion_4)),
        (5, "trainer quality floors", Box::new(criterion_5)),
        (6, "split fidelity", Box::new(criterion_6)),
        (7, "prompt golden files", Box::new(criterion_7)),
        (8, "data-variation protocol", Box::new(|| criterion_8(root))),
        (9, "mock-mode determinism", Box::new(|| criterion_9(root))),
    ];
    let mut failed = 0;
    for (n, name, check) in &criteria {
        if !selected(*n) {
            continue;
        }
        match check() {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why}");
            }
        }
    }
    if selected(10) {
        match criterion_10() {
            None => println!("criterion 10 SKIP  live run (informational): set MODELDIFF_LIVE_CONFIG to a live config"),
            Some(Ok(detail)) => println!("criterion 10 INFO  live run (informational): {detail}"),
            Some(Err(why)) => println!("criterion 10 INFO  live run (informational) did not complete: {why}"),
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
