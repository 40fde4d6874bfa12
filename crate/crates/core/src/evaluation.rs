//! Simulation in both directions and the match / mismatch / overall
//! accuracies of simulated outputs.

use crate::data::SplitBundle;
use crate::llm::{fenced_blocks, prompt_digest, Evaluator, LlmError, Verbalization};
use crate::models::ModelError;
use crate::pairgen::ModelPair;
use crate::prompts::{assemble_evaluation_prompt, Direction, PromptError, PromptTemplate};
use crate::sampling::{build_eval_sample, EvalSample};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("response contains no fenced JSON array")]
    NoJsonBlock,
    #[error("no reports to aggregate")]
    EmptyInput,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Row indices where the two prediction vectors agree and disagree.
pub fn partition_indices(y0: &[u32], y1: &[u32]) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if y0.len() != y1.len() {
        return Err(EvalError::LengthMismatch(format!("{} vs {}", y0.len(), y1.len())));
    }
    let (matched, mismatched): (Vec<usize>, Vec<usize>) = (0..y0.len()).partition(|&i| y0[i] == y1[i]);
    Ok((matched, mismatched))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub direction: Direction,
    /// Simulated target output per eval row; `None` where unresolved.
    pub simulated: Vec<Option<u32>>,
    pub unresolved_rows: Vec<usize>,
    pub response_digest: String,
}

impl SimulationResult {
    fn from_simulated(direction: Direction, simulated: Vec<Option<u32>>, response: &str) -> SimulationResult {
        let unresolved_rows = simulated.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
        SimulationResult {
            direction,
            simulated,
            unresolved_rows,
            response_digest: prompt_digest(response),
        }
    }
}

const FEATURE_TOL: f64 = 1e-6;

fn class_value(v: &Value, n_classes: usize) -> Option<u32> {
    let n = match v {
        Value::Number(n) => {
            let f = n.as_f64()?;
            if f.fract() != 0.0 || f < 0.0 {
                return None;
            }
            f as u64
        }
        Value::String(s) => s.trim().parse::<u64>().ok()?,
        _ => return None,
    };
    (n < n_classes as u64).then_some(n as u32)
}

/// The prediction field of one response entry: `model_output` first, then
/// any other `*_output` key, then `output` / `prediction`.
fn entry_prediction(obj: &serde_json::Map<String, Value>, n_classes: usize) -> Option<u32> {
    if let Some(v) = obj.get("model_output") {
        return class_value(v, n_classes);
    }
    let key = obj
        .keys()
        .find(|k| k.ends_with("_output"))
        .or_else(|| obj.keys().find(|k| *k == "output" || *k == "prediction"))?;
    class_value(&obj[key], n_classes)
}

fn entry_features(obj: &serde_json::Map<String, Value>) -> Option<Vec<f64>> {
    obj.get("features")?.as_array()?.iter().map(Value::as_f64).collect()
}

/// Reads the evaluator's answer for every row of `expected`.
///
/// Uses the last fenced block that holds a JSON array. Entries are matched
/// to rows by feature equality within 1e-6 per coordinate; entries without
/// features fall back to their position when the entry count equals the row
/// count. Rows left unmatched, or whose prediction is not a valid class,
/// are unresolved.
pub fn parse_predictions(
    response: &str,
    expected: &EvalSample,
    n_classes: usize,
    direction: Direction,
) -> Result<SimulationResult, EvalError> {
    let entries = fenced_blocks(response)
        .into_iter()
        .rev()
        .find_map(|b| match serde_json::from_str::<Value>(b.trim()) {
            Ok(Value::Array(items)) => Some(items),
            _ => None,
        })
        .ok_or(EvalError::NoJsonBlock)?;

    let n = expected.rows.len();
    let mut simulated: Vec<Option<u32>> = vec![None; n];
    let mut taken = vec![false; n];
    let positional = entries.len() == n;
    for (pos, entry) in entries.iter().enumerate() {
        let Some(obj) = entry.as_object() else { continue };
        let row = match entry_features(obj) {
            Some(x) => (0..n).find(|&i| {
                !taken[i]
                    && expected.rows[i].features.len() == x.len()
                    && expected.rows[i].features.iter().zip(&x).all(|(a, b)| (a - b).abs() <= FEATURE_TOL)
            }),
            None if positional && !taken[pos] => Some(pos),
            None => None,
        };
        if let Some(i) = row {
            taken[i] = true;
            simulated[i] = entry_prediction(obj, n_classes);
        }
    }
    Ok(SimulationResult::from_simulated(direction, simulated, response))
}

/// Appended to the evaluation prompt for the single re-prompt after a
/// response left rows unresolved.
pub const RETRY_SUFFIX: &str =
    "\n\nYour previous answer could not be matched to every instance. Return the JSON for all instances in the sample, in the same format as the dataset sample.";

/// Everything one simulation produced, for persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub result: SimulationResult,
    pub prompt: String,
    pub response: String,
    /// 1, or 2 when the re-prompt was used.
    pub attempts: usize,
}

/// Shows the source model's eval outputs and asks the evaluator for the
/// target model's. Unparseable answers yield unresolved rows, not errors;
/// one re-prompt is made if any row is unresolved and the better answer kept.
pub fn simulate(
    evaluator: &Evaluator,
    verbalization: &Verbalization,
    pair: &ModelPair,
    bundle: &SplitBundle,
    direction: Direction,
    template: &PromptTemplate,
    model_type_name: Option<&str>,
) -> Result<SimulationRun, EvalError> {
    let sample = build_eval_sample(bundle, pair, direction.source())?;
    let prompt = assemble_evaluation_prompt(template, model_type_name, &sample.to_json(), &verbalization.text, direction)?;
    simulate_prompt(evaluator, verbalization, &sample, pair.model_a.model.n_classes(), direction, prompt)
}

/// [`simulate`] with an already assembled prompt.
pub fn simulate_prompt(
    evaluator: &Evaluator,
    verbalization: &Verbalization,
    sample: &EvalSample,
    n_classes: usize,
    direction: Direction,
    prompt: String,
) -> Result<SimulationRun, EvalError> {
    let parse = |response: &str| {
        parse_predictions(response, sample, n_classes, direction).unwrap_or_else(|_| {
            SimulationResult::from_simulated(direction, vec![None; sample.rows.len()], response)
        })
    };
    let response = evaluator.respond(verbalization, &prompt)?;
    let result = parse(&response);
    if result.unresolved_rows.is_empty() {
        return Ok(SimulationRun {
            result,
            prompt,
            response,
            attempts: 1,
        });
    }
    log::warn!("{} unresolved rows for {}; re-prompting", result.unresolved_rows.len(), direction.as_str());
    let retry_prompt = format!("{prompt}{RETRY_SUFFIX}");
    let retry_response = evaluator.respond(verbalization, &retry_prompt)?;
    let retry = parse(&retry_response);
    Ok(if retry.unresolved_rows.len() < result.unresolved_rows.len() {
        SimulationRun {
            result: retry,
            prompt: retry_prompt,
            response: retry_response,
            attempts: 2,
        }
    } else {
        SimulationRun {
            result,
            prompt,
            response,
            attempts: 2,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionMetrics {
    pub direction: Direction,
    pub correct_match: usize,
    pub correct_mismatch: usize,
    pub acc_match: Option<f64>,
    pub acc_mismatch: Option<f64>,
    pub acc_overall: f64,
}

/// Accuracies of simulated outputs, averaged over both directions.
/// `None` marks a metric over an empty index set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc_mismatch: Option<f64>,
    pub acc_match: Option<f64>,
    pub acc_overall: f64,
    pub n_mismatch: usize,
    pub n_match: usize,
    /// Indexed by target model: simulating model_a (1→0) then model_b (0→1).
    pub per_direction: [DirectionMetrics; 2],
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `sim[k]` holds the simulated outputs of model k (`y[k]`); unresolved
/// rows (`None`) count as incorrect.
pub fn compute_metrics(
    y0: &[u32],
    y1: &[u32],
    sim0: &[Option<u32>],
    sim1: &[Option<u32>],
) -> Result<Metrics, EvalError> {
    let (matched, mismatched) = partition_indices(y0, y1)?;
    let n = y0.len();
    if sim0.len() != n || sim1.len() != n {
        return Err(EvalError::LengthMismatch(format!(
            "simulated lengths {} and {} for {n} rows",
            sim0.len(),
            sim1.len()
        )));
    }
    if n == 0 {
        return Err(EvalError::LengthMismatch("empty evaluation set".into()));
    }
    let direction = |y: &[u32], sim: &[Option<u32>], direction: Direction| {
        let correct = |idx: &[usize]| idx.iter().filter(|&&i| sim[i] == Some(y[i])).count();
        let cm = correct(&matched);
        let cx = correct(&mismatched);
        DirectionMetrics {
            direction,
            correct_match: cm,
            correct_mismatch: cx,
            acc_match: ratio(cm, matched.len()),
            acc_mismatch: ratio(cx, mismatched.len()),
            acc_overall: (cm + cx) as f64 / n as f64,
        }
    };
    let d0 = direction(y0, sim0, Direction::OneToZero);
    let d1 = direction(y1, sim1, Direction::ZeroToOne);
    Ok(Metrics {
        acc_mismatch: ratio(d0.correct_mismatch + d1.correct_mismatch, 2 * mismatched.len()),
        acc_match: ratio(d0.correct_match + d1.correct_match, 2 * matched.len()),
        acc_overall: (d0.correct_match + d0.correct_mismatch + d1.correct_match + d1.correct_mismatch) as f64
            / (2 * n) as f64,
        n_mismatch: mismatched.len(),
        n_match: matched.len(),
        per_direction: [d0, d1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    /// Values that entered the statistic.
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Stat { mean, std, n })
    }

    /// `0.70 ± .14`
    pub fn format(&self) -> String {
        let std = format!("{:.2}", self.std);
        let std = std.strip_prefix('0').unwrap_or(&std);
        format!("{:.2} ± {std}", self.mean)
    }
}

/// Per-metric statistics across pairs. Undefined per-pair values are
/// excluded, so a metric's `n` can be smaller than `n_reports`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_reports: usize,
    pub acc_mismatch: Option<Stat>,
    pub acc_match: Option<Stat>,
    pub acc_overall: Stat,
}

pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a Metrics>) -> Result<Summary, EvalError> {
    let reports: Vec<&Metrics> = reports.into_iter().collect();
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    // Sorting makes the floating-point sums independent of input order.
    let collect = |f: &dyn Fn(&Metrics) -> Option<f64>| {
        let mut v: Vec<f64> = reports.iter().filter_map(|m| f(m)).collect();
        v.sort_by(f64::total_cmp);
        v
    };
    Ok(Summary {
        n_reports: reports.len(),
        acc_mismatch: Stat::of(&collect(&|m| m.acc_mismatch)),
        acc_match: Stat::of(&collect(&|m| m.acc_match)),
        acc_overall: Stat::of(&collect(&|m| Some(m.acc_overall))).expect("non-empty"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetName, DatasetSpec};
    use crate::llm::{copy_evaluator, mock_oracle_verbalize};
    use crate::prompts::PromptKind;
    use rand::{Rng, SeedableRng};

    #[test]
    fn partitions() {
        assert_eq!(partition_indices(&[0, 1, 0, 1], &[0, 1, 1, 1]).unwrap(), (vec![0, 1, 3], vec![2]));
        assert_eq!(partition_indices(&[2, 1], &[2, 1]).unwrap().1, Vec::<usize>::new());
        assert_eq!(partition_indices(&[0, 1], &[1, 0]).unwrap().0, Vec::<usize>::new());
        assert!(matches!(partition_indices(&[0], &[0, 1]), Err(EvalError::LengthMismatch(_))));
    }

    #[test]
    fn copy_baseline_metrics() {
        let y0 = [0, 1, 0, 1];
        let y1 = [0, 1, 1, 1];
        let some = |v: &[u32]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
        let m = compute_metrics(&y0, &y1, &some(&y1), &some(&y0)).unwrap();
        assert_eq!((m.acc_match, m.acc_mismatch, m.acc_overall), (Some(1.0), Some(0.0), 0.75));
        let p = compute_metrics(&y0, &y1, &some(&y0), &some(&y1)).unwrap();
        assert_eq!((p.acc_match, p.acc_mismatch, p.acc_overall), (Some(1.0), Some(1.0), 1.0));
    }

    #[test]
    fn empty_sets_are_absent() {
        let m = compute_metrics(&[1, 0], &[1, 0], &[Some(1), None], &[Some(1), Some(0)]).unwrap();
        assert_eq!(m.acc_mismatch, None);
        assert_eq!(m.acc_match, Some(0.75));
        let s = aggregate([&m, &m]).unwrap();
        assert_eq!(s.acc_mismatch, None);
        assert_eq!(s.acc_match.unwrap().mean, 0.75);
    }

    /// Independent per-row enumeration over both directions.
    fn brute(y: [&[u32]; 2], sim: [&[Option<u32>]; 2]) -> (Option<f64>, Option<f64>, f64) {
        let (mut hit_x, mut tot_x, mut hit_m, mut tot_m) = (0u32, 0u32, 0u32, 0u32);
        for k in 0..2 {
            for i in 0..y[0].len() {
                let ok = u32::from(sim[k][i] == Some(y[k][i]));
                if y[0][i] != y[1][i] {
                    tot_x += 1;
                    hit_x += ok;
                } else {
                    tot_m += 1;
                    hit_m += ok;
                }
            }
        }
        let r = |h: u32, t: u32| if t == 0 { None } else { Some(f64::from(h) / f64::from(t)) };
        (r(hit_x, tot_x), r(hit_m, tot_m), f64::from(hit_x + hit_m) / f64::from(tot_x + tot_m))
    }

    fn close(a: Option<f64>, b: Option<f64>) -> bool {
        match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
            (None, None) => true,
            _ => false,
        }
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.random_range(1..=12);
            let c = rng.random_range(2..=4u32);
            let y: [Vec<u32>; 2] = std::array::from_fn(|_| (0..n).map(|_| rng.random_range(0..c)).collect());
            let sim: [Vec<Option<u32>>; 2] = std::array::from_fn(|_| {
                (0..n).map(|_| (rng.random_bool(0.8)).then(|| rng.random_range(0..c))).collect()
            });
            let m = compute_metrics(&y[0], &y[1], &sim[0], &sim[1]).unwrap();
            let (x, mt, o) = brute([&y[0], &y[1]], [&sim[0], &sim[1]]);
            assert!(close(m.acc_mismatch, x) && close(m.acc_match, mt) && (m.acc_overall - o).abs() <= 1e-12);
            let weighted = (m.acc_match.unwrap_or(0.0) * 2.0 * m.n_match as f64
                + m.acc_mismatch.unwrap_or(0.0) * 2.0 * m.n_mismatch as f64)
                / (2 * (m.n_match + m.n_mismatch)) as f64;
            assert!((weighted - m.acc_overall).abs() <= 1e-12);

            // Swapping the pair swaps directions and leaves the means.
            let s = compute_metrics(&y[1], &y[0], &sim[1], &sim[0]).unwrap();
            assert!(close(s.acc_mismatch, m.acc_mismatch) && close(s.acc_match, m.acc_match));
            assert_eq!(s.per_direction[0].correct_match, m.per_direction[1].correct_match);

            // Resolving a row never lowers accuracy.
            let mut fixed = sim[0].clone();
            for (i, v) in fixed.iter_mut().enumerate() {
                if v.is_none() {
                    *v = Some(y[0][i]);
                }
            }
            assert!(compute_metrics(&y[0], &y[1], &fixed, &sim[1]).unwrap().acc_overall >= m.acc_overall);
        }
    }

    #[test]
    fn aggregate_arithmetic() {
        let report = |o: f64| Metrics {
            acc_mismatch: None,
            acc_match: None,
            acc_overall: o,
            n_mismatch: 0,
            n_match: 1,
            per_direction: std::array::from_fn(|_| DirectionMetrics {
                direction: Direction::ZeroToOne,
                correct_match: 0,
                correct_mismatch: 0,
                acc_match: None,
                acc_mismatch: None,
                acc_overall: o,
            }),
        };
        let one = aggregate([&report(0.4)]).unwrap();
        assert_eq!(one.acc_overall.std, 0.0);
        let a = report(0.6);
        let b = report(0.8);
        let s = aggregate([&a, &b]).unwrap();
        assert!((s.acc_overall.mean - 0.7).abs() < 1e-12);
        assert!((s.acc_overall.std - 0.1414).abs() < 1e-4);
        assert_eq!(s.acc_overall.format(), "0.70 ± .14");
        assert_eq!(aggregate([&b, &a]).unwrap(), s);
        assert!(matches!(aggregate(std::iter::empty()), Err(EvalError::EmptyInput)));
    }

    fn sample() -> EvalSample {
        let spec = DatasetSpec::builtin(DatasetName::Blood);
        EvalSample {
            dataset: spec.name,
            feature_names: spec.feature_names.clone(),
            integer_features: vec![false; 4],
            rows: (0..3)
                .map(|i| crate::sampling::EvalRow {
                    features: vec![i as f64 * 0.5, 0.0, 0.0, 0.0],
                    prediction: 0,
                })
                .collect(),
            source_model_index: 0,
            row_ids: vec![0, 1, 2],
        }
    }

    #[test]
    fn parses_reordered_and_partial_answers() {
        let s = sample();
        let resp = "Reasoning.\n```json\n[{\"features\":[1.0,0,0,0],\"model_output\":1},{\"features\":[0.0000001,0,0,0],\"model_output\":0}]\n```";
        let r = parse_predictions(resp, &s, 2, Direction::ZeroToOne).unwrap();
        assert_eq!(r.simulated, vec![Some(0), None, Some(1)]);
        assert_eq!(r.unresolved_rows, vec![1]);
    }

    #[test]
    fn last_valid_block_wins() {
        let s = sample();
        let resp = "```json\n[{\"model_output\":1},{\"model_output\":1},{\"model_output\":1}]\n```\nthen\n```json\n[{\"model_2_output\":0},{\"model_2_output\":\"1\"},{\"model_2_output\":7}]\n```\n```\nnot json\n```";
        let r = parse_predictions(resp, &s, 2, Direction::ZeroToOne).unwrap();
        assert_eq!(r.simulated, vec![Some(0), Some(1), None]);
        assert!(matches!(parse_predictions("no block", &s, 2, Direction::ZeroToOne), Err(EvalError::NoJsonBlock)));
    }

    #[test]
    fn well_formed_echo_has_no_unresolved() {
        let s = sample();
        let prompt = format!("Dataset Sample: {}\n", s.to_json());
        let r = parse_predictions(&copy_evaluator(&prompt).unwrap(), &s, 2, Direction::OneToZero).unwrap();
        assert!(r.unresolved_rows.is_empty());
        assert_eq!(r.simulated, vec![Some(0); 3]);
    }

    #[test]
    fn oracle_and_copy_channels_end_to_end() {
        let bundle = crate::testutil::synthetic_bundle(3);
        let pair = crate::testutil::synthetic_pair(&bundle);
        let template = PromptTemplate::builtin(DatasetName::Blood, PromptKind::Evaluation, false, false).unwrap();
        let verb = mock_oracle_verbalize(&pair, &bundle.eval.spec, "prompt");
        let ya = pair.model_a.model.predict(&bundle.eval.features).unwrap();
        let yb = pair.model_b.model.predict(&bundle.eval.features).unwrap();
        let run = |ev: &Evaluator, d| simulate(ev, &verb, &pair, &bundle, d, &template, Some("decision tree")).unwrap();
        let s0 = run(&Evaluator::MockRule, Direction::OneToZero);
        let s1 = run(&Evaluator::MockRule, Direction::ZeroToOne);
        let m = compute_metrics(&ya, &yb, &s0.result.simulated, &s1.result.simulated).unwrap();
        assert_eq!(m.acc_overall, 1.0);
        assert_eq!(s0, run(&Evaluator::MockRule, Direction::OneToZero));

        let c0 = run(&Evaluator::Copy, Direction::OneToZero);
        let c1 = run(&Evaluator::Copy, Direction::ZeroToOne);
        let expected: Vec<Option<u32>> = yb.iter().map(|&v| Some(v)).collect();
        assert_eq!(c0.result.simulated, expected);
        let m = compute_metrics(&ya, &yb, &c0.result.simulated, &c1.result.simulated).unwrap();
        assert_eq!(m.acc_match, Some(1.0));
        assert_eq!(m.acc_overall, m.n_match as f64 / ya.len() as f64);
    }
}
