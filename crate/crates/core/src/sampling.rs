//! The representative (verb) sample and evaluation sample, and their
//! canonical single-line JSON wire form.
//!
//! ```text
//! [{"features":[0.5000,-0.2500],"model_1_output":1,"model_2_output":0}]
//! [{"features":[3,0,2,5,2,2],"model_output":2}]
//! ```
//! Standardized features print with four decimals; categorical codes print
//! as bare integers.

use crate::data::{DatasetName, DatasetSpec, SplitBundle, TabularDataset};
use crate::format::fixed4;
use crate::models::ModelError;
use crate::pairgen::ModelPair;
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("sample is not valid JSON: {0}")]
    Json(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub features: Vec<f64>,
    pub prediction_a: u32,
    pub prediction_b: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentativeSample {
    pub dataset: DatasetName,
    pub feature_names: Vec<String>,
    /// Features rendered as integer codes rather than reals.
    pub integer_features: Vec<bool>,
    pub rows: Vec<SampleRow>,
    /// Source-file row of each sample row; not serialized.
    pub row_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub features: Vec<f64>,
    pub prediction: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSample {
    pub dataset: DatasetName,
    pub feature_names: Vec<String>,
    pub integer_features: Vec<bool>,
    pub rows: Vec<EvalRow>,
    /// 0 when the shown outputs are model_a's, 1 for model_b's.
    pub source_model_index: usize,
    pub row_ids: Vec<usize>,
}

fn integer_features(spec: &DatasetSpec) -> Vec<bool> {
    (0..spec.n_features()).map(|j| spec.is_categorical(j)).collect()
}

pub fn build_representative_sample(bundle: &SplitBundle, pair: &ModelPair) -> Result<RepresentativeSample, ModelError> {
    let verb = &bundle.verb;
    let a = pair.model_a.model.predict(&verb.features)?;
    let b = pair.model_b.model.predict(&verb.features)?;
    Ok(RepresentativeSample {
        dataset: verb.spec.name,
        feature_names: verb.spec.feature_names.clone(),
        integer_features: integer_features(&verb.spec),
        rows: verb
            .features
            .iter()
            .zip(a.into_iter().zip(b))
            .map(|(x, (pa, pb))| SampleRow {
                features: x.clone(),
                prediction_a: pa,
                prediction_b: pb,
            })
            .collect(),
        row_ids: verb.row_ids.clone(),
    })
}

/// Eval-split rows with the outputs of `model_a` (source 0) or `model_b` (source 1).
pub fn build_eval_sample(bundle: &SplitBundle, pair: &ModelPair, source_index: usize) -> Result<EvalSample, ModelError> {
    let model = match source_index {
        0 => &pair.model_a,
        1 => &pair.model_b,
        _ => panic!("source_index must be 0 or 1, got {source_index}"),
    };
    Ok(eval_sample_from(&bundle.eval, &model.model.predict(&bundle.eval.features)?, source_index))
}

pub fn eval_sample_from(eval: &TabularDataset, predictions: &[u32], source_index: usize) -> EvalSample {
    EvalSample {
        dataset: eval.spec.name,
        feature_names: eval.spec.feature_names.clone(),
        integer_features: integer_features(&eval.spec),
        rows: eval
            .features
            .iter()
            .zip(predictions)
            .map(|(x, &p)| EvalRow {
                features: x.clone(),
                prediction: p,
            })
            .collect(),
        source_model_index: source_index,
        row_ids: eval.row_ids.clone(),
    }
}

fn push_features(out: &mut String, features: &[f64], integer: &[bool]) {
    out.push_str("{\"features\":[");
    for (j, v) in features.iter().enumerate() {
        if j > 0 {
            out.push(',');
        }
        if integer.get(j).copied().unwrap_or(false) {
            out.push_str(&format!("{}", v.round() as i64));
        } else {
            out.push_str(&fixed4(*v));
        }
    }
    out.push(']');
}

impl RepresentativeSample {
    pub fn to_json(&self) -> String {
        let mut out = String::from("[");
        for (i, row) in self.rows.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            push_features(&mut out, &row.features, &self.integer_features);
            out.push_str(&format!(
                ",\"model_1_output\":{},\"model_2_output\":{}}}",
                row.prediction_a, row.prediction_b
            ));
        }
        out.push(']');
        out
    }

    /// Parses the wire form back into rows. `row_ids` cannot be recovered and
    /// are left empty.
    pub fn parse(text: &str, spec: &DatasetSpec) -> Result<RepresentativeSample, SampleError> {
        let rows = parse_rows(text, spec.n_features())?
            .into_iter()
            .enumerate()
            .map(|(i, (features, obj))| {
                Ok(SampleRow {
                    features,
                    prediction_a: class_field(&obj, "model_1_output", i)?,
                    prediction_b: class_field(&obj, "model_2_output", i)?,
                })
            })
            .collect::<Result<_, SampleError>>()?;
        Ok(RepresentativeSample {
            dataset: spec.name,
            feature_names: spec.feature_names.clone(),
            integer_features: integer_features(spec),
            rows,
            row_ids: Vec::new(),
        })
    }
}

impl EvalSample {
    pub fn to_json(&self) -> String {
        let mut out = String::from("[");
        for (i, row) in self.rows.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            push_features(&mut out, &row.features, &self.integer_features);
            out.push_str(&format!(",\"model_output\":{}}}", row.prediction));
        }
        out.push(']');
        out
    }

    pub fn parse(text: &str, spec: &DatasetSpec, source_index: usize) -> Result<EvalSample, SampleError> {
        let rows = parse_rows(text, spec.n_features())?
            .into_iter()
            .enumerate()
            .map(|(i, (features, obj))| {
                Ok(EvalRow {
                    features,
                    prediction: class_field(&obj, "model_output", i)?,
                })
            })
            .collect::<Result<_, SampleError>>()?;
        Ok(EvalSample {
            dataset: spec.name,
            feature_names: spec.feature_names.clone(),
            integer_features: integer_features(spec),
            rows,
            source_model_index: source_index,
            row_ids: Vec::new(),
        })
    }

    pub fn predictions(&self) -> Vec<u32> {
        self.rows.iter().map(|r| r.prediction).collect()
    }

    pub fn features(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.features.clone()).collect()
    }
}

fn parse_rows(text: &str, d: usize) -> Result<Vec<(Vec<f64>, serde_json::Map<String, Value>)>, SampleError> {
    let value: Value = serde_json::from_str(text).map_err(|e| SampleError::Json(e.to_string()))?;
    let Value::Array(items) = value else {
        return Err(SampleError::Json("top level is not an array".into()));
    };
    items
        .into_iter()
        .enumerate()
        .map(|(i, item)| {
            let Value::Object(obj) = item else {
                return Err(SampleError::Row {
                    row: i,
                    message: "not an object".into(),
                });
            };
            let features = obj
                .get("features")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                .filter(|f| f.len() == d)
                .ok_or_else(|| SampleError::Row {
                    row: i,
                    message: format!("`features` must be an array of {d} numbers"),
                })?;
            Ok((features, obj))
        })
        .collect()
}

fn class_field(obj: &serde_json::Map<String, Value>, key: &str, row: usize) -> Result<u32, SampleError> {
    obj.get(key)
        .and_then(Value::as_u64)
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| SampleError::Row {
            row,
            message: format!("missing integer `{key}`"),
        })
}
