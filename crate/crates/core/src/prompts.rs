//! Verbalization and evaluation prompts assembled from the text templates in
//! `assets/templates`, with toggles for model internals and for hiding the
//! model family name.

use crate::data::DatasetName;
use crate::models::ModelKind;
use regex::Regex;
use std::collections::BTreeMap;
use std::sync::LazyLock;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template placeholder `{{{0}}}` has no binding")]
    MissingBinding(String),
    #[error("no {kind:?} template for {dataset} with internals={with_internals}")]
    UnknownTemplate {
        dataset: DatasetName,
        kind: PromptKind,
        with_internals: bool,
    },
    #[error("verbalization text is empty")]
    EmptyVerbalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptKind {
    Verbalization,
    Evaluation,
}

/// Replaces the model family name when it is withheld.
pub const NEUTRAL_MODEL_TYPE: &str = "machine learning";

/// Display labels for model_a and model_b.
pub const MODEL_LABELS: [&str; 2] = ["Model 1", "Model 2"];

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub dataset: DatasetName,
    pub kind: PromptKind,
    pub with_internals: bool,
    pub omit_model_type: bool,
    pub body: String,
}

macro_rules! template {
    ($name:literal) => {
        include_str!(concat!("../assets/templates/", $name, ".txt"))
    };
}

fn builtin_body(dataset: DatasetName, kind: PromptKind, with_internals: bool) -> Option<&'static str> {
    use DatasetName::*;
    use PromptKind::*;
    Some(match (dataset, kind, with_internals) {
        (Blood, Verbalization, false) => template!("blood_verbalization"),
        (Blood, Verbalization, true) => template!("blood_verbalization_internals"),
        (Blood, Evaluation, false) => template!("blood_evaluation"),
        (Diabetes, Verbalization, false) => template!("diabetes_verbalization"),
        (Diabetes, Verbalization, true) => template!("diabetes_verbalization_internals"),
        (Diabetes, Evaluation, false) => template!("diabetes_evaluation"),
        (Car, Verbalization, false) => template!("car_verbalization"),
        (Car, Verbalization, true) => template!("car_verbalization_internals"),
        (Car, Evaluation, false) => template!("car_evaluation"),
        (_, Evaluation, true) => return None,
    })
}

impl PromptTemplate {
    /// A bundled template. Evaluation prompts have no internals variant.
    pub fn builtin(
        dataset: DatasetName,
        kind: PromptKind,
        with_internals: bool,
        omit_model_type: bool,
    ) -> Result<PromptTemplate, PromptError> {
        let body = builtin_body(dataset, kind, with_internals).ok_or(PromptError::UnknownTemplate {
            dataset,
            kind,
            with_internals,
        })?;
        Ok(PromptTemplate {
            dataset,
            kind,
            with_internals,
            omit_model_type,
            body: body.to_string(),
        })
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for cap in PLACEHOLDER.captures_iter(&self.body) {
            let name = cap[1].to_string();
            if !seen.contains(&name) {
                seen.push(name);
            }
        }
        seen
    }
}

// Only lowercase identifiers count, so the JSON-like encoding tables in the
// Car context (`{"vhigh":3, ...}`) pass through untouched.
static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").expect("valid regex"));

/// Single-pass substitution: bound values are never rescanned.
pub fn render(body: &str, bindings: &BTreeMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(body.len());
    let mut last = 0;
    for cap in PLACEHOLDER.captures_iter(body) {
        let whole = cap.get(0).expect("match");
        let name = &cap[1];
        let value = bindings.get(name).ok_or_else(|| PromptError::MissingBinding(name.to_string()))?;
        out.push_str(&body[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&body[last..]);
    Ok(out.trim_end().to_string())
}

/// Sentence introducing the internals section, worded for the model family.
pub fn model_info_intro(model_type_name: Option<&str>) -> String {
    match model_type_name {
        Some("logistic regression") => "The weights for each logistic regression model are provided below. These weights correspond to the input features in the same order as described above:".into(),
        Some("decision tree") => "The structure of each decision tree model is provided below. Split conditions refer to the input features by the names described above:".into(),
        Some("MLP") => "The architecture and parameters of each MLP model are provided below. Input weights correspond to the input features in the same order as described above:".into(),
        Some(other) => format!("The parameters of each {other} model are provided below. They refer to the input features in the same order as described above:"),
        None => "The parameters of each model are provided below. They refer to the input features in the same order as described above:".into(),
    }
}

fn type_binding(template: &PromptTemplate, model_type_name: Option<&str>) -> String {
    match model_type_name {
        Some(name) if !template.omit_model_type => name.to_string(),
        _ => NEUTRAL_MODEL_TYPE.to_string(),
    }
}

/// Renders the two internals texts as the model information block.
pub fn format_model_info(internals_a: &str, internals_b: &str) -> String {
    format!("{}:\n{internals_a}\n\n{}:\n{internals_b}", MODEL_LABELS[0], MODEL_LABELS[1])
}

/// Fills a verbalization template. When the template omits the model type,
/// `model_type_name` is ignored and the neutral phrase is used.
pub fn assemble_verbalization_prompt(
    template: &PromptTemplate,
    model_type_name: Option<&str>,
    sample_json: &str,
    internals: Option<(&str, &str)>,
) -> Result<String, PromptError> {
    let mut b = BTreeMap::new();
    b.insert("model_type", type_binding(template, model_type_name));
    b.insert("verbalization_data", sample_json.to_string());
    if template.with_internals {
        let (a, bb) = internals.ok_or_else(|| PromptError::MissingBinding("model_info".into()))?;
        let shown = if template.omit_model_type { None } else { model_type_name };
        b.insert("model_info_intro", model_info_intro(shown));
        b.insert("model_info", format_model_info(a, bb));
    }
    render(&template.body, &b)
}

/// Which model's outputs are shown (source) and which must be simulated (target).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Direction {
    /// Shown Model 1 outputs, simulate Model 2.
    #[serde(rename = "0to1")]
    ZeroToOne,
    /// Shown Model 2 outputs, simulate Model 1.
    #[serde(rename = "1to0")]
    OneToZero,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::ZeroToOne, Direction::OneToZero];

    pub fn source(&self) -> usize {
        match self {
            Direction::ZeroToOne => 0,
            Direction::OneToZero => 1,
        }
    }

    pub fn target(&self) -> usize {
        1 - self.source()
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::ZeroToOne => "0to1",
            Direction::OneToZero => "1to0",
        }
    }
}

pub fn assemble_evaluation_prompt(
    template: &PromptTemplate,
    model_type_name: Option<&str>,
    eval_sample_json: &str,
    verbalization: &str,
    direction: Direction,
) -> Result<String, PromptError> {
    if verbalization.trim().is_empty() {
        return Err(PromptError::EmptyVerbalization);
    }
    let mut b = BTreeMap::new();
    b.insert("model_type", type_binding(template, model_type_name));
    b.insert("evaluation_data", eval_sample_json.to_string());
    b.insert("verbalization", verbalization.to_string());
    b.insert("model_unpruned", MODEL_LABELS[direction.source()].to_string());
    b.insert("model_pruned", MODEL_LABELS[direction.target()].to_string());
    render(&template.body, &b)
}

/// Prompt type name for a model kind.
pub fn model_type_name(kind: ModelKind) -> &'static str {
    kind.type_name()
}
