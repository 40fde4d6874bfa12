//! Plain-text dumps of learned structure, used as the optional model
//! information section of a prompt. The text avoids naming the model family.

use super::{DecisionTreeModel, LogisticRegressionModel, MlpModel, TrainedModel, TreeNode};
use crate::data::DatasetSpec;
use crate::format::fixed4;
use std::fmt::Write as _;

fn class_name(spec: &DatasetSpec, code: u32) -> String {
    match spec.class_meaning(code) {
        Some(m) => format!("class {code} ({m})"),
        None => format!("class {code}"),
    }
}

fn row(values: &[f64]) -> String {
    let cells: Vec<String> = values.iter().map(|v| fixed4(*v)).collect();
    format!("[{}]", cells.join(", "))
}

pub fn describe_internals(model: &TrainedModel, spec: &DatasetSpec) -> String {
    match model {
        TrainedModel::Lr(m) => describe_lr(m, spec),
        TrainedModel::Dt(m) => describe_dt(m, spec),
        TrainedModel::Mlp(m) => describe_mlp(m, spec),
    }
}

fn describe_lr(m: &LogisticRegressionModel, spec: &DatasetSpec) -> String {
    let mut out = String::new();
    if m.is_binary() {
        for (name, w) in spec.feature_names.iter().zip(&m.coefficients[0]) {
            let _ = writeln!(out, "{name}: {}", fixed4(*w));
        }
        let _ = writeln!(out, "Intercept: {}", fixed4(m.intercepts[0]));
        let _ = write!(
            out,
            "Predicts {} when intercept + sum(weight * feature) > 0, otherwise {}.",
            class_name(spec, 1),
            class_name(spec, 0)
        );
    } else {
        for (c, (weights, b)) in m.coefficients.iter().zip(&m.intercepts).enumerate() {
            let _ = writeln!(out, "Score for {}:", class_name(spec, c as u32));
            for (name, w) in spec.feature_names.iter().zip(weights) {
                let _ = writeln!(out, "  {name}: {}", fixed4(*w));
            }
            let _ = writeln!(out, "  Intercept: {}", fixed4(*b));
        }
        let _ = write!(
            out,
            "Each score is intercept + sum(weight * feature); the class with the highest score is predicted."
        );
    }
    out
}

fn describe_dt(m: &DecisionTreeModel, spec: &DatasetSpec) -> String {
    fn node(m: &DecisionTreeModel, spec: &DatasetSpec, i: usize, indent: usize, lines: &mut Vec<String>) {
        let pad = "  ".repeat(indent);
        match &m.nodes[i] {
            TreeNode::Leaf { class, .. } => lines.push(format!("{pad}predict {}", class_name(spec, *class))),
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let name = &spec.feature_names[*feature];
                branch(m, spec, format!("{pad}if {name} <= {}:", fixed4(*threshold)), *left, indent, lines);
                branch(m, spec, format!("{pad}else:"), *right, indent, lines);
            }
        }
    }
    // A leaf child is written on the same line as its condition.
    fn branch(m: &DecisionTreeModel, spec: &DatasetSpec, head: String, child: usize, indent: usize, lines: &mut Vec<String>) {
        match &m.nodes[child] {
            TreeNode::Leaf { class, .. } => lines.push(format!("{head} {}", class_name(spec, *class))),
            TreeNode::Split { .. } => {
                lines.push(head);
                node(m, spec, child, indent + 1, lines);
            }
        }
    }
    let mut lines = Vec::new();
    node(m, spec, 0, 0, &mut lines);
    lines.join("\n")
}

fn describe_mlp(m: &MlpModel, spec: &DatasetSpec) -> String {
    let d = m.n_features();
    let h = m.hidden_size();
    let o = m.n_outputs();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Architecture: {d} inputs, 1 hidden layer, {h} units, {} activation, {o} output{}",
        m.activation,
        if o == 1 { "" } else { "s" }
    );
    let _ = writeln!(out, "Hidden layer weights ({h} x {d}, one row per unit, columns in feature order):");
    for r in &m.w1 {
        let _ = writeln!(out, "  {}", row(r));
    }
    let _ = writeln!(out, "Hidden layer biases ({h}):");
    let _ = writeln!(out, "  {}", row(&m.b1));
    let _ = writeln!(out, "Output layer weights ({o} x {h}):");
    for r in &m.w2 {
        let _ = writeln!(out, "  {}", row(r));
    }
    let _ = writeln!(out, "Output layer biases ({o}):");
    let _ = writeln!(out, "  {}", row(&m.b2));
    if o == 1 {
        let _ = write!(
            out,
            "Predicts {} when the output is positive, otherwise {}.",
            class_name(spec, 1),
            class_name(spec, 0)
        );
    } else {
        let classes: Vec<String> = (0..o).map(|c| class_name(spec, c as u32)).collect();
        let _ = write!(out, "Outputs correspond to {}; the largest output is predicted.", classes.join(", "));
    }
    out
}
