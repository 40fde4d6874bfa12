//! Metrics records and the summary tables built from them.

use modeldiff::data::DatasetName;
use modeldiff::evaluation::{aggregate, Metrics, Stat, Summary};
use modeldiff::models::ModelKind;
use modeldiff::pairgen::Provenance;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;

pub const METRICS_FORMAT_VERSION: u32 = 1;

/// One pair × verbalizer evaluation, as persisted under `metrics/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub format_version: u32,
    pub pair_id: String,
    pub dataset: DatasetName,
    pub kind: ModelKind,
    /// 1–5; absent for data-variation pairs.
    pub level: Option<u8>,
    pub provenance: Provenance,
    /// Test-split disagreement of the pair.
    pub disagreement: f64,
    pub with_internals: bool,
    pub omit_model_type: bool,
    pub verbalizer: String,
    pub evaluator: String,
    /// Unresolved rows when simulating model_a and model_b.
    pub unresolved: [usize; 2],
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    /// One table per model kind, columns per level.
    Levels,
    /// One table, columns per model kind.
    DataVariation,
}

/// Aggregate over all pairs sharing one table cell group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub table: Table,
    pub dataset: DatasetName,
    pub kind: ModelKind,
    pub level: Option<u8>,
    pub verbalizer: String,
    pub evaluator: String,
    pub summary: Summary,
}

impl SummaryRow {
    pub fn column(&self) -> String {
        match (self.table, self.level) {
            (Table::Levels, Some(l)) => format!("Level {l}"),
            _ => self.kind.label().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub format_version: u32,
    /// What the ± spread is taken over.
    pub std_over: String,
    pub rows: Vec<SummaryRow>,
}

type GroupKey = (Table, DatasetName, ModelKind, Option<u8>, String, String);

pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<GroupKey, Vec<&Metrics>> = BTreeMap::new();
    for r in records {
        let table = if r.level.is_some() { Table::Levels } else { Table::DataVariation };
        groups
            .entry((table, r.dataset, r.kind, r.level, r.verbalizer.clone(), r.evaluator.clone()))
            .or_default()
            .push(&r.metrics);
    }
    groups
        .into_iter()
        .map(|((table, dataset, kind, level, verbalizer, evaluator), ms)| SummaryRow {
            table,
            dataset,
            kind,
            level,
            verbalizer,
            evaluator,
            summary: aggregate(ms).expect("groups are non-empty"),
        })
        .collect()
}

pub const METRIC_NAMES: [&str; 3] = ["Acc_overall", "Acc_mismatch", "Acc_match"];

fn metric(summary: &Summary, i: usize) -> Option<Stat> {
    match i {
        0 => Some(summary.acc_overall),
        1 => summary.acc_mismatch,
        _ => summary.acc_match,
    }
}

const ABSENT: &str = "n/a";

pub fn render_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "table", "dataset", "kind", "llm", "evaluator", "column", "metric", "mean", "std", "n", "n_pairs", "cell",
    ])
    .expect("in-memory write");
    for row in rows {
        for (i, name) in METRIC_NAMES.iter().enumerate() {
            let stat = metric(&row.summary, i);
            let table = match row.table {
                Table::Levels => "levels",
                Table::DataVariation => "data_variation",
            };
            let (mean, std, n, cell) = match stat {
                Some(s) => (s.mean.to_string(), s.std.to_string(), s.n.to_string(), s.format()),
                None => (String::new(), String::new(), "0".into(), ABSENT.into()),
            };
            w.write_record([
                table,
                row.dataset.as_str(),
                row.kind.as_str(),
                &row.verbalizer,
                &row.evaluator,
                &row.column(),
                name,
                &mean,
                &std,
                &n,
                &row.summary.n_reports.to_string(),
                &cell,
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn markdown_table(out: &mut String, rows: &[&SummaryRow], columns: &[String]) {
    let _ = writeln!(out, "| LLM | Metric | {} |", columns.join(" | "));
    let _ = writeln!(out, "|---|---|{}", "---|".repeat(columns.len()));
    let mut datasets: Vec<DatasetName> = rows.iter().map(|r| r.dataset).collect();
    datasets.dedup();
    for dataset in datasets {
        let _ = writeln!(out, "| **{} Dataset** | |{}", dataset.title(), " |".repeat(columns.len()));
        let mut llms: Vec<&str> = rows.iter().filter(|r| r.dataset == dataset).map(|r| r.verbalizer.as_str()).collect();
        llms.sort_unstable();
        llms.dedup();
        for llm in llms {
            for (i, name) in METRIC_NAMES.iter().enumerate() {
                let cells: Vec<String> = columns
                    .iter()
                    .map(|col| {
                        rows.iter()
                            .find(|r| r.dataset == dataset && r.verbalizer == llm && &r.column() == col)
                            .and_then(|r| metric(&r.summary, i))
                            .map_or_else(|| ABSENT.to_string(), |s| s.format())
                    })
                    .collect();
                let label = if i == 0 { format!(" {llm} ") } else { " ".into() };
                let _ = writeln!(out, "|{label}| {name} | {} |", cells.join(" | "));
            }
        }
    }
}

pub fn render_markdown(rows: &[SummaryRow]) -> String {
    let mut out = String::from("# Results\n\nCells are mean ± sample standard deviation over model pairs");
    let mut evaluators: Vec<&str> = rows.iter().map(|r| r.evaluator.as_str()).collect();
    evaluators.sort_unstable();
    evaluators.dedup();
    let _ = writeln!(out, "; evaluator: {}.", evaluators.join(", "));
    for kind in ModelKind::ALL {
        let table: Vec<&SummaryRow> = rows.iter().filter(|r| r.table == Table::Levels && r.kind == kind).collect();
        if table.is_empty() {
            continue;
        }
        let mut levels: Vec<u8> = table.iter().filter_map(|r| r.level).collect();
        levels.sort_unstable();
        levels.dedup();
        let columns: Vec<String> = levels.iter().map(|l| format!("Level {l}")).collect();
        let _ = writeln!(out, "\n## {} models\n", kind.label());
        markdown_table(&mut out, &table, &columns);
    }
    let dv: Vec<&SummaryRow> = rows.iter().filter(|r| r.table == Table::DataVariation).collect();
    if !dv.is_empty() {
        let columns: Vec<String> = ModelKind::ALL
            .iter()
            .filter(|k| dv.iter().any(|r| r.kind == **k))
            .map(|k| k.label().to_string())
            .collect();
        let _ = writeln!(out, "\n## Training data variation\n");
        markdown_table(&mut out, &dv, &columns);
    }
    out
}
