//! Tabular benchmark datasets: loading, encoding, splitting and scaling.

mod split;
mod standardize;

pub use split::{negate_feature_fraction, split_train_test, split_verb_eval, SplitBundle, SplitRecord};
pub use standardize::Standardizer;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: unknown category `{value}` for `{feature}`")]
    UnknownCategory {
        feature: String,
        value: String,
        line: u64,
    },
    #[error("line {line}: {message}")]
    RowParse { line: u64, message: String },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("too few rows: {0}")]
    TooFewRows(String),
    #[error("feature `{0}` has zero variance on the training split")]
    ZeroVariance(String),
    #[error("fraction {0} outside its allowed range")]
    InvalidFraction(f64),
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Blood,
    Diabetes,
    Car,
}

impl DatasetName {
    pub const ALL: [DatasetName; 3] = [DatasetName::Blood, DatasetName::Diabetes, DatasetName::Car];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Blood => "blood",
            DatasetName::Diabetes => "diabetes",
            DatasetName::Car => "car",
        }
    }

    /// Display name used in reports.
    pub fn title(&self) -> &'static str {
        match self {
            DatasetName::Blood => "Blood",
            DatasetName::Diabetes => "Diabetes",
            DatasetName::Car => "Car",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "blood" => Ok(DatasetName::Blood),
            "diabetes" => Ok(DatasetName::Diabetes),
            "car" => Ok(DatasetName::Car),
            other => Err(DataError::InvalidSpec(format!("unknown dataset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassLabel {
    pub code: u32,
    pub meaning: String,
}

/// Static description of a dataset: feature order, class meanings, category
/// encodings and the train fraction used for the first split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(default = "spec_version")]
    pub version: u32,
    pub name: DatasetName,
    pub feature_names: Vec<String>,
    pub class_labels: Vec<ClassLabel>,
    #[serde(default)]
    pub categorical_encodings: BTreeMap<String, BTreeMap<String, i64>>,
    /// Maps raw target strings to class codes. Numeric targets parse directly when absent.
    #[serde(default)]
    pub target_encoding: Option<BTreeMap<String, u32>>,
    pub train_fraction: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn spec_version() -> u32 {
    1
}

fn default_true() -> bool {
    true
}

const BLOOD_SPEC: &str = include_str!("../../assets/datasets/blood.toml");
const DIABETES_SPEC: &str = include_str!("../../assets/datasets/diabetes.toml");
const CAR_SPEC: &str = include_str!("../../assets/datasets/car.toml");

impl DatasetSpec {
    /// The `DatasetSpec` shipped with the crate for `name`.
    pub fn builtin(name: DatasetName) -> DatasetSpec {
        let text = match name {
            DatasetName::Blood => BLOOD_SPEC,
            DatasetName::Diabetes => DIABETES_SPEC,
            DatasetName::Car => CAR_SPEC,
        };
        let spec = DatasetSpec::from_toml(text).expect("bundled dataset spec is valid");
        debug_assert_eq!(spec.name, name);
        spec
    }

    pub fn from_toml(text: &str) -> Result<DatasetSpec, DataError> {
        let spec: DatasetSpec = toml::from_str(text).map_err(|e| DataError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<DatasetSpec, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        DatasetSpec::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.feature_names.is_empty() {
            return Err(DataError::InvalidSpec("no features".into()));
        }
        for (i, label) in self.class_labels.iter().enumerate() {
            if label.code as usize != i {
                return Err(DataError::InvalidSpec(format!(
                    "class codes must be distinct and contiguous from 0, found {} at position {i}",
                    label.code
                )));
            }
        }
        if self.class_labels.len() < 2 {
            return Err(DataError::InvalidSpec("need at least two classes".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(DataError::InvalidFraction(self.train_fraction));
        }
        for feature in self.categorical_encodings.keys() {
            if !self.feature_names.contains(feature) {
                return Err(DataError::InvalidSpec(format!("encoding for unknown feature `{feature}`")));
            }
        }
        if let Some(targets) = &self.target_encoding {
            if let Some(bad) = targets.values().find(|c| **c as usize >= self.class_labels.len()) {
                return Err(DataError::InvalidSpec(format!("target encoding maps to unknown class {bad}")));
            }
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_labels.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    pub fn is_categorical(&self, feature: usize) -> bool {
        self.categorical_encodings.contains_key(&self.feature_names[feature])
    }

    /// Inverse of the category encoding for one feature.
    pub fn decode_category(&self, feature: usize, code: i64) -> Option<&str> {
        self.categorical_encodings
            .get(&self.feature_names[feature])?
            .iter()
            .find(|(_, c)| **c == code)
            .map(|(k, _)| k.as_str())
    }

    pub fn class_meaning(&self, code: u32) -> Option<&str> {
        self.class_labels.get(code as usize).map(|c| c.meaning.as_str())
    }
}

/// Feature matrix with integer class targets.
///
/// `row_ids` holds each row's position in the source file; splits carry them
/// along so partitions can be audited against the original rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<u32>,
    pub row_ids: Vec<usize>,
    pub spec: Arc<DatasetSpec>,
}

impl TabularDataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<u32>, spec: Arc<DatasetSpec>) -> Result<Self, DataError> {
        if features.len() != targets.len() {
            return Err(DataError::InvalidSpec(format!(
                "{} feature rows but {} targets",
                features.len(),
                targets.len()
            )));
        }
        let d = spec.n_features();
        if let Some(i) = features.iter().position(|r| r.len() != d) {
            return Err(DataError::RowParse {
                line: i as u64 + 1,
                message: format!("expected {d} features, found {}", features[i].len()),
            });
        }
        if let Some(bad) = targets.iter().find(|t| **t as usize >= spec.n_classes()) {
            return Err(DataError::InvalidSpec(format!("target {bad} is not a declared class")));
        }
        let row_ids = (0..features.len()).collect();
        Ok(TabularDataset {
            features,
            targets,
            row_ids,
            spec,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.spec.n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &t in &self.targets {
            counts[t as usize] += 1;
        }
        counts
    }

    /// Rows at `positions` (indices into this dataset), in that order.
    pub fn subset(&self, positions: &[usize]) -> TabularDataset {
        TabularDataset {
            features: positions.iter().map(|&p| self.features[p].clone()).collect(),
            targets: positions.iter().map(|&p| self.targets[p]).collect(),
            row_ids: positions.iter().map(|&p| self.row_ids[p]).collect(),
            spec: Arc::clone(&self.spec),
        }
    }

    /// Rounds every feature to `decimals` places, the precision shown in prompts.
    pub fn round_features(&self, decimals: i32) -> TabularDataset {
        let scale = 10f64.powi(decimals);
        let mut out = self.clone();
        for row in &mut out.features {
            for v in row.iter_mut() {
                let r = (*v * scale).round() / scale;
                *v = if r == 0.0 { 0.0 } else { r };
            }
        }
        out
    }
}

/// Loads `<data_dir>/<name>.csv` with the bundled spec for `name`.
pub fn load_builtin(data_dir: &Path, name: DatasetName) -> Result<TabularDataset, DataError> {
    load_dataset(&data_dir.join(format!("{name}.csv")), &DatasetSpec::builtin(name))
}

/// Reads a CSV with a header row. Feature columns are located by name; the
/// target is the last column.
pub fn load_dataset(path: &Path, spec: &DatasetSpec) -> Result<TabularDataset, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(file, spec)
}

pub fn read_dataset<R: std::io::Read>(reader: R, spec: &DatasetSpec) -> Result<TabularDataset, DataError> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Err(DataError::MissingColumn("target".into()));
    }
    let target_col = header.len() - 1;
    let mut columns = Vec::with_capacity(spec.n_features());
    for name in &spec.feature_names {
        match header.iter().position(|h| h == name) {
            Some(i) if i != target_col => columns.push(i),
            _ => return Err(DataError::MissingColumn(name.clone())),
        }
    }

    let encodings: Vec<Option<&BTreeMap<String, i64>>> =
        spec.feature_names.iter().map(|f| spec.categorical_encodings.get(f)).collect();

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != header.len() {
            return Err(DataError::RowParse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(columns.len());
        for (j, &col) in columns.iter().enumerate() {
            let raw = &record[col];
            let value = match encodings[j] {
                Some(map) => *map.get(raw).ok_or_else(|| DataError::UnknownCategory {
                    feature: spec.feature_names[j].clone(),
                    value: raw.to_string(),
                    line,
                })? as f64,
                None => parse_number(raw).ok_or_else(|| DataError::RowParse {
                    line,
                    message: format!("`{raw}` is not a number ({})", spec.feature_names[j]),
                })?,
            };
            row.push(value);
        }
        features.push(row);
        targets.push(parse_target(&record[target_col], spec, line)?);
    }
    TabularDataset::new(features, targets, Arc::new(spec.clone()))
}

fn parse_number(raw: &str) -> Option<f64> {
    if raw.is_empty() || raw == "?" {
        return None;
    }
    raw.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_target(raw: &str, spec: &DatasetSpec, line: u64) -> Result<u32, DataError> {
    let code = match &spec.target_encoding {
        Some(map) => *map.get(raw).ok_or_else(|| DataError::UnknownCategory {
            feature: "target".into(),
            value: raw.to_string(),
            line,
        })?,
        None => {
            let v = parse_number(raw)
                .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                .ok_or_else(|| DataError::RowParse {
                    line,
                    message: format!("target `{raw}` is not a class code"),
                })?;
            v as u32
        }
    };
    if code as usize >= spec.n_classes() {
        return Err(DataError::RowParse {
            line,
            message: format!("target {code} is not a declared class"),
        });
    }
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR_HEADER: &str = "buying,maint,doors,persons,lug_boot,safety,class\n";

    #[test]
    fn car_row_encodes_per_prompt_table() {
        let spec = DatasetSpec::builtin(DatasetName::Car);
        let csv = format!("{CAR_HEADER}vhigh,low,2,more,big,high,vgood\n");
        let ds = read_dataset(csv.as_bytes(), &spec).unwrap();
        assert_eq!(ds.features[0], vec![3.0, 0.0, 2.0, 5.0, 2.0, 2.0]);
        assert_eq!(ds.targets, vec![3]);
    }

    #[test]
    fn car_unknown_category_is_reported_with_line() {
        let spec = DatasetSpec::builtin(DatasetName::Car);
        let csv = format!("{CAR_HEADER}low,low,2,2,small,low,unacc\nmedium,low,2,2,small,low,unacc\n");
        match read_dataset(csv.as_bytes(), &spec) {
            Err(DataError::UnknownCategory { feature, value, line }) => {
                assert_eq!(feature, "buying");
                assert_eq!(value, "medium");
                assert_eq!(line, 3);
            }
            other => panic!("expected UnknownCategory, got {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_bad_number() {
        let spec = DatasetSpec::builtin(DatasetName::Blood);
        let csv = "Recency (months),Frequency (times),Time (months),y\n1,2,3,0\n";
        assert!(matches!(read_dataset(csv.as_bytes(), &spec), Err(DataError::MissingColumn(c)) if c == "Monetary (c.c. blood)"));

        let csv = "Recency (months),Frequency (times),Monetary (c.c. blood),Time (months),y\n1,2,x,3,0\n";
        assert!(matches!(read_dataset(csv.as_bytes(), &spec), Err(DataError::RowParse { line: 2, .. })));
    }

    #[test]
    fn car_encodings_match_prompt_and_round_trip() {
        let spec = DatasetSpec::builtin(DatasetName::Car);
        let enc = &spec.categorical_encodings;
        assert_eq!(enc["buying"]["vhigh"], 3);
        assert_eq!(enc["buying"]["low"], 0);
        assert_eq!(enc["maint"], enc["buying"]);
        assert_eq!(enc["doors"]["5more"], 5);
        assert_eq!(enc["persons"]["more"], 5);
        assert_eq!(enc["lug_boot"]["small"], 0);
        assert_eq!(enc["lug_boot"]["big"], 2);
        assert_eq!(enc["safety"]["high"], 2);
        for (j, name) in spec.feature_names.iter().enumerate() {
            for (category, code) in &enc[name] {
                assert_eq!(spec.decode_category(j, *code), Some(category.as_str()));
            }
        }
    }

    #[test]
    fn spec_rejects_non_contiguous_classes() {
        let text = r#"
name = "blood"
train_fraction = 0.7
feature_names = ["a"]
[[class_labels]]
code = 0
meaning = "no"
[[class_labels]]
code = 2
meaning = "yes"
"#;
        assert!(matches!(DatasetSpec::from_toml(text), Err(DataError::InvalidSpec(_))));
    }
}
