//! Experiment configuration file (TOML, versioned).
//!
//! ```toml
//! format_version = 1
//! dataset = "blood"
//! kind = "dt"
//! levels = [1, 2, 3, 4, 5]
//! n_pairs = 3
//! seed = 7
//! output_dir = "runs/blood-dt"
//! mock = true
//!
//! [[verbalizers]]
//! model = "gpt-4o"
//!
//! [evaluator]
//! endpoint = "https://gateway.example/v1/chat/completions"
//! model = "llama-3.3-70b"
//! ```

use modeldiff::data::DatasetName;
use modeldiff::llm::LlmConfig;
use modeldiff::models::ModelKind;
use modeldiff::pairgen::{DisagreementLevel, PairgenConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Offline evaluator used in mock mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockEvaluator {
    /// Re-executes the oracle's model dump.
    #[default]
    Rule,
    /// Predicts the target agrees with the shown outputs.
    Copy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataVariationConfig {
    /// Feature name as in the dataset spec, e.g. `"Recency (months)"`.
    pub feature: String,
    pub fraction: f64,
    #[serde(default = "all_kinds")]
    pub kinds: Vec<ModelKind>,
}

fn all_kinds() -> Vec<ModelKind> {
    ModelKind::ALL.to_vec()
}
fn default_levels() -> Vec<u8> {
    vec![2]
}
fn default_n_pairs() -> usize {
    3
}
fn default_data_dir() -> PathBuf {
    "data".into()
}
fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub dataset: DatasetName,
    /// Required by the level experiments; data variation uses its own list.
    #[serde(default)]
    pub kind: Option<ModelKind>,
    /// 1–3 are disagreement bands; 4 is Level-2 pairs with model internals
    /// in the prompt; 5 is Level-2 pairs with the model family withheld.
    #[serde(default = "default_levels")]
    pub levels: Vec<u8>,
    #[serde(default = "default_n_pairs")]
    pub n_pairs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Response cache for live calls; defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub mock: bool,
    #[serde(default)]
    pub mock_evaluator: MockEvaluator,
    /// Concurrent verbalization / evaluation requests.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub pairgen: PairgenConfig,
    #[serde(default)]
    pub verbalizers: Vec<LlmConfig>,
    /// The single evaluator shared by every verbalizer in the run.
    #[serde(default)]
    pub evaluator: Option<LlmConfig>,
    #[serde(default)]
    pub data_variation: Option<DataVariationConfig>,
}

/// What a level number means for pair generation and prompting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelSpec {
    pub number: u8,
    pub band: DisagreementLevel,
    pub with_internals: bool,
    pub omit_model_type: bool,
}

impl LevelSpec {
    pub fn new(number: u8) -> Option<LevelSpec> {
        let (band, with_internals, omit_model_type) = match number {
            1 => (DisagreementLevel::L1, false, false),
            2 => (DisagreementLevel::L2, false, false),
            3 => (DisagreementLevel::L3, false, false),
            4 => (DisagreementLevel::L2, true, false),
            5 => (DisagreementLevel::L2, false, true),
            _ => return None,
        };
        Some(LevelSpec {
            number,
            band,
            with_internals,
            omit_model_type,
        })
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file. Relative `data_dir`, `output_dir` and
    /// `cache_dir` are taken as given, i.e. relative to the working directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.format_version != CONFIG_FORMAT_VERSION {
            return bad(format!(
                "format_version {} is not supported (expected {CONFIG_FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.levels.is_empty() {
            return bad("levels must not be empty".into());
        }
        if let Some(l) = self.levels.iter().find(|l| LevelSpec::new(**l).is_none()) {
            return bad(format!("level {l} is not one of 1-5"));
        }
        if self.n_pairs == 0 {
            return bad("n_pairs must be at least 1".into());
        }
        if self.max_in_flight == 0 {
            return bad("max_in_flight must be at least 1".into());
        }
        if let Some(dv) = &self.data_variation {
            if !(0.0..=1.0).contains(&dv.fraction) {
                return bad(format!("data_variation.fraction {} is outside [0, 1]", dv.fraction));
            }
            if dv.kinds.is_empty() {
                return bad("data_variation.kinds must not be empty".into());
            }
        }
        if !self.mock {
            if self.verbalizers.is_empty() {
                return bad("live runs need at least one [[verbalizers]] entry".into());
            }
            let Some(evaluator) = &self.evaluator else {
                return bad("live runs need an [evaluator] section".into());
            };
            for c in self.verbalizers.iter().chain(std::iter::once(evaluator)) {
                c.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
            let mut ids: Vec<&str> = self.verbalizers.iter().map(|v| v.model.as_str()).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return bad("verbalizer model ids must be distinct".into());
            }
        }
        Ok(())
    }

    pub fn require_kind(&self) -> Result<ModelKind, ConfigError> {
        self.kind
            .ok_or_else(|| ConfigError::Invalid("`kind` is required for level experiments".into()))
    }

    /// Level numbers in ascending order without repeats.
    pub fn level_specs(&self) -> Vec<LevelSpec> {
        let mut levels = self.levels.clone();
        levels.sort_unstable();
        levels.dedup();
        levels.into_iter().filter_map(LevelSpec::new).collect()
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    /// Digest of the settings that determine results. Locations
    /// (`data_dir`, `output_dir`, `cache_dir`) and concurrency are excluded
    /// so the same experiment run elsewhere has the same digest.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.data_dir = PathBuf::new();
        c.output_dir = PathBuf::new();
        c.cache_dir = None;
        c.max_in_flight = 1;
        modeldiff::llm::sha256_hex(serde_json::to_string(&c).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "format_version = 1\ndataset = \"blood\"\nkind = \"dt\"\noutput_dir = \"out\"\nmock = true\n";

    #[test]
    fn minimal_mock_config() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.levels, [2]);
        assert_eq!(c.n_pairs, 3);
        assert_eq!(c.pairgen, PairgenConfig::default());
        assert_eq!(c.cache_dir(), PathBuf::from("out/cache"));
    }

    #[test]
    fn live_runs_need_channels() {
        let live = MINIMAL.replace("mock = true", "mock = false");
        assert!(matches!(ExperimentConfig::from_toml(&live), Err(ConfigError::Invalid(_))));
        let ok = format!("{live}[[verbalizers]]\nmodel = \"a\"\n[evaluator]\nmodel = \"e\"\n");
        ExperimentConfig::from_toml(&ok).unwrap();
        let dup = format!("{live}[[verbalizers]]\nmodel = \"a\"\n[[verbalizers]]\nmodel = \"a\"\n[evaluator]\nmodel = \"e\"\n");
        assert!(ExperimentConfig::from_toml(&dup).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for patch in ["levels = [6]", "n_pairs = 0", "format_version = 2", "colour = 1"] {
            let key = patch.split(' ').next().unwrap();
            let text: String = MINIMAL
                .lines()
                .filter(|l| !l.starts_with(key))
                .map(|l| format!("{l}\n"))
                .collect::<String>()
                + patch;
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{patch}");
        }
    }

    #[test]
    fn level_meanings() {
        let l4 = LevelSpec::new(4).unwrap();
        assert_eq!((l4.band, l4.with_internals, l4.omit_model_type), (DisagreementLevel::L2, true, false));
        let l5 = LevelSpec::new(5).unwrap();
        assert_eq!((l5.band, l5.with_internals, l5.omit_model_type), (DisagreementLevel::L2, false, true));
        assert!(LevelSpec::new(0).is_none());
    }

    #[test]
    fn digest_ignores_locations() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }
}
