//! Chat-completion client with an on-disk response cache, plus the
//! deterministic offline channels: an oracle verbalizer that dumps both
//! models losslessly, a rule evaluator that re-executes that dump, and a
//! copy evaluator that echoes the shown outputs.

use crate::data::DatasetSpec;
use crate::models::{describe_internals, FittedModel};
use crate::pairgen::ModelPair;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::sync::{LazyLock, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("request for prompt {digest} timed out")]
    Timeout { digest: String },
    #[error("HTTP {status} for prompt {digest}: {body}")]
    Http { status: u16, digest: String, body: String },
    #[error("prompt {digest}: gave up after {attempts} attempts, last error: {last}")]
    RetriesExhausted { digest: String, attempts: usize, last: String },
    #[error("transport error for prompt {digest}: {message}")]
    Transport { digest: String, message: String },
    #[error("malformed completion for prompt {digest}: {message}")]
    InvalidResponse { digest: String, message: String },
    #[error("cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
    #[error("invalid LLM config: {0}")]
    InvalidConfig(String),
    #[error("verbalization has no parseable structured diff: {0}")]
    UnparseableDiff(String),
    #[error("evaluation prompt is not in the expected format: {0}")]
    UnparseablePrompt(String),
}

fn default_endpoint() -> String {
    "https://api.openai.com/v1/chat/completions".into()
}
fn default_model() -> String {
    "gpt-4o".into()
}
fn default_temperature() -> f64 {
    0.1
}
fn default_max_tokens() -> u32 {
    2048
}
fn default_timeout() -> u64 {
    120
}
fn default_retries() -> usize {
    3
}
fn default_backoff() -> u64 {
    1000
}
fn default_key_env() -> Option<String> {
    Some("OPENAI_API_KEY".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmConfig {
    /// Full URL of an OpenAI-compatible `/chat/completions` endpoint.
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub retries: usize,
    /// First backoff delay; doubles on every retry.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    /// Environment variable holding the bearer token. Unset or missing
    /// variable means no Authorization header.
    #[serde(default = "default_key_env")]
    pub api_key_env: Option<String>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: default_endpoint(),
            model: default_model(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            api_key_env: default_key_env(),
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidConfig(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.model.trim().is_empty() {
            return Err(LlmError::InvalidConfig("model must not be empty".into()));
        }
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(LlmError::InvalidConfig(format!("endpoint must be an http(s) URL: {}", self.endpoint)));
        }
        Ok(())
    }
}

/// Hex SHA-256 of the prompt bytes.
pub fn prompt_digest(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    prompt_digest: String,
    model: String,
    temperature: f64,
    max_tokens: u32,
    endpoint: String,
    response: String,
}

/// One JSON file per (prompt digest, model, temperature). Reads are
/// lock-free; writes are serialized and land via rename.
#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> ResponseCache {
        ResponseCache {
            dir: dir.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(prompt_digest: &str, model: &str, temperature: f64) -> String {
        hex::encode(Sha256::digest(format!("{prompt_digest}\n{model}\n{temperature:?}").as_bytes()))
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, prompt_digest: &str, model: &str, temperature: f64) -> Option<String> {
        let key = Self::key(prompt_digest, model, temperature);
        let text = std::fs::read_to_string(self.path(&key)).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry) if entry.key == key => Some(entry.response),
            _ => {
                log::warn!("ignoring corrupt cache entry {key}");
                None
            }
        }
    }

    fn put(&self, prompt_digest: &str, config: &LlmConfig, response: &str) -> Result<(), LlmError> {
        let key = Self::key(prompt_digest, &config.model, config.temperature);
        let entry = CacheEntry {
            key: key.clone(),
            prompt_digest: prompt_digest.to_string(),
            model: config.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            endpoint: config.endpoint.clone(),
            response: response.to_string(),
        };
        let path = self.path(&key);
        let text = serde_json::to_string_pretty(&entry).expect("cache entry serializes");
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        write_atomic(&path, text.as_bytes()).map_err(|e| LlmError::Cache {
            path: path.clone(),
            message: e.to_string(),
        })
    }
}

/// Writes through a sibling temp file and renames over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub cached: bool,
    pub attempts: usize,
}

pub struct LlmClient {
    pub config: LlmConfig,
    cache: Option<ResponseCache>,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Retry(LlmError),
    Fatal(LlmError),
}

impl LlmClient {
    pub fn new(config: LlmConfig, cache_dir: Option<PathBuf>) -> Result<LlmClient, LlmError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
        Ok(LlmClient {
            config,
            cache: cache_dir.map(ResponseCache::new),
            http,
        })
    }

    pub fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        self.complete_with_meta(prompt).map(|c| c.text)
    }

    pub fn complete_with_meta(&self, prompt: &str) -> Result<Completion, LlmError> {
        let digest = prompt_digest(prompt);
        if let Some(text) = self
            .cache
            .as_ref()
            .and_then(|c| c.get(&digest, &self.config.model, self.config.temperature))
        {
            log::debug!("cache hit for prompt {digest}");
            return Ok(Completion {
                text,
                cached: true,
                attempts: 0,
            });
        }
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        });
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.send(&body, &digest) {
                Ok(text) => {
                    if let Some(cache) = &self.cache {
                        cache.put(&digest, &self.config, &text)?;
                    }
                    return Ok(Completion {
                        text,
                        cached: false,
                        attempts,
                    });
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(e)) => {
                    if attempts > self.config.retries {
                        if self.config.retries == 0 {
                            return Err(e);
                        }
                        return Err(LlmError::RetriesExhausted {
                            digest,
                            attempts,
                            last: e.to_string(),
                        });
                    }
                    let delay = self.config.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                    log::warn!("{e}; retrying in {delay} ms");
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }

    fn send(&self, body: &Value, digest: &str) -> Result<String, Attempt> {
        let mut req = self.http.post(&self.config.endpoint).json(body);
        if let Some(key) = self.config.api_key_env.as_ref().and_then(|var| std::env::var(var).ok()) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(LlmError::Timeout { digest: digest.into() })
            } else {
                Attempt::Retry(LlmError::Transport {
                    digest: digest.into(),
                    message: e.to_string(),
                })
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let err = LlmError::Http {
                status: status.as_u16(),
                digest: digest.into(),
                body: resp.text().unwrap_or_default().chars().take(500).collect(),
            };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            });
        }
        let value: Value = resp.json().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(LlmError::Timeout { digest: digest.into() })
            } else {
                Attempt::Fatal(LlmError::InvalidResponse {
                    digest: digest.into(),
                    message: e.to_string(),
                })
            }
        })?;
        if let Some(tokens) = value.pointer("/usage/total_tokens") {
            log::info!("prompt {digest}: {tokens} tokens");
        }
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                Attempt::Fatal(LlmError::InvalidResponse {
                    digest: digest.into(),
                    message: "missing choices[0].message.content".into(),
                })
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verbalization {
    pub text: String,
    pub verbalizer: String,
    /// SHA-256 of the verbalization prompt.
    pub prompt_digest: String,
    /// Unix seconds; 0 for the offline channels, which are pure.
    pub created_at: u64,
}

pub const MOCK_ORACLE_ID: &str = "mock-oracle";
pub const MOCK_RULE_ID: &str = "mock-rule";
pub const COPY_ID: &str = "copy";

const DIFF_TAG: &str = "structured_diff";

/// Dumps both models: readable internals followed by a fenced JSON block
/// holding both lossless model documents.
pub fn mock_oracle_verbalize(pair: &ModelPair, spec: &DatasetSpec, prompt: &str) -> Verbalization {
    let payload = json!({
        DIFF_TAG: 1,
        "model_1": pair.model_a.to_value(),
        "model_2": pair.model_b.to_value(),
    });
    let text = format!(
        "Model 1:\n{}\n\nModel 2:\n{}\n\n```json\n{}\n```",
        describe_internals(&pair.model_a.model, spec),
        describe_internals(&pair.model_b.model, spec),
        serde_json::to_string(&payload).expect("model documents serialize"),
    );
    Verbalization {
        text,
        verbalizer: MOCK_ORACLE_ID.into(),
        prompt_digest: prompt_digest(prompt),
        created_at: 0,
    }
}

static FENCE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```[A-Za-z0-9_-]*[ \t]*\r?\n(.*?)```").expect("valid regex"));

/// Contents of the fenced code blocks, in order.
pub fn fenced_blocks(text: &str) -> Vec<&str> {
    FENCE.captures_iter(text).map(|c| c.get(1).expect("group").as_str()).collect()
}

/// Recovers `(model_1, model_2)` from an oracle verbalization.
pub fn parse_structured_diff(text: &str) -> Result<(FittedModel, FittedModel), LlmError> {
    let block = fenced_blocks(text)
        .into_iter()
        .rev()
        .filter_map(|b| serde_json::from_str::<Value>(b).ok())
        .find(|v| v.get(DIFF_TAG).is_some())
        .ok_or_else(|| LlmError::UnparseableDiff("no fenced block with model documents".into()))?;
    let model = |key: &str| {
        let doc = block.get(key).cloned().ok_or_else(|| LlmError::UnparseableDiff(format!("missing {key}")))?;
        FittedModel::from_value(doc).map_err(|e| LlmError::UnparseableDiff(format!("{key}: {e}")))
    };
    Ok((model("model_1")?, model("model_2")?))
}

static TARGET: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"predict the output of Model ([12])").expect("valid regex"));

/// The shown sample rows as `(features, shown output)`; the features keep
/// their JSON form so they can be echoed back.
fn prompt_rows(prompt: &str) -> Result<Vec<(Value, u32)>, LlmError> {
    let line = prompt
        .lines()
        .find_map(|l| l.strip_prefix("Dataset Sample: "))
        .ok_or_else(|| LlmError::UnparseablePrompt("no `Dataset Sample:` line".into()))?;
    let rows: Vec<Value> =
        serde_json::from_str(line).map_err(|e| LlmError::UnparseablePrompt(format!("sample JSON: {e}")))?;
    rows.into_iter()
        .enumerate()
        .map(|(i, row)| {
            let features = row.get("features").filter(|f| f.is_array()).cloned();
            let output = row.get("model_output").and_then(Value::as_u64);
            match (features, output) {
                (Some(f), Some(o)) => Ok((f, o as u32)),
                _ => Err(LlmError::UnparseablePrompt(format!("sample row {i} is malformed"))),
            }
        })
        .collect()
}

fn target_index(prompt: &str) -> Result<usize, LlmError> {
    TARGET
        .captures(prompt)
        .map(|c| if &c[1] == "1" { 0 } else { 1 })
        .ok_or_else(|| LlmError::UnparseablePrompt("no `predict the output of Model N`".into()))
}

fn format_response(reasoning: &str, rows: Vec<(Value, u32)>) -> String {
    let items: Vec<Value> = rows
        .into_iter()
        .map(|(features, out)| json!({"features": features, "model_output": out}))
        .collect();
    format!(
        "{reasoning}\n\n```json\n{}\n```",
        serde_json::to_string(&items).expect("rows serialize")
    )
}

/// Applies the target model recovered from an oracle verbalization to every
/// row of the evaluation sample.
pub fn mock_rule_evaluator(verbalization: &Verbalization, eval_prompt: &str) -> Result<String, LlmError> {
    let (m1, m2) = parse_structured_diff(&verbalization.text)?;
    let target = target_index(eval_prompt)?;
    let model = if target == 0 { &m1 } else { &m2 };
    let rows = prompt_rows(eval_prompt)?
        .into_iter()
        .map(|(features, _)| {
            let x: Vec<f64> = features
                .as_array()
                .expect("checked array")
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| LlmError::UnparseablePrompt("non-numeric feature".into())))
                .collect::<Result<_, _>>()?;
            if x.len() != model.model.n_features() {
                return Err(LlmError::UnparseablePrompt(format!(
                    "row has {} features, model expects {}",
                    x.len(),
                    model.model.n_features()
                )));
            }
            let y = model.model.predict_row(&x);
            Ok((features, y))
        })
        .collect::<Result<Vec<_>, LlmError>>()?;
    Ok(format_response(
        &format!("Reasoning: applied the parameters of Model {} from the verbalization to each row.", target + 1),
        rows,
    ))
}

/// Predicts that the target model agrees with the shown outputs everywhere.
pub fn copy_evaluator(eval_prompt: &str) -> Result<String, LlmError> {
    let rows = prompt_rows(eval_prompt)?;
    Ok(format_response("Reasoning: the models are assumed to agree on every row.", rows))
}

/// Source of verbalizations.
pub enum Verbalizer {
    Live(LlmClient),
    MockOracle,
}

/// Source of evaluation responses.
pub enum Evaluator {
    Live(LlmClient),
    MockRule,
    Copy,
}

impl Verbalizer {
    pub fn id(&self) -> String {
        match self {
            Verbalizer::Live(c) => c.config.model.clone(),
            Verbalizer::MockOracle => MOCK_ORACLE_ID.into(),
        }
    }

    pub fn verbalize(&self, pair: &ModelPair, spec: &DatasetSpec, prompt: &str) -> Result<Verbalization, LlmError> {
        match self {
            Verbalizer::MockOracle => Ok(mock_oracle_verbalize(pair, spec, prompt)),
            Verbalizer::Live(client) => {
                let c = client.complete_with_meta(prompt)?;
                Ok(Verbalization {
                    text: c.text,
                    verbalizer: client.config.model.clone(),
                    prompt_digest: prompt_digest(prompt),
                    created_at: now_unix(),
                })
            }
        }
    }
}

impl Evaluator {
    pub fn id(&self) -> String {
        match self {
            Evaluator::Live(c) => c.config.model.clone(),
            Evaluator::MockRule => MOCK_RULE_ID.into(),
            Evaluator::Copy => COPY_ID.into(),
        }
    }

    pub fn respond(&self, verbalization: &Verbalization, prompt: &str) -> Result<String, LlmError> {
        match self {
            Evaluator::MockRule => mock_rule_evaluator(verbalization, prompt),
            Evaluator::Copy => copy_evaluator(prompt),
            Evaluator::Live(client) => client.complete(prompt),
        }
    }
}
