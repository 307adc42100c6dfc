//! Text-generation contract shared by every stage of the pipeline.
//!
//! Backends implement [`LlmBackend`]; [`Generator`] layers structured-output
//! enforcement, error-feedback retries and per-stage token accounting on top.

mod http;
mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::{debug, warn};

pub use http::{HttpBackendConfig, OpenAiCompatibleBackend};
pub use mock::{MockResponse, MockRule, MockScript, ScriptedBackend};

pub const DEFAULT_MAX_ATTEMPTS: usize = 3;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ontology,
    QbafConstruction,
    Inference,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Ontology, Stage::QbafConstruction, Stage::Inference];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ontology => "ontology",
            Stage::QbafConstruction => "qbaf-construction",
            Stage::Inference => "inference",
        }
    }

    fn index(self) -> usize {
        match self {
            Stage::Ontology => 0,
            Stage::QbafConstruction => 1,
            Stage::Inference => 2,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GenerationRequest {
    pub system: String,
    pub user: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub response_schema: Option<Value>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
}

impl GenerationRequest {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        GenerationRequest {
            system: system.into(),
            user: user.into(),
            response_schema: None,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: None,
        }
    }

    pub fn with_schema(mut self, schema: Value) -> Self {
        self.response_schema = Some(schema);
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = Some(max_tokens);
        self
    }

    fn check(&self) -> Result<(), LlmError> {
        if self.system.trim().is_empty() || self.user.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompts must be non-empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest(format!("temperature {} is negative", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn new(prompt_tokens: u64, completion_tokens: u64) -> Self {
        TokenUsage { prompt_tokens, completion_tokens }
    }

    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("mock script has no response for {stage} request")]
    ScriptExhausted { stage: Stage },
    #[error("no acceptable reply after {attempts} attempts: {reason}")]
    Exhausted { attempts: usize, reason: String, last_output: String },
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_))
    }

    pub fn last_output(&self) -> Option<&str> {
        match self {
            LlmError::Exhausted { last_output, .. } => Some(last_output),
            _ => None,
        }
    }
}

/// A text-generation service.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, stage: Stage, request: &GenerationRequest) -> Result<Completion, LlmError>;
}

/// Lock-free per-stage token counters.
#[derive(Debug, Default)]
pub struct UsageAccumulator {
    prompt: [AtomicU64; 3],
    completion: [AtomicU64; 3],
    calls: [AtomicU64; 3],
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageReport {
    pub stages: BTreeMap<Stage, TokenUsage>,
    pub calls: BTreeMap<Stage, u64>,
    pub total: TokenUsage,
    pub excludes_ontology: bool,
}

impl UsageAccumulator {
    pub fn record(&self, stage: Stage, usage: TokenUsage) {
        let i = stage.index();
        self.prompt[i].fetch_add(usage.prompt_tokens, Ordering::Relaxed);
        self.completion[i].fetch_add(usage.completion_tokens, Ordering::Relaxed);
        self.calls[i].fetch_add(1, Ordering::Relaxed);
    }

    pub fn stage(&self, stage: Stage) -> TokenUsage {
        let i = stage.index();
        TokenUsage::new(self.prompt[i].load(Ordering::Relaxed), self.completion[i].load(Ordering::Relaxed))
    }

    /// Per-stage and total usage. With `exclude_ontology` the ontology stage is
    /// left out of both, matching reports that treat ontology mining as a
    /// shared one-off cost.
    pub fn report(&self, exclude_ontology: bool) -> UsageReport {
        let mut report = UsageReport { excludes_ontology: exclude_ontology, ..Default::default() };
        for stage in Stage::ALL {
            if exclude_ontology && stage == Stage::Ontology {
                continue;
            }
            let usage = self.stage(stage);
            report.stages.insert(stage, usage);
            report.calls.insert(stage, self.calls[stage.index()].load(Ordering::Relaxed));
            report.total = report.total + usage;
        }
        report
    }
}

pub fn usage_report(accumulator: &UsageAccumulator, exclude_ontology: bool) -> UsageReport {
    accumulator.report(exclude_ontology)
}

/// Output of a successful [`Generator::generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub text: String,
    pub json: Option<Value>,
}

/// Extract the JSON payload of a reply, tolerating a surrounding code fence.
pub fn parse_json_reply(text: &str) -> Option<Value> {
    let trimmed = text.trim();
    if let Ok(v) = serde_json::from_str(trimmed) {
        return Some(v);
    }
    let inner = trimmed.strip_prefix("```json").or_else(|| trimmed.strip_prefix("```"))?;
    let inner = inner.strip_suffix("```")?;
    serde_json::from_str(inner.trim()).ok()
}

fn schema_errors(schema: &Value, instance: &Value) -> Result<(), String> {
    let validator = jsonschema::validator_for(schema).map_err(|e| format!("invalid response schema: {e}"))?;
    let errors: Vec<String> =
        validator.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors.join("; "))
    }
}

/// Backend plus retry policy plus usage accounting. Cheap to clone; clones
/// share the backend and the usage counters.
#[derive(Clone)]
pub struct Generator {
    backend: Arc<dyn LlmBackend>,
    usage: Arc<UsageAccumulator>,
    max_attempts: usize,
}

impl fmt::Debug for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator").field("max_attempts", &self.max_attempts).finish_non_exhaustive()
    }
}

impl Generator {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Generator { backend, usage: Arc::new(UsageAccumulator::default()), max_attempts: DEFAULT_MAX_ATTEMPTS }
    }

    pub fn with_max_attempts(&self, max_attempts: usize) -> Self {
        Generator { max_attempts: max_attempts.max(1), ..self.clone() }
    }

    pub fn max_attempts(&self) -> usize {
        self.max_attempts
    }

    pub fn usage(&self) -> &UsageAccumulator {
        &self.usage
    }

    pub fn usage_report(&self, exclude_ontology: bool) -> UsageReport {
        self.usage.report(exclude_ontology)
    }

    /// Generate, enforcing the response schema when one is set.
    pub fn generate(&self, stage: Stage, request: &GenerationRequest) -> Result<Generated, LlmError> {
        let (text, json) = self.generate_with(stage, request, |text, json| Ok((text.to_owned(), json.cloned())))?;
        Ok(Generated { text, json })
    }

    /// Generate and post-process with `accept`. A reply that fails the schema
    /// gate or is rejected by `accept` is retried with the rejection reason
    /// appended to the prompt, up to the attempt budget.
    pub fn generate_with<T>(
        &self,
        stage: Stage,
        request: &GenerationRequest,
        mut accept: impl FnMut(&str, Option<&Value>) -> Result<T, String>,
    ) -> Result<T, LlmError> {
        request.check()?;
        let mut current = request.clone();
        let mut last_output = String::new();
        let mut reason = String::new();
        for attempt in 1..=self.max_attempts {
            let completion = self.backend.complete(stage, &current)?;
            self.usage.record(stage, completion.usage);
            let json = parse_json_reply(&completion.text);
            let verdict = match (&request.response_schema, &json) {
                (Some(_), None) => Err("reply is not valid JSON".to_owned()),
                (Some(schema), Some(value)) => schema_errors(schema, value),
                (None, _) => Ok(()),
            }
            .and_then(|()| accept(&completion.text, json.as_ref()));
            match verdict {
                Ok(value) => {
                    if attempt > 1 {
                        debug!(%stage, attempt, "reply accepted after retry");
                    }
                    return Ok(value);
                }
                Err(why) => {
                    warn!(%stage, attempt, "rejected reply: {why}");
                    last_output = completion.text;
                    reason = why;
                    current = request.clone();
                    current.user = format!(
                        "{}\n\nYour previous reply was rejected: {reason}\nPrevious reply:\n{last_output}\n\
                         Reply again, following the instructions exactly.",
                        request.user
                    );
                }
            }
        }
        Err(LlmError::Exhausted { attempts: self.max_attempts, reason, last_output })
    }
}
