//! Deterministic scripted backend for tests and offline runs.
//!
//! Lookup order for each request: a response keyed by the request's content
//! hash, then the first matching substring rule, then the next unused entry of
//! the stage's ordered sequence.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Completion, GenerationRequest, LlmBackend, LlmError, Stage, TokenUsage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    /// Convenience form: serialised to compact JSON text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

impl MockResponse {
    pub fn text(text: &str) -> Self {
        MockResponse { text: Some(text.to_owned()), json: None, prompt_tokens: None, completion_tokens: None }
    }

    pub fn json(value: Value) -> Self {
        MockResponse { text: None, json: Some(value), prompt_tokens: None, completion_tokens: None }
    }

    pub fn with_usage(mut self, prompt_tokens: u64, completion_tokens: u64) -> Self {
        self.prompt_tokens = Some(prompt_tokens);
        self.completion_tokens = Some(completion_tokens);
        self
    }

    fn render(&self) -> String {
        match (&self.text, &self.json) {
            (Some(t), _) => t.clone(),
            (None, Some(v)) => v.to_string(),
            (None, None) => String::new(),
        }
    }
}

/// Reply with `response` whenever the system+user prompt contains every
/// string in `contains` (and the stage matches, when given). Rules are not
/// consumed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub contains: Vec<String>,
    #[serde(default)]
    pub excludes: Vec<String>,
    pub response: MockResponse,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub sequences: BTreeMap<Stage, Vec<MockResponse>>,
    #[serde(default)]
    pub by_hash: BTreeMap<String, MockResponse>,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_usage: TokenUsage,
}

impl MockScript {
    pub fn from_file(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn push(&mut self, stage: Stage, response: MockResponse) -> &mut Self {
        self.sequences.entry(stage).or_default().push(response);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapturedRequest {
    pub stage: Stage,
    pub system: String,
    pub user: String,
    pub hash: String,
}

struct State {
    sequences: BTreeMap<Stage, VecDeque<MockResponse>>,
    captured: Vec<CapturedRequest>,
}

pub struct ScriptedBackend {
    by_hash: BTreeMap<String, MockResponse>,
    rules: Vec<MockRule>,
    default_usage: TokenUsage,
    state: Mutex<State>,
}

impl ScriptedBackend {
    pub fn new(script: MockScript) -> Self {
        ScriptedBackend {
            by_hash: script.by_hash,
            rules: script.rules,
            default_usage: script.default_usage,
            state: Mutex::new(State {
                sequences: script.sequences.into_iter().map(|(k, v)| (k, v.into())).collect(),
                captured: Vec::new(),
            }),
        }
    }

    /// Content hash used by `by_hash` keys: SHA-256 over stage, system and user
    /// prompts separated by NUL bytes, hex encoded.
    pub fn request_hash(stage: Stage, request: &GenerationRequest) -> String {
        let mut hasher = Sha256::new();
        hasher.update(stage.as_str().as_bytes());
        hasher.update([0u8]);
        hasher.update(request.system.as_bytes());
        hasher.update([0u8]);
        hasher.update(request.user.as_bytes());
        hex::encode(hasher.finalize())
    }

    pub fn captured(&self) -> Vec<CapturedRequest> {
        self.state.lock().expect("mock state").captured.clone()
    }

    pub fn calls(&self, stage: Stage) -> usize {
        self.state.lock().expect("mock state").captured.iter().filter(|c| c.stage == stage).count()
    }

    pub fn remaining(&self, stage: Stage) -> usize {
        self.state.lock().expect("mock state").sequences.get(&stage).map_or(0, VecDeque::len)
    }

    fn usage_of(&self, response: &MockResponse) -> TokenUsage {
        TokenUsage::new(
            response.prompt_tokens.unwrap_or(self.default_usage.prompt_tokens),
            response.completion_tokens.unwrap_or(self.default_usage.completion_tokens),
        )
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, stage: Stage, request: &GenerationRequest) -> Result<Completion, LlmError> {
        let hash = Self::request_hash(stage, request);
        let mut state = self.state.lock().expect("mock state");
        state.captured.push(CapturedRequest {
            stage,
            system: request.system.clone(),
            user: request.user.clone(),
            hash: hash.clone(),
        });
        let prompt = format!("{}\n{}", request.system, request.user);
        let response = self
            .by_hash
            .get(&hash)
            .cloned()
            .or_else(|| {
                self.rules
                    .iter()
                    .find(|r| {
                        r.stage.is_none_or(|s| s == stage)
                            && r.contains.iter().all(|needle| prompt.contains(needle.as_str()))
                            && !r.excludes.iter().any(|needle| prompt.contains(needle.as_str()))
                    })
                    .map(|r| r.response.clone())
            })
            .or_else(|| state.sequences.get_mut(&stage).and_then(VecDeque::pop_front))
            .ok_or(LlmError::ScriptExhausted { stage })?;
        Ok(Completion { text: response.render(), usage: self.usage_of(&response) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn identical_request_sequences_are_deterministic() {
        let script: MockScript = serde_json::from_value(json!({
            "sequences": {"inference": [{"text": "a", "prompt_tokens": 3}, {"json": {"k": 1}}]},
            "default_usage": {"prompt_tokens": 1, "completion_tokens": 2}
        }))
        .unwrap();
        let run = || {
            let backend = ScriptedBackend::new(script.clone());
            let req = GenerationRequest::new("s", "u");
            let a = backend.complete(Stage::Inference, &req).unwrap();
            let b = backend.complete(Stage::Inference, &req).unwrap();
            let c = backend.complete(Stage::Inference, &req);
            (a, b, c)
        };
        let (a, b, c) = run();
        assert_eq!(a.text, "a");
        assert_eq!(a.usage, TokenUsage::new(3, 2));
        assert_eq!(b.text, r#"{"k":1}"#);
        assert_eq!(c, Err(LlmError::ScriptExhausted { stage: Stage::Inference }));
        assert_eq!(run(), (a, b, c));
    }

    #[test]
    fn hash_and_rule_modes() {
        let req = GenerationRequest::new("sys", "case: thalamus tumour");
        let mut script = MockScript::default();
        script.by_hash.insert(ScriptedBackend::request_hash(Stage::Inference, &req), MockResponse::text("hashed"));
        script.rules.push(MockRule {
            stage: Some(Stage::Inference),
            contains: vec!["thalamus".into()],
            excludes: vec!["brainstem".into()],
            response: MockResponse::text("rule"),
        });
        let backend = ScriptedBackend::new(script);
        assert_eq!(backend.complete(Stage::Inference, &req).unwrap().text, "hashed");
        let other = GenerationRequest::new("sys", "another thalamus case");
        assert_eq!(backend.complete(Stage::Inference, &other).unwrap().text, "rule");
        assert_eq!(backend.complete(Stage::Inference, &other).unwrap().text, "rule");
        let excluded = GenerationRequest::new("sys", "thalamus and brainstem");
        assert!(backend.complete(Stage::Inference, &excluded).is_err());
        assert!(backend.complete(Stage::Ontology, &other).is_err());
        assert_eq!(backend.calls(Stage::Inference), 4);
    }
}
