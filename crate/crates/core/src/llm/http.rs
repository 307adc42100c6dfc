//! Blocking client for OpenAI-compatible `/chat/completions` endpoints.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use super::{Completion, GenerationRequest, LlmBackend, LlmError, Stage, TokenUsage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    pub model: String,
    /// Passed through verbatim as `reasoning_effort`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<String>,
    #[serde(default = "default_retries")]
    pub transport_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_retries() -> u32 {
    2
}

fn default_timeout() -> u64 {
    300
}

impl HttpBackendConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        HttpBackendConfig {
            endpoint: endpoint.to_owned(),
            api_key: None,
            model: model.to_owned(),
            reasoning_effort: None,
            transport_retries: default_retries(),
            timeout_secs: default_timeout(),
        }
    }

    /// Reads `QBAF_LLM_ENDPOINT`, `QBAF_LLM_MODEL`, `QBAF_LLM_API_KEY` and
    /// `QBAF_LLM_REASONING_EFFORT`.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var("QBAF_LLM_ENDPOINT").ok()?;
        let model = std::env::var("QBAF_LLM_MODEL").ok()?;
        let mut config = HttpBackendConfig::new(&endpoint, &model);
        config.api_key = std::env::var("QBAF_LLM_API_KEY").ok();
        config.reasoning_effort = std::env::var("QBAF_LLM_REASONING_EFFORT").ok();
        Some(config)
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

pub struct OpenAiCompatibleBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
}

impl OpenAiCompatibleBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(OpenAiCompatibleBackend { config, client })
    }

    pub fn request_body(&self, request: &GenerationRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
        });
        if let Some(max) = request.max_tokens {
            body["max_tokens"] = json!(max);
        }
        if let Some(effort) = &self.config.reasoning_effort {
            body["reasoning_effort"] = json!(effort);
        }
        if let Some(schema) = &request.response_schema {
            body["response_format"] = json!({
                "type": "json_schema",
                "json_schema": {"name": "response", "schema": schema},
            });
        }
        body
    }

    fn send_once(&self, body: &Value) -> Result<Completion, LlmError> {
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let response = req.send().map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response.text().map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Transport(format!("HTTP {status}: {text}")));
        }
        parse_chat_response(&text)
    }
}

/// Pull the first choice's content and the usage block out of a chat reply.
pub fn parse_chat_response(text: &str) -> Result<Completion, LlmError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| LlmError::Transport(format!("malformed response body: {e}")))?;
    let content = value["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| LlmError::Transport("response has no message content".into()))?;
    let usage = TokenUsage::new(
        value["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        value["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    );
    Ok(Completion { text: content.to_owned(), usage })
}

impl LlmBackend for OpenAiCompatibleBackend {
    fn complete(&self, stage: Stage, request: &GenerationRequest) -> Result<Completion, LlmError> {
        let body = self.request_body(request);
        let mut last = LlmError::Transport("no attempt made".into());
        for attempt in 0..=self.config.transport_retries {
            match self.send_once(&body) {
                Ok(c) => return Ok(c),
                Err(e) => {
                    warn!(%stage, attempt, "transport failure: {e}");
                    last = e;
                    if attempt < self.config.transport_retries {
                        std::thread::sleep(Duration::from_millis(200 * 2u64.pow(attempt)));
                    }
                }
            }
        }
        Err(last)
    }
}
