use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

use super::{ChatRequest, CompletionResult, Role};

pub const ENV_LLM_API_KEY: &str = "REPOGEN_LLM_API_KEY";
pub const ENV_LLM_BASE_URL: &str = "REPOGEN_LLM_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

static NETWORK_REQUESTS: AtomicU64 = AtomicU64::new(0);

/// HTTP requests issued by this process so far, chat and embeddings alike.
pub fn network_requests() -> u64 {
    NETWORK_REQUESTS.load(Ordering::Relaxed)
}

pub(crate) fn note_network_request() {
    NETWORK_REQUESTS.fetch_add(1, Ordering::Relaxed);
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    /// 4xx: bad key, unknown model, malformed request. Not retried.
    #[error("client error {status}: {body}")]
    Client { status: u16, body: String },
    #[error("server error {status}: {body}")]
    Server { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport: {0}")]
    Other(String),
}

pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<CompletionResult, TransportError>;
}

/// Adapter for chat-completion endpoints that speak the OpenAI wire format
/// (`POST {base}/chat/completions`).
pub struct OpenAiTransport {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl OpenAiTransport {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        OpenAiTransport { agent, base_url: base_url.into(), api_key: api_key.into() }
    }

    /// Reads the key and base URL from the environment. A missing key is
    /// reported by variable name.
    pub fn from_env(timeout: Duration) -> Result<Self, String> {
        let key =
            std::env::var(ENV_LLM_API_KEY).map_err(|_| format!("environment variable {ENV_LLM_API_KEY} is not set"))?;
        let base = std::env::var(ENV_LLM_BASE_URL).unwrap_or_else(|_| DEFAULT_BASE_URL.to_string());
        Ok(Self::new(base, key, timeout))
    }
}

pub(crate) fn classify_status(status: u16, body: String) -> TransportError {
    if (400..500).contains(&status) && status != 408 && status != 429 {
        TransportError::Client { status, body }
    } else {
        TransportError::Server { status, body }
    }
}

pub(crate) fn map_ureq(err: ureq::Error) -> TransportError {
    match err {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Other(other.to_string()),
    }
}

impl ChatTransport for OpenAiTransport {
    fn send(&self, request: &ChatRequest) -> Result<CompletionResult, TransportError> {
        let messages: Vec<_> = request
            .messages
            .iter()
            .map(|m| {
                let role = match m.role {
                    Role::System => "system",
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                json!({"role": role, "content": m.content})
            })
            .collect();
        let body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let url = format!("{}/chat/completions", self.base_url.trim_end_matches('/'));
        note_network_request();
        let mut response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(map_ureq)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(map_ureq)?;
        if status >= 400 {
            return Err(classify_status(status, text));
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| TransportError::Other(format!("malformed response: {e}")))?;
        let content = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| TransportError::Other("response has no completion text".into()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(CompletionResult {
            text: content,
            prompt_token_count: usage.prompt_tokens,
            completion_token_count: usage.completion_tokens,
            cached: false,
        })
    }
}
