//! Chat-completion gateway: one entry point for every LLM-facing stage, with
//! deterministic record/replay caching.
//!
//! In [`Mode::Replay`] the gateway never touches its transport; every request
//! must already be in the cache, keyed by a hash of the model, messages,
//! temperature, stage tag, template version and sample index.

mod cache;
mod extract;
mod templates;
mod transport;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheRecord, ReplayCache};
pub use extract::{extract_code, CandidateUnparsable, CodeCandidate, ExtractionMethod};
pub use templates::{default_examples, render_template, template_version, Bindings, PromptExample, TemplateError};
pub(crate) use transport::note_network_request;
pub use transport::{
    network_requests, ChatTransport, OpenAiTransport, TransportError, DEFAULT_BASE_URL, ENV_LLM_API_KEY,
    ENV_LLM_BASE_URL,
};

pub const DEFAULT_TEMPERATURE: f64 = 0.7;
pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    ApiDescribe,
    Steps,
    ApiDescs,
    Extend,
    Generate,
}

impl StageTag {
    pub const ALL: [StageTag; 5] =
        [StageTag::ApiDescribe, StageTag::Steps, StageTag::ApiDescs, StageTag::Extend, StageTag::Generate];

    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::ApiDescribe => "api_describe",
            StageTag::Steps => "steps",
            StageTag::ApiDescs => "api_descs",
            StageTag::Extend => "extend",
            StageTag::Generate => "generate",
        }
    }
}

impl fmt::Display for StageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stage_tag: StageTag,
    pub template_version: String,
    /// Distinguishes the k independent samples of one prompt.
    #[serde(default)]
    pub sample: u32,
}

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: String,
    stage_tag: StageTag,
    template_version: &'a str,
    sample: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, stage_tag: StageTag, messages: Vec<Message>) -> Self {
        ChatRequest {
            model: model.into(),
            messages,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            stage_tag,
            template_version: template_version(stage_tag).to_string(),
            sample: 0,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_sample(mut self, sample: u32) -> Self {
        self.sample = sample;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let first = self.messages.first().ok_or_else(|| GatewayError::InvalidRequest("messages are empty".into()))?;
        if first.role == Role::Assistant {
            return Err(GatewayError::InvalidRequest("first message must be system or user".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        Ok(())
    }

    /// Hex SHA-256 over the request fields that determine the completion.
    pub fn cache_key(&self) -> String {
        let material = KeyMaterial {
            model: &self.model,
            messages: &self.messages,
            temperature: format!("{:.4}", self.temperature),
            stage_tag: self.stage_tag,
            template_version: &self.template_version,
            sample: self.sample,
        };
        let json = serde_json::to_vec(&material).expect("key material serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_token_count: u64,
    pub completion_token_count: u64,
    pub cached: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Live,
    Record,
    Replay,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode `{other}` (expected live, record or replay)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay cache has no entry for key {key} (stage {stage})")]
    ReplayMiss { key: String, stage: StageTag },
    #[error("provider rejected the request ({status}): {body}")]
    Config { status: u16, body: String },
    #[error("provider failed after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: TransportError },
    #[error("mode {0:?} requires a transport")]
    NoTransport(Mode),
    #[error("mode {0:?} requires a replay cache")]
    NoCache(Mode),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("cache i/o: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { attempts: 3, initial_backoff: Duration::from_secs(1) }
    }
}

/// Counting semaphore bounding in-flight provider calls.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn new(n: usize) -> Self {
        Limiter { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayCounters {
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub recorded: u64,
}

/// Shareable completion client.
pub struct Gateway {
    mode: Mode,
    transport: Option<Arc<dyn ChatTransport>>,
    cache: Option<Arc<ReplayCache>>,
    retry: RetryPolicy,
    limiter: Limiter,
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
    recorded: AtomicU64,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("mode", &self.mode).field("counters", &self.counters()).finish()
    }
}

impl Gateway {
    pub fn new(mode: Mode, transport: Option<Arc<dyn ChatTransport>>, cache: Option<Arc<ReplayCache>>) -> Self {
        Gateway {
            mode,
            transport,
            cache,
            retry: RetryPolicy::default(),
            limiter: Limiter::new(4),
            provider_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            recorded: AtomicU64::new(0),
        }
    }

    pub fn replay(cache: Arc<ReplayCache>) -> Self {
        Self::new(Mode::Replay, None, Some(cache))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_concurrency(mut self, in_flight: usize) -> Self {
        self.limiter = Limiter::new(in_flight);
        self
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn cache(&self) -> Option<&Arc<ReplayCache>> {
        self.cache.as_ref()
    }

    pub fn counters(&self) -> GatewayCounters {
        GatewayCounters {
            provider_calls: self.provider_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            recorded: self.recorded.load(Ordering::Relaxed),
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;
        match self.mode {
            Mode::Replay => {
                let cache = self.cache.as_ref().ok_or(GatewayError::NoCache(Mode::Replay))?;
                let key = request.cache_key();
                let record = cache.get(&key).ok_or(GatewayError::ReplayMiss { key, stage: request.stage_tag })?;
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                Ok(record.into_result())
            }
            Mode::Live => self.call_provider(request),
            Mode::Record => {
                let cache = self.cache.as_ref().ok_or(GatewayError::NoCache(Mode::Record))?;
                let key = request.cache_key();
                if let Some(record) = cache.get(&key) {
                    self.cache_hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(record.into_result());
                }
                let result = self.call_provider(request)?;
                cache.insert(CacheRecord::new(key, request.stage_tag, &result))?;
                self.recorded.fetch_add(1, Ordering::Relaxed);
                Ok(result)
            }
        }
    }

    fn call_provider(&self, request: &ChatRequest) -> Result<CompletionResult, GatewayError> {
        let transport = self.transport.as_ref().ok_or(GatewayError::NoTransport(self.mode))?;
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.limiter.acquire();
                self.provider_calls.fetch_add(1, Ordering::Relaxed);
                transport.send(request)
            };
            match outcome {
                Ok(mut result) => {
                    result.cached = false;
                    return Ok(result);
                }
                Err(TransportError::Client { status, body }) => return Err(GatewayError::Config { status, body }),
                Err(err) if attempt >= attempts => return Err(GatewayError::Exhausted { attempts, last: err }),
                Err(err) => {
                    tracing::warn!(stage = %request.stage_tag, attempt, "provider error, retrying: {err}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use std::sync::atomic::Ordering;

    use super::testing::*;
    use super::*;

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new("m", StageTag::Generate, vec![Message::user(text)])
    }

    fn no_backoff() -> RetryPolicy {
        RetryPolicy { attempts: 3, initial_backoff: Duration::ZERO }
    }

    #[test]
    fn cache_key_survives_serialization() {
        let req = request("hello").with_sample(3);
        let back: ChatRequest = serde_json::from_str(&serde_json::to_string(&req).unwrap()).unwrap();
        assert_eq!(req.cache_key(), back.cache_key());
        assert_ne!(req.cache_key(), request("hello").with_sample(4).cache_key());
        let mut other_version = req.clone();
        other_version.template_version = "generate@999".into();
        assert_ne!(req.cache_key(), other_version.cache_key());
    }

    #[test]
    fn request_validation() {
        let mut req = request("x");
        req.messages.clear();
        assert!(req.validate().is_err());
        assert!(request("x").with_temperature(2.5).validate().is_err());
        let mut assistant_first = request("x");
        assistant_first.messages[0].role = Role::Assistant;
        assert!(assistant_first.validate().is_err());
        assert_eq!(request("x").temperature, 0.7);
    }

    #[test]
    fn record_then_replay_is_deterministic_and_offline() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let transport = Arc::new(FnTransport::new(|r: &ChatRequest| Ok(format!("echo {}", r.messages[0].content))));
        let cache = Arc::new(ReplayCache::open(&path).unwrap());
        let recorder = Gateway::new(Mode::Record, Some(transport.clone()), Some(cache));
        let first = recorder.complete(&request("a")).unwrap();
        assert_eq!(first.text, "echo a");
        assert_eq!(transport.calls.load(Ordering::SeqCst), 1);

        let counting = Arc::new(FnTransport::new(|_: &ChatRequest| Ok("network!".to_string())));
        let replay =
            Gateway::new(Mode::Replay, Some(counting.clone()), Some(Arc::new(ReplayCache::open(&path).unwrap())));
        let a = replay.complete(&request("a")).unwrap();
        let b = replay.complete(&request("a")).unwrap();
        assert_eq!(a.text, "echo a");
        assert_eq!(a, b);
        assert!(a.cached);
        assert_eq!(counting.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn replay_miss_names_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::replay(Arc::new(ReplayCache::open(&dir.path().join("c.jsonl")).unwrap()));
        let req = request("absent");
        let err = gw.complete(&req).unwrap_err();
        assert!(err.to_string().contains(&req.cache_key()), "{err}");
    }

    #[test]
    fn server_errors_are_retried() {
        let flaky = Arc::new(Flaky { failures: Mutex::new(2) });
        let gw = Gateway::new(Mode::Live, Some(flaky), None).with_retry(no_backoff());
        assert_eq!(gw.complete(&request("x")).unwrap().text, "ok");
        assert_eq!(gw.counters().provider_calls, 3);

        let hopeless = Arc::new(Flaky { failures: Mutex::new(10) });
        let gw = Gateway::new(Mode::Live, Some(hopeless), None).with_retry(no_backoff());
        assert!(matches!(gw.complete(&request("x")), Err(GatewayError::Exhausted { attempts: 3, .. })));
    }

    #[test]
    fn client_errors_are_fatal_without_retry() {
        let transport = Arc::new(FnTransport::new(|_: &ChatRequest| {
            Err(TransportError::Client { status: 401, body: "bad key".into() })
        }));
        let gw = Gateway::new(Mode::Live, Some(transport.clone()), None).with_retry(no_backoff());
        assert!(matches!(gw.complete(&request("x")), Err(GatewayError::Config { status: 401, .. })));
        assert_eq!(transport.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn concurrency_bound_is_respected() {
        use std::sync::atomic::AtomicUsize;
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (c, p) = (current.clone(), peak.clone());
        let transport = Arc::new(FnTransport::new(move |_: &ChatRequest| {
            let now = c.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            c.fetch_sub(1, Ordering::SeqCst);
            Ok("x".to_string())
        }));
        let gw = Gateway::new(Mode::Live, Some(transport), None).with_concurrency(2);
        std::thread::scope(|s| {
            for i in 0..8 {
                let gw = &gw;
                s.spawn(move || gw.complete(&request(&i.to_string())).unwrap());
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
