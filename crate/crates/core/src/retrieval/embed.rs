use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{RetrievalError, Vector};

pub const ENV_EMBED_API_KEY: &str = "REPOGEN_EMBED_API_KEY";
pub const ENV_EMBED_BASE_URL: &str = "REPOGEN_EMBED_BASE_URL";

pub trait EmbeddingProvider: Send + Sync {
    /// Stable identity recorded in persisted indexes; an index is only
    /// valid for the provider that built it.
    fn id(&self) -> String;
    fn dim(&self) -> usize;
    fn embed_text(&self, text: &str) -> Result<Vector, RetrievalError>;
}

/// Embeds `text`, rejecting empty input and checking the returned dimension.
pub fn embed(text: &str, provider: &dyn EmbeddingProvider) -> Result<Vector, RetrievalError> {
    if text.trim().is_empty() {
        return Err(RetrievalError::EmptyText);
    }
    let v = provider.embed_text(text)?;
    if v.dim() != provider.dim() {
        return Err(RetrievalError::DimMismatch { expected: provider.dim(), found: v.dim() });
    }
    Ok(v)
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "given", "in", "into", "is", "it", "its", "of",
    "on", "or", "that", "the", "this", "to", "with",
];

/// Lowercased word tokens. Identifiers are split at underscores and
/// lower-to-upper camel-case boundaries.
pub(crate) fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(|c: char| !c.is_alphanumeric()) {
        let mut current = String::new();
        let mut prev_lower = false;
        for c in word.chars() {
            if c.is_uppercase() && prev_lower && !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            prev_lower = c.is_lowercase() || c.is_ascii_digit();
            current.extend(c.to_lowercase());
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out.retain(|t| !STOPWORDS.contains(&t.as_str()));
    out
}

/// Offline bag-of-words embedder: every token maps to a fixed pseudo-random
/// direction and a text is the sum of its tokens' directions. Texts sharing
/// vocabulary land close together, which is enough for tests and examples.
#[derive(Debug, Clone)]
pub struct HashProjection {
    dim: usize,
    seed: u64,
}

impl HashProjection {
    pub const DEFAULT_DIM: usize = 256;

    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashProjection { dim, seed }
    }

    fn direction(&self, token: &str) -> Vec<f64> {
        let digest = Sha256::digest(token.as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(bytes) ^ self.seed);
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

impl Default for HashProjection {
    fn default() -> Self {
        HashProjection::new(Self::DEFAULT_DIM, 0)
    }
}

impl EmbeddingProvider for HashProjection {
    fn id(&self) -> String {
        format!("hash-projection/{}/{}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vector, RetrievalError> {
        let toks = tokens(text);
        if toks.is_empty() {
            return Err(RetrievalError::NoTokens);
        }
        let mut acc = vec![0.0; self.dim];
        for t in &toks {
            for (a, d) in acc.iter_mut().zip(self.direction(t)) {
                *a += d;
            }
        }
        Vector::new(acc)
    }
}

/// Client for OpenAI-style `POST {base}/embeddings` endpoints.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    model: String,
    dim: usize,
    attempts: u32,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, model: impl Into<String>, dim: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpEmbedder {
            agent,
            base_url: base_url.into(),
            api_key: api_key.into(),
            model: model.into(),
            dim,
            attempts: 3,
        }
    }

    pub fn from_env(model: impl Into<String>, dim: usize) -> Result<Self, String> {
        let key = std::env::var(ENV_EMBED_API_KEY)
            .map_err(|_| format!("environment variable {ENV_EMBED_API_KEY} is not set"))?;
        let base = std::env::var(ENV_EMBED_BASE_URL).unwrap_or_else(|_| crate::gateway::DEFAULT_BASE_URL.to_string());
        Ok(Self::new(base, key, model, dim))
    }

    fn request(&self, text: &str) -> Result<Vector, (bool, String)> {
        let url = format!("{}/embeddings", self.base_url.trim_end_matches('/'));
        crate::gateway::note_network_request();
        let mut response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(json!({"model": self.model, "input": text}))
            .map_err(|e| (true, e.to_string()))?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(|e| (true, e.to_string()))?;
        if status >= 400 {
            let retryable = status >= 500 || status == 408 || status == 429;
            return Err((retryable, format!("status {status}: {body}")));
        }
        let parsed: EmbeddingResponse =
            serde_json::from_str(&body).map_err(|e| (false, format!("malformed response: {e}")))?;
        let first = parsed.data.into_iter().next().ok_or((false, "response has no embedding".to_string()))?;
        Vector::new(first.embedding).map_err(|e| (false, e.to_string()))
    }
}

impl EmbeddingProvider for HttpEmbedder {
    fn id(&self) -> String {
        format!("http/{}/{}", self.model, self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_text(&self, text: &str) -> Result<Vector, RetrievalError> {
        let mut delay = Duration::from_secs(1);
        let mut last = String::new();
        for attempt in 0..self.attempts {
            match self.request(text) {
                Ok(v) => return Ok(v),
                Err((retryable, msg)) => {
                    last = msg;
                    if !retryable {
                        break;
                    }
                    if attempt + 1 < self.attempts {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(RetrievalError::Provider(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::cosine;

    #[test]
    fn tokenizer_splits_identifiers() {
        assert_eq!(tokens("parseConfig(read_lines) of the FILE"), ["parse", "config", "read", "lines", "file"]);
        assert_eq!(tokens("HTTPServer v2"), ["httpserver", "v2"]);
    }

    #[test]
    fn deterministic_and_input_sensitive() {
        let p = HashProjection::default();
        let a = embed("read lines from a file", &p).unwrap();
        assert_eq!(a, embed("read lines from a file", &p).unwrap());
        let b = embed("insert a row into the table", &p).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.dim(), HashProjection::DEFAULT_DIM);
    }

    #[test]
    fn shared_vocabulary_scores_higher() {
        let p = HashProjection::default();
        let q = embed("read the lines of a text file", &p).unwrap();
        let near = embed("Read all lines from a file", &p).unwrap();
        let far = embed("Insert many rows into the database", &p).unwrap();
        assert!(cosine(&q, &near).unwrap() > cosine(&q, &far).unwrap());
    }

    #[test]
    fn empty_and_symbol_only_text_rejected() {
        let p = HashProjection::default();
        assert!(matches!(embed("   ", &p), Err(RetrievalError::EmptyText)));
        assert!(matches!(embed("(); ->", &p), Err(RetrievalError::NoTokens)));
    }
}
