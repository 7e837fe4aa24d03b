//! Chat-completion providers: request/response types, an HTTP client for
//! OpenAI-compatible endpoints, a deterministic rule-based mock, an
//! append-only response cache, and refusal detection.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

mod cache;
mod http;
mod mock;

pub use cache::{CachedBackend, ResponseCache};
pub use http::{HttpBackend, HttpBackendConfig};
pub use mock::{CueRule, MockBackend, MockBackendConfig};

/// Chat message role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    Greedy,
    Nucleus,
}

/// Decoding configuration sent with every request. Greedy is expressed to
/// chat APIs as temperature 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub strategy: SamplingStrategy,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl SamplingParams {
    pub fn greedy() -> Self {
        SamplingParams {
            strategy: SamplingStrategy::Greedy,
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
        }
    }

    pub fn nucleus() -> Self {
        SamplingParams {
            strategy: SamplingStrategy::Nucleus,
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 1024,
        }
    }

    /// Temperature as sent on the wire: greedy always 0.
    pub fn effective_temperature(&self) -> f64 {
        match self.strategy {
            SamplingStrategy::Greedy => 0.0,
            SamplingStrategy::Nucleus => self.temperature,
        }
    }
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams::greedy()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub sampling: SamplingParams,
}

impl CompletionRequest {
    pub fn cache_key(&self) -> CacheKey {
        CacheKey::of(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub refusal: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    pub cache_hit: bool,
}

/// Content digest of a request: sha-256 over the canonical serialization
/// of (model_id, messages, sampling). Equal requests get equal keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey(pub [u8; 32]);

impl CacheKey {
    pub fn of(req: &CompletionRequest) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(req.model_id.as_bytes());
        hasher.update([0u8]);
        for msg in &req.messages {
            hasher.update(msg.role.as_str().as_bytes());
            hasher.update([0u8]);
            hasher.update(msg.content.as_bytes());
            hasher.update([0u8]);
        }
        hasher.update(match req.sampling.strategy {
            SamplingStrategy::Greedy => b"greedy".as_slice(),
            SamplingStrategy::Nucleus => b"nucleus".as_slice(),
        });
        hasher.update(req.sampling.temperature.to_le_bytes());
        hasher.update(req.sampling.top_p.to_le_bytes());
        hasher.update(req.sampling.max_tokens.to_le_bytes());
        CacheKey(hasher.finalize().into())
    }

    pub fn hex(&self) -> String {
        let mut out = String::with_capacity(64);
        for b in self.0 {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimitedExhausted { attempts: u32 },
    #[error("provider error (status {status}): {excerpt}")]
    Provider { status: u16, excerpt: String },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("cache io error: {0}")]
    CacheIo(String),
}

/// A chat-completion provider. Handles are shared across concurrently
/// running chains, so implementations must be internally synchronized.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(req)
    }
}

pub const DEFAULT_REFUSAL_PHRASES: &[&str] =
    &["i cannot assist", "i can't help with", "content policy"];

/// Case-insensitive phrase-list matcher for provider safety refusals.
#[derive(Debug, Clone)]
pub struct RefusalDetector {
    phrases: Vec<String>,
}

impl RefusalDetector {
    pub fn new(phrases: &[String]) -> Self {
        RefusalDetector {
            phrases: phrases.iter().map(|p| p.to_lowercase()).collect(),
        }
    }

    pub fn is_refusal(&self, text: &str) -> bool {
        let lowered = text.to_lowercase();
        self.phrases.iter().any(|p| !p.is_empty() && lowered.contains(p))
    }
}

impl Default for RefusalDetector {
    fn default() -> Self {
        RefusalDetector {
            phrases: DEFAULT_REFUSAL_PHRASES
                .iter()
                .map(|p| p.to_string())
                .collect(),
        }
    }
}

/// True iff `text` contains any default refusal phrase, case-insensitive.
pub fn detect_refusal(text: &str) -> bool {
    RefusalDetector::default().is_refusal(text)
}
