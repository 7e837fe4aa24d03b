//! Blocking HTTP client for OpenAI-compatible chat-completion endpoints,
//! with exponential-backoff retries, a sliding-window requests-per-minute
//! limiter, and refusal detection on returned text.

use super::{
    BackendError, ChatBackend, CompletionRequest, CompletionResponse, RefusalDetector,
};
use serde::Deserialize;
use serde_json::json;
use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Base URL up to but not including `/chat/completions`.
    pub base_url: String,
    /// Name of the environment variable holding the API key. No variable
    /// or an empty value means requests are sent unauthenticated.
    pub api_key_env: String,
    pub timeout: Duration,
    /// Retries after the first attempt, for 429/5xx/timeouts.
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub requests_per_minute: Option<u32>,
    pub refusal_phrases: Vec<String>,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        HttpBackendConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
            requests_per_minute: None,
            refusal_phrases: super::DEFAULT_REFUSAL_PHRASES
                .iter()
                .map(|p| p.to_string())
                .collect(),
        }
    }
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    config: HttpBackendConfig,
    api_key: Option<String>,
    detector: RefusalDetector,
    recent: Mutex<VecDeque<Instant>>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: Option<u64>,
    #[serde(default)]
    completion_tokens: Option<u64>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let detector = RefusalDetector::new(&config.refusal_phrases);
        Ok(HttpBackend {
            client,
            config,
            api_key,
            detector,
            recent: Mutex::new(VecDeque::new()),
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    /// Block until a request slot is free under the per-minute budget.
    fn acquire_slot(&self) {
        let Some(rpm) = self.config.requests_per_minute else {
            return;
        };
        let rpm = rpm.max(1) as usize;
        loop {
            let wait = {
                let mut recent = self.recent.lock().unwrap();
                let now = Instant::now();
                while let Some(front) = recent.front() {
                    if now.duration_since(*front) >= Duration::from_secs(60) {
                        recent.pop_front();
                    } else {
                        break;
                    }
                }
                if recent.len() < rpm {
                    recent.push_back(now);
                    None
                } else {
                    let oldest = *recent.front().unwrap();
                    Some(Duration::from_secs(60).saturating_sub(now.duration_since(oldest)))
                }
            };
            match wait {
                None => return,
                Some(d) => std::thread::sleep(d.min(Duration::from_millis(250))),
            }
        }
    }

    fn body_for(&self, req: &CompletionRequest) -> serde_json::Value {
        json!({
            "model": req.model_id,
            "messages": req
                .messages
                .iter()
                .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
                .collect::<Vec<_>>(),
            "temperature": req.sampling.effective_temperature(),
            "top_p": req.sampling.top_p,
            "max_tokens": req.sampling.max_tokens,
        })
    }

    fn parse_success(&self, body: &str, latency: Duration) -> Result<CompletionResponse, BackendError> {
        let wire: WireResponse = serde_json::from_str(body)
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let choice = wire
            .choices
            .first()
            .ok_or_else(|| BackendError::MalformedResponse("no choices in response".into()))?;
        let text = choice
            .message
            .content
            .clone()
            .ok_or_else(|| BackendError::MalformedResponse("choice has no content".into()))?;
        Ok(CompletionResponse {
            refusal: self.detector.is_refusal(&text),
            text,
            latency_ms: Some(latency.as_millis() as u64),
            prompt_tokens: wire.usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: wire.usage.as_ref().and_then(|u| u.completion_tokens),
            cache_hit: false,
        })
    }
}

fn excerpt(body: &str) -> String {
    let trimmed = body.trim();
    let mut end = trimmed.len().min(200);
    while !trimmed.is_char_boundary(end) {
        end -= 1;
    }
    trimmed[..end].to_string()
}

/// Parse a Retry-After header value given in whole seconds.
fn retry_after_seconds(resp: &reqwest::blocking::Response) -> Option<Duration> {
    resp.headers()
        .get("retry-after")?
        .to_str()
        .ok()?
        .trim()
        .parse::<u64>()
        .ok()
        .map(Duration::from_secs)
}

impl ChatBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let body = self.body_for(req);
        let mut attempts = 0u32;
        loop {
            self.acquire_slot();
            attempts += 1;
            let started = Instant::now();
            let mut request = self
                .client
                .post(self.endpoint())
                .header("content-type", "application/json")
                .json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            let backoff = self
                .config
                .initial_backoff
                .checked_mul(1u32 << (attempts - 1).min(16))
                .unwrap_or(Duration::from_secs(60));
            let retries_left = attempts <= self.config.max_retries;
            match request.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let text = resp
                            .text()
                            .map_err(|e| BackendError::Transport(e.to_string()))?;
                        return self.parse_success(&text, started.elapsed());
                    }
                    let status_code = status.as_u16();
                    if status_code == 401 || status_code == 403 {
                        let text = resp.text().unwrap_or_default();
                        return Err(BackendError::Auth(excerpt(&text)));
                    }
                    if status_code == 429 {
                        if !retries_left {
                            return Err(BackendError::RateLimitedExhausted { attempts });
                        }
                        let delay = retry_after_seconds(&resp).unwrap_or(backoff);
                        std::thread::sleep(delay);
                        continue;
                    }
                    if status.is_server_error() && retries_left {
                        std::thread::sleep(backoff);
                        continue;
                    }
                    let text = resp.text().unwrap_or_default();
                    return Err(BackendError::Provider {
                        status: status_code,
                        excerpt: excerpt(&text),
                    });
                }
                Err(e) if e.is_timeout() => {
                    if !retries_left {
                        return Err(BackendError::Timeout(e.to_string()));
                    }
                    std::thread::sleep(backoff);
                }
                Err(e) => {
                    if !retries_left {
                        return Err(BackendError::Transport(e.to_string()));
                    }
                    std::thread::sleep(backoff);
                }
            }
        }
    }
}
