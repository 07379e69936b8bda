//! OpenAI-compatible `/v1/chat/completions` client with retry.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, InFlightLimit, Usage};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "KDR_API_KEY";

/// Exponential backoff: attempt `n` (1-based) waits `base * factor^(n-1)`
/// before attempt `n + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub factor: u32,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay: Duration::from_secs(1),
            factor: 2,
            max_attempts: 5,
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(attempt.saturating_sub(1))
    }

    /// 429 and 5xx are retried; every other 4xx is final.
    pub fn retries_status(status: u16) -> bool {
        status == 429 || (500..600).contains(&status)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl OpenAiConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct OpenAiBackend {
    client: reqwest::blocking::Client,
    config: OpenAiConfig,
    limit: InFlightLimit,
}

impl std::fmt::Debug for OpenAiBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OpenAiBackend")
            .field("base_url", &self.config.base_url)
            .field("has_api_key", &self.config.api_key.is_some())
            .field("max_in_flight", &self.config.max_in_flight)
            .finish()
    }
}

enum Attempt {
    Done(ChatResponse),
    Retry(String),
    Fail(BackendError),
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            limit: InFlightLimit::new(config.max_in_flight),
            client,
            config,
        })
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub fn request_body(request: &ChatRequest) -> Value {
        json!({
            "model": request.model_name,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let started = Instant::now();
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if RetryPolicy::retries_status(status) {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fail(BackendError::Http { status, body: text });
        }
        match parse_completion(&text) {
            Ok((content, usage)) => Attempt::Done(ChatResponse {
                text: content,
                usage,
                latency: started.elapsed(),
            }),
            Err(e) => Attempt::Fail(e),
        }
    }
}

pub(crate) fn parse_completion(body: &str) -> Result<(String, Usage), BackendError> {
    let v: Value = serde_json::from_str(body).map_err(|e| BackendError::Protocol(e.to_string()))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Protocol("no choices[0].message.content".into()))?;
    let count = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64).unwrap_or(0);
    Ok((
        content.to_owned(),
        Usage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
        },
    ))
}

impl ChatBackend for OpenAiBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let body = Self::request_body(request);
        let _permit = self.limit.acquire();
        let policy = &self.config.retry;
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts {
            match self.attempt(&body) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!("chat completion attempt {attempt} failed: {msg}");
                    last = msg;
                    if attempt < policy.max_attempts {
                        std::thread::sleep(policy.delay_after(attempt));
                    }
                }
            }
        }
        Err(BackendError::Transport {
            attempts: policy.max_attempts,
            message: last,
        })
    }
}
