//! Chat-completion backends behind one blocking interface.

mod http;
mod replay;
mod scripted;

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::fingerprint;

pub use http::{OpenAiBackend, OpenAiConfig, RetryPolicy, API_KEY_ENV};
pub use replay::{load_session, RecordingBackend, ReplayBackend, SessionEntry};
pub use scripted::{load_rules, Matcher, ScriptedBackend, ScriptedRule};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid request: {0}")]
    Precondition(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    Protocol(String),
    #[error("unscripted prompt (fingerprint {fingerprint})")]
    Unscripted { fingerprint: String },
    #[error("session file: {0}")]
    Session(String),
}

impl BackendError {
    /// Failures that say nothing about the prompt itself.
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport { .. } | BackendError::Http { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(model_name: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            model_name: model_name.into(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(BackendError::Precondition("at least one user message is required".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(BackendError::Precondition(format!("temperature {} < 0", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::Precondition("max_output_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Content of the last user message; for pipeline requests this is the
    /// rendered prompt bundle.
    pub fn prompt(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str())
    }

    /// Equals the `PromptBundle` fingerprint of the prompt that was sent.
    pub fn prompt_fingerprint(&self) -> String {
        fingerprint(self.prompt())
    }

    /// Hash over the whole request, model and decoding settings included.
    pub fn fingerprint(&self) -> String {
        fingerprint(&serde_json::to_string(self).expect("request serializes"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub latency: Duration,
}

impl ChatResponse {
    pub fn text_only(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            usage: Usage::default(),
            latency: Duration::ZERO,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct InFlightLimit {
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.cap {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InFlightPermit { limit: self }
    }

    pub fn active(&self) -> usize {
        *self.active.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.limit.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.limit.freed.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn request_requires_user_message() {
        let mut req = ChatRequest::new("m", "hi");
        assert!(req.validate().is_ok());
        req.messages[0].role = Role::System;
        assert!(matches!(req.validate(), Err(BackendError::Precondition(_))));
    }

    #[test]
    fn prompt_fingerprint_matches_bundle() {
        let bundle = crate::prompting::PromptBundle::from_sections(vec![crate::prompting::PromptSection::new(
            crate::prompting::SectionKind::Input,
            "Text: x",
        )
        .unwrap()]);
        let req = ChatRequest::new("m", bundle.rendered.clone());
        assert_eq!(req.prompt_fingerprint(), bundle.fingerprint);
        assert_ne!(req.fingerprint(), bundle.fingerprint);
    }

    #[test]
    fn in_flight_cap_is_respected() {
        let limit = Arc::new(InFlightLimit::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let limit = limit.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _p = limit.acquire();
                    peak.fetch_max(limit.active(), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(limit.active(), 0);
    }
}
