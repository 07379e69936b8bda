//! Deterministic backend answering from declared rules.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Fingerprint of the prompt text (equal to the `PromptBundle` fingerprint).
    Fingerprint(String),
    /// Substring of the prompt text.
    Substring(String),
    /// Every listed substring occurs in the prompt text.
    All(Vec<String>),
}

impl Matcher {
    fn matches(&self, request: &ChatRequest) -> bool {
        match self {
            Matcher::Fingerprint(fp) => request.prompt_fingerprint() == *fp,
            Matcher::Substring(s) => request.prompt().contains(s.as_str()),
            Matcher::All(parts) => parts.iter().all(|s| request.prompt().contains(s.as_str())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRule {
    pub matcher: Matcher,
    pub response_text: String,
    #[serde(default)]
    pub consumed_count: usize,
}

impl ScriptedRule {
    pub fn substring(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Substring(pattern.into()),
            response_text: response.into(),
            consumed_count: 0,
        }
    }

    pub fn all<S: Into<String>>(parts: impl IntoIterator<Item = S>, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::All(parts.into_iter().map(Into::into).collect()),
            response_text: response.into(),
            consumed_count: 0,
        }
    }

    pub fn fingerprint(fp: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Fingerprint(fp.into()),
            response_text: response.into(),
            consumed_count: 0,
        }
    }
}

/// Rules are tried in declaration order and the first match answers.
/// Every served prompt is logged.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    rules: Mutex<Vec<ScriptedRule>>,
    log: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptedRule>) -> Self {
        Self {
            rules: Mutex::new(rules),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn rules(&self) -> Vec<ScriptedRule> {
        self.rules.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    /// Prompts served so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn reset_log(&self) {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let mut rules = self.rules.lock().unwrap_or_else(|e| e.into_inner());
        let rule = rules
            .iter_mut()
            .find(|r| r.matcher.matches(request))
            .ok_or_else(|| BackendError::Unscripted {
                fingerprint: request.prompt_fingerprint(),
            })?;
        rule.consumed_count += 1;
        let text = rule.response_text.clone();
        drop(rules);
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.prompt().to_owned());
        Ok(ChatResponse::text_only(text))
    }
}

/// Reads a JSON array of rules.
pub fn load_rules(path: impl AsRef<Path>) -> Result<Vec<ScriptedRule>, BackendError> {
    let content = std::fs::read_to_string(path).map_err(|e| BackendError::Session(e.to_string()))?;
    serde_json::from_str(&content).map_err(|e| BackendError::Session(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_rule_wins() {
        let b = ScriptedBackend::new(vec![
            ScriptedRule::substring("### Input", "NONE"),
            ScriptedRule::substring("", "fallback"),
        ]);
        let r = b.complete(&ChatRequest::new("m", "### Input\nText: x")).unwrap();
        assert_eq!(r.text, "NONE");
        let r = b.complete(&ChatRequest::new("m", "other")).unwrap();
        assert_eq!(r.text, "fallback");
        let counts: Vec<usize> = b.rules().iter().map(|r| r.consumed_count).collect();
        assert_eq!(counts, [1, 1]);
        assert_eq!(b.call_count(), 2);
    }

    #[test]
    fn all_matcher_needs_every_part() {
        let rules: Vec<ScriptedRule> =
            serde_json::from_str(r####"[{"matcher": {"all": ["### Task", "Paris"]}, "response_text": "Paris [LOC]"}]"####)
                .unwrap();
        assert_eq!(rules[0], ScriptedRule::all(["### Task", "Paris"], "Paris [LOC]"));
        let b = ScriptedBackend::new(rules);
        assert!(b.complete(&ChatRequest::new("m", "### Task\nParis")).is_ok());
        assert!(b.complete(&ChatRequest::new("m", "### Task\nRome")).is_err());
    }

    #[test]
    fn unscripted_prompt_carries_fingerprint() {
        let b = ScriptedBackend::new(vec![ScriptedRule::substring("zzz", "x")]);
        let req = ChatRequest::new("m", "hello");
        match b.complete(&req) {
            Err(BackendError::Unscripted { fingerprint }) => assert_eq!(fingerprint, req.prompt_fingerprint()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fingerprint_matcher() {
        let req = ChatRequest::new("m", "exact prompt");
        let b = ScriptedBackend::new(vec![ScriptedRule::fingerprint(req.prompt_fingerprint(), "ok")]);
        assert_eq!(b.complete(&req).unwrap().text, "ok");
        assert!(b.complete(&ChatRequest::new("m", "exact prompt!")).is_err());
    }

    #[test]
    fn identical_requests_identical_responses() {
        let b = ScriptedBackend::new(vec![ScriptedRule::substring("a", "A")]);
        let req = ChatRequest::new("m", "a");
        assert_eq!(b.complete(&req).unwrap(), b.complete(&req).unwrap());
    }

    #[test]
    fn precondition_checked() {
        let b = ScriptedBackend::new(vec![ScriptedRule::substring("", "x")]);
        let mut req = ChatRequest::new("m", "a");
        req.messages.clear();
        assert!(matches!(b.complete(&req), Err(BackendError::Precondition(_))));
    }
}
