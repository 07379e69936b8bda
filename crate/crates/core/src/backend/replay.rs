//! Session recording and offline replay.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse};

/// One line of a session file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub fingerprint: String,
    pub response_text: String,
}

/// Wraps a live backend and appends every answered request to a session file.
pub struct RecordingBackend<B> {
    inner: B,
    path: PathBuf,
    file: Mutex<File>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B, path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| BackendError::Session(format!("{}: {e}", path.display())))?;
        Ok(Self {
            inner,
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let response = self.inner.complete(request)?;
        let entry = SessionEntry {
            fingerprint: request.fingerprint(),
            response_text: response.text.clone(),
        };
        let line = serde_json::to_string(&entry).expect("entry serializes");
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        writeln!(file, "{line}").map_err(|e| BackendError::Session(e.to_string()))?;
        Ok(response)
    }
}

pub fn load_session(path: impl AsRef<Path>) -> Result<Vec<SessionEntry>, BackendError> {
    let path = path.as_ref();
    let content =
        std::fs::read_to_string(path).map_err(|e| BackendError::Session(format!("{}: {e}", path.display())))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BackendError::Session(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Serves recorded responses by request fingerprint; never touches the
/// network. The first recording of a fingerprint wins.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(entries: Vec<SessionEntry>) -> Self {
        let mut map = HashMap::new();
        for e in entries {
            map.entry(e.fingerprint).or_insert(e.response_text);
        }
        Self { entries: map }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        load_session(path).map(Self::new)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let fp = request.fingerprint();
        self.entries
            .get(&fp)
            .map(ChatResponse::text_only)
            .ok_or(BackendError::Unscripted { fingerprint: fp })
    }
}
