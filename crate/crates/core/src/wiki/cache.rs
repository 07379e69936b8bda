use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use super::{KnowledgeSnippet, SummarySource, WikiError};
use crate::prompting::fingerprint;

/// Trim, collapse internal whitespace, case-fold.
pub fn normalize_query(query: &str) -> String {
    query.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    /// Knowledge cutoff the snapshot is meant to respect, e.g. `2025-05-01`.
    pub cutoff: Option<String>,
    pub created_at: String,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    query_normalized: String,
    hit: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    snippet: Option<KnowledgeSnippet>,
}

/// Normalized query → snippet, where `None` records a confirmed miss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotCache {
    pub header: SnapshotHeader,
    entries: BTreeMap<String, Option<KnowledgeSnippet>>,
}

impl SnapshotCache {
    pub fn new(cutoff: Option<String>) -> Self {
        Self {
            header: SnapshotHeader {
                cutoff,
                created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            },
            entries: BTreeMap::new(),
        }
    }

    pub fn get(&self, query: &str) -> Option<&Option<KnowledgeSnippet>> {
        self.entries.get(&normalize_query(query))
    }

    pub fn insert(&mut self, query: &str, value: Option<KnowledgeSnippet>) {
        self.entries.insert(normalize_query(query), value);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> usize {
        self.entries.values().filter(|v| v.is_some()).count()
    }

    /// Header line then one line per entry in key order.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for (k, v) in &self.entries {
            let rec = EntryRecord {
                query_normalized: k.clone(),
                hit: v.is_some(),
                snippet: v.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(content: &str) -> Result<Self, WikiError> {
        let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| WikiError::Cache("missing header record".into()))?;
        let header: SnapshotHeader =
            serde_json::from_str(first).map_err(|e| WikiError::Cache(format!("line 1: {e}")))?;
        let mut entries = BTreeMap::new();
        for (i, line) in lines {
            let rec: EntryRecord =
                serde_json::from_str(line).map_err(|e| WikiError::Cache(format!("line {}: {e}", i + 1)))?;
            if rec.hit != rec.snippet.is_some() {
                return Err(WikiError::Cache(format!("line {}: hit flag disagrees with snippet", i + 1)));
            }
            if rec.snippet.as_ref().is_some_and(|s| s.summary.trim().is_empty()) {
                return Err(WikiError::Cache(format!("line {}: empty summary", i + 1)));
            }
            entries.insert(normalize_query(&rec.query_normalized), rec.snippet);
        }
        Ok(Self { header, entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WikiError> {
        let path = path.as_ref();
        let content = std::fs::read_to_string(path).map_err(|e| WikiError::Cache(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&content)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), WikiError> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| WikiError::Cache(format!("{}: {e}", path.display())))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| WikiError::Cache(e.to_string()))
    }

    pub fn content_hash(&self) -> String {
        fingerprint(&self.to_jsonl())
    }
}

/// Cache-first retrieval. Concurrent first fetches of one query are
/// collapsed into a single source lookup.
pub struct KnowledgeRetriever {
    cache: RwLock<SnapshotCache>,
    source: Option<Box<dyn SummarySource>>,
    in_flight: Mutex<HashSet<String>>,
    done: Condvar,
    lookups: AtomicUsize,
}

impl KnowledgeRetriever {
    /// Serves only from the cache; a miss is an error.
    pub fn offline(cache: SnapshotCache) -> Self {
        Self::build(cache, None)
    }

    pub fn online(cache: SnapshotCache, source: Box<dyn SummarySource>) -> Self {
        Self::build(cache, Some(source))
    }

    fn build(cache: SnapshotCache, source: Option<Box<dyn SummarySource>>) -> Self {
        Self {
            cache: RwLock::new(cache),
            source,
            in_flight: Mutex::new(HashSet::new()),
            done: Condvar::new(),
            lookups: AtomicUsize::new(0),
        }
    }

    pub fn is_offline(&self) -> bool {
        self.source.is_none()
    }

    /// Number of lookups delegated to the source so far.
    pub fn network_calls(&self) -> usize {
        self.lookups.load(Ordering::SeqCst)
    }

    pub fn snapshot(&self) -> SnapshotCache {
        self.cache.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn cached(&self, key: &str) -> Option<Option<KnowledgeSnippet>> {
        self.cache.read().unwrap_or_else(|e| e.into_inner()).entries.get(key).cloned()
    }

    pub fn retrieve_cached(&self, query: &str) -> Result<Option<KnowledgeSnippet>, WikiError> {
        let key = normalize_query(query);
        if key.is_empty() {
            return Err(WikiError::EmptyQuery);
        }
        loop {
            if let Some(v) = self.cached(&key) {
                return Ok(v);
            }
            let Some(source) = &self.source else {
                return Err(WikiError::SnapshotIncomplete(query.to_owned()));
            };
            let mut in_flight = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
            if self.cached(&key).is_some() {
                continue;
            }
            if in_flight.contains(&key) {
                drop(self.done.wait(in_flight).unwrap_or_else(|e| e.into_inner()));
                continue;
            }
            in_flight.insert(key.clone());
            drop(in_flight);

            self.lookups.fetch_add(1, Ordering::SeqCst);
            let result = source.retrieve_summary(query);
            if let Ok(v) = &result {
                self.cache
                    .write()
                    .unwrap_or_else(|e| e.into_inner())
                    .entries
                    .insert(key.clone(), v.clone());
            }
            self.in_flight.lock().unwrap_or_else(|e| e.into_inner()).remove(&key);
            self.done.notify_all();
            return result;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    struct Counting {
        calls: Arc<AtomicUsize>,
    }

    impl SummarySource for Counting {
        fn retrieve_summary(&self, query: &str) -> Result<Option<KnowledgeSnippet>, WikiError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(10));
            if query.contains("nonexistent") {
                return Ok(None);
            }
            Ok(Some(KnowledgeSnippet {
                query: query.into(),
                title: query.into(),
                summary: format!("{query} is a thing."),
                source_url: format!("https://en.wikipedia.org/wiki/{query}"),
                retrieved_at: "2025-04-30T00:00:00Z".into(),
                disambiguation_page: false,
            }))
        }
    }

    fn online() -> (KnowledgeRetriever, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let r = KnowledgeRetriever::online(SnapshotCache::new(None), Box::new(Counting { calls: calls.clone() }));
        (r, calls)
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_query("  New   York\tCity "), "new york city");
    }

    #[test]
    fn second_call_is_served_from_cache() {
        let (r, calls) = online();
        let a = r.retrieve_cached("BRCA1").unwrap();
        let b = r.retrieve_cached("  brca1 ").unwrap();
        assert_eq!(a, b);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(r.network_calls(), 1);
    }

    #[test]
    fn misses_are_cached() {
        let (r, calls) = online();
        assert_eq!(r.retrieve_cached("zzqx-nonexistent-9817").unwrap(), None);
        assert_eq!(r.retrieve_cached("zzqx-nonexistent-9817").unwrap(), None);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(r.snapshot().hits(), 0);
        assert_eq!(r.snapshot().len(), 1);
    }

    #[test]
    fn offline_miss_is_an_error() {
        let r = KnowledgeRetriever::offline(SnapshotCache::new(None));
        assert!(matches!(r.retrieve_cached("novel"), Err(WikiError::SnapshotIncomplete(q)) if q == "novel"));
        assert!(matches!(r.retrieve_cached(" "), Err(WikiError::EmptyQuery)));
    }

    #[test]
    fn concurrent_first_fetch_is_single_flight() {
        let (r, calls) = online();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| r.retrieve_cached("Amazon").unwrap());
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn jsonl_round_trip() {
        let (r, _) = online();
        r.retrieve_cached("BRCA1").unwrap();
        r.retrieve_cached("nonexistent thing").unwrap();
        let snap = r.snapshot();
        let back = SnapshotCache::from_jsonl(&snap.to_jsonl()).unwrap();
        assert_eq!(back, snap);
        assert_eq!(back.content_hash(), snap.content_hash());
        assert!(SnapshotCache::from_jsonl("").is_err());
    }
}
