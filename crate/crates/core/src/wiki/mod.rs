//! Knowledge retrieval from Wikipedia lead sections, with a snapshot cache
//! that makes runs reproducible offline.

mod cache;
mod mediawiki;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{normalize_query, KnowledgeRetriever, SnapshotCache, SnapshotHeader};
pub use mediawiki::{HttpTransport, MediaWikiClient, WikiTransport, DEFAULT_API_URL, USER_AGENT};

#[derive(Debug, Error)]
pub enum WikiError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("snapshot incomplete: no cached entry for query {0:?} and retrieval is offline")]
    SnapshotIncomplete(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("unexpected API response: {0}")]
    Api(String),
    #[error("cache file: {0}")]
    Cache(String),
}

/// Lead-section summary of the top search hit for one query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSnippet {
    pub query: String,
    pub title: String,
    pub summary: String,
    pub source_url: String,
    pub retrieved_at: String,
    /// The top hit is a disambiguation page; its extract is kept as-is.
    #[serde(default)]
    pub disambiguation_page: bool,
}

/// Anything that can answer a query with at most one snippet.
pub trait SummarySource: Send + Sync {
    /// `Ok(None)` is a confirmed miss; `Err` means the lookup itself failed.
    fn retrieve_summary(&self, query: &str) -> Result<Option<KnowledgeSnippet>, WikiError>;
}
