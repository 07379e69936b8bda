use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::{normalize_query, KnowledgeSnippet, SummarySource, WikiError};
use crate::backend::RetryPolicy;

pub const DEFAULT_API_URL: &str = "https://en.wikipedia.org/w/api.php";
pub const USER_AGENT: &str = concat!(
    "kdr-core/",
    env!("CARGO_PKG_VERSION"),
    " (in-context NER research tool; knowledge snapshot builder)"
);

/// One GET against the Action API, returning the decoded JSON body.
pub trait WikiTransport: Send + Sync {
    fn get(&self, params: &[(&str, &str)]) -> Result<Value, WikiError>;
}

/// HTTPS transport with a politeness interval between requests.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    api_url: String,
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
    retry: RetryPolicy,
}

impl HttpTransport {
    pub fn new(api_url: impl Into<String>) -> Result<Self, WikiError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(USER_AGENT)
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| WikiError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            client,
            api_url: api_url.into(),
            // two requests per second
            min_interval: Duration::from_millis(500),
            last: Mutex::new(None),
            retry: RetryPolicy::default(),
        })
    }

    fn pace(&self) {
        let mut last = self.last.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

impl WikiTransport for HttpTransport {
    fn get(&self, params: &[(&str, &str)]) -> Result<Value, WikiError> {
        let mut message = String::new();
        for attempt in 1..=self.retry.max_attempts {
            self.pace();
            match self.client.get(&self.api_url).query(params).send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    if RetryPolicy::retries_status(status) {
                        message = format!("HTTP {status}");
                    } else if !(200..300).contains(&status) {
                        return Err(WikiError::Api(format!("HTTP {status}")));
                    } else {
                        return resp.json().map_err(|e| WikiError::Api(e.to_string()));
                    }
                }
                Err(e) => message = e.to_string(),
            }
            if attempt < self.retry.max_attempts {
                std::thread::sleep(self.retry.delay_after(attempt));
            }
        }
        Err(WikiError::Transport {
            attempts: self.retry.max_attempts,
            message,
        })
    }
}

/// Search-then-extract client: top search hit, intro section, plain text.
pub struct MediaWikiClient<T> {
    transport: T,
    site: String,
}

impl<T: WikiTransport> MediaWikiClient<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            site: "https://en.wikipedia.org".to_owned(),
        }
    }

    pub fn with_site(mut self, site: impl Into<String>) -> Self {
        self.site = site.into();
        self
    }

    fn top_hit(&self, query: &str) -> Result<Option<String>, WikiError> {
        let v = self.transport.get(&[
            ("action", "query"),
            ("list", "search"),
            ("srsearch", query),
            ("srlimit", "1"),
            ("format", "json"),
        ])?;
        let hits = v
            .pointer("/query/search")
            .and_then(Value::as_array)
            .ok_or_else(|| WikiError::Api("search response without query.search".into()))?;
        Ok(hits
            .first()
            .and_then(|h| h.get("title"))
            .and_then(Value::as_str)
            .map(str::to_owned))
    }

    fn lead_extract(&self, title: &str) -> Result<Option<(String, String)>, WikiError> {
        let v = self.transport.get(&[
            ("action", "query"),
            ("prop", "extracts"),
            ("exintro", "1"),
            ("explaintext", "1"),
            ("redirects", "1"),
            ("titles", title),
            ("format", "json"),
        ])?;
        let pages = v
            .pointer("/query/pages")
            .and_then(Value::as_object)
            .ok_or_else(|| WikiError::Api("extract response without query.pages".into()))?;
        Ok(pages.values().find_map(|p| {
            let extract = p.get("extract")?.as_str()?.trim();
            let resolved = p.get("title").and_then(Value::as_str).unwrap_or(title);
            (!extract.is_empty()).then(|| (resolved.to_owned(), extract.to_owned()))
        }))
    }
}

impl<T: WikiTransport> SummarySource for MediaWikiClient<T> {
    fn retrieve_summary(&self, query: &str) -> Result<Option<KnowledgeSnippet>, WikiError> {
        if normalize_query(query).is_empty() {
            return Err(WikiError::EmptyQuery);
        }
        let query = query.trim();
        let Some(title) = self.top_hit(query)? else {
            return Ok(None);
        };
        let Some((title, summary)) = self.lead_extract(&title)? else {
            return Ok(None);
        };
        let disambiguation_page = title.ends_with("(disambiguation)") || summary.contains("may refer to");
        Ok(Some(KnowledgeSnippet {
            query: query.to_owned(),
            source_url: format!("{}/wiki/{}", self.site, title.replace(' ', "_")),
            title,
            summary,
            retrieved_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            disambiguation_page,
        }))
    }
}
