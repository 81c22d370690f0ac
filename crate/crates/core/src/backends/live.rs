//! Live web search: a custom-search-style JSON API for hits and a reader
//! endpoint that returns page text. Each fetched page becomes one raw
//! record; a failed fetch degrades to a snippet-only record with a note.
//! Live mode is configuration-selected and never exercised in CI.

use std::time::Duration;

use serde::Deserialize;

use super::{BackendError, BackendResponse, SearchHit, ToolBackend};
use crate::types::{RawKnowledgeRecord, RecordSource};

#[derive(Debug, Clone)]
pub struct LiveSearchConfig {
    /// Search endpoint; query appended as the `q` parameter.
    pub search_endpoint: String,
    /// Environment variable holding the search API key (`key` parameter).
    pub search_key_env: Option<String>,
    /// Extra fixed query parameters, e.g. a custom-search engine id.
    pub search_params: Vec<(String, String)>,
    /// Reader endpoint prefix; the page URL is appended.
    pub reader_endpoint: String,
    pub reader_key_env: Option<String>,
    pub timeout: Duration,
    pub top_n: usize,
}

#[derive(Deserialize)]
struct SearchItem {
    link: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    snippet: String,
}

#[derive(Deserialize)]
struct SearchPayload {
    #[serde(default)]
    items: Vec<SearchItem>,
}

pub struct LiveSearchBackend {
    config: LiveSearchConfig,
    agent: ureq::Agent,
}

impl LiveSearchBackend {
    pub fn new(config: LiveSearchConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .new_agent();
        LiveSearchBackend { config, agent }
    }

    fn env_value(var: &Option<String>) -> Result<Option<String>, BackendError> {
        match var {
            None => Ok(None),
            Some(name) => std::env::var(name).map(Some).map_err(|_| {
                BackendError::Other(format!("environment variable {name} is not set"))
            }),
        }
    }

    fn search_hits(&self, query: &str) -> Result<Vec<SearchHit>, BackendError> {
        let mut url = format!("{}?q={}", self.config.search_endpoint, urlencode(query));
        if let Some(key) = Self::env_value(&self.config.search_key_env)? {
            url.push_str(&format!("&key={}", urlencode(&key)));
        }
        for (name, value) in &self.config.search_params {
            url.push_str(&format!("&{}={}", urlencode(name), urlencode(value)));
        }
        let payload: SearchPayload = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| BackendError::Transport(format!("search request failed: {e}")))?
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transport(format!("bad search payload: {e}")))?;
        Ok(payload
            .items
            .into_iter()
            .take(self.config.top_n)
            .enumerate()
            .map(|(i, item)| SearchHit {
                url: item.link,
                title: item.title,
                snippet: item.snippet,
                rank: i as u32 + 1,
            })
            .collect())
    }

    fn read_page(&self, url: &str) -> Result<String, BackendError> {
        let reader_url = format!("{}{}", self.config.reader_endpoint, url);
        let mut request = self.agent.get(&reader_url);
        if let Some(key) = Self::env_value(&self.config.reader_key_env)? {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        let text = request
            .call()
            .map_err(|e| BackendError::Transport(format!("page fetch failed: {e}")))?
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(format!("page body unreadable: {e}")))?;
        Ok(strip_markup(&text))
    }

    /// Query the search API, fetch each hit's page, and produce one raw
    /// record per page (snippet-only when the fetch fails).
    pub fn web_search(
        &self,
        query: &str,
        task_id: &str,
        help_index: u32,
    ) -> Result<BackendResponse, BackendError> {
        if query.trim().is_empty() {
            return Err(BackendError::InvalidArgument("query is empty".into()));
        }
        let hits = self.search_hits(query)?;
        let mut response = BackendResponse::default();
        for hit in hits {
            let (content, note) = match self.read_page(&hit.url) {
                Ok(text) => (text, None),
                Err(e) => (
                    hit.snippet.clone(),
                    Some(format!("snippet-only record for {}: {e}", hit.url)),
                ),
            };
            if let Some(note) = note {
                response.notes.push(note);
            }
            response.records.push(RawKnowledgeRecord::new(
                RecordSource::Url { url: hit.url },
                content,
                task_id,
                help_index,
            ));
        }
        Ok(response)
    }
}

impl ToolBackend for LiveSearchBackend {
    fn invoke(
        &self,
        argument: &str,
        task_id: &str,
        help_index: u32,
    ) -> Result<BackendResponse, BackendError> {
        self.web_search(argument, task_id, help_index)
    }
}

fn urlencode(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for byte in text.bytes() {
        match byte {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                out.push(byte as char)
            }
            _ => out.push_str(&format!("%{byte:02X}")),
        }
    }
    out
}

/// Plain-text view of a page: tags dropped, script/style bodies removed,
/// whitespace collapsed.
pub fn strip_markup(html: &str) -> String {
    let mut out = String::with_capacity(html.len() / 2);
    let chars = html.char_indices().peekable();
    let lower = html.to_lowercase();
    let mut skip_until: Option<usize> = None;
    for (i, ch) in chars {
        if let Some(end) = skip_until {
            if i < end {
                continue;
            }
            skip_until = None;
        }
        if ch == '<' {
            for (opener, closer) in [("<script", "</script>"), ("<style", "</style>")] {
                if lower[i..].starts_with(opener) {
                    if let Some(rel) = lower[i..].find(closer) {
                        skip_until = Some(i + rel + closer.len());
                    } else {
                        skip_until = Some(html.len());
                    }
                }
            }
            if skip_until.is_none() {
                // Plain tag: drop through the next '>'.
                if let Some(rel) = html[i..].find('>') {
                    skip_until = Some(i + rel + 1);
                } else {
                    skip_until = Some(html.len());
                }
                // Block-level tags separate words in the text view.
                let name: String = html[i + 1..]
                    .trim_start_matches('/')
                    .chars()
                    .take_while(|c| c.is_ascii_alphanumeric())
                    .collect();
                const BLOCK_TAGS: &[&str] = &[
                    "p",
                    "div",
                    "br",
                    "h1",
                    "h2",
                    "h3",
                    "h4",
                    "h5",
                    "h6",
                    "li",
                    "ul",
                    "ol",
                    "tr",
                    "td",
                    "th",
                    "table",
                    "section",
                    "article",
                    "header",
                    "footer",
                    "blockquote",
                    "pre",
                    "title",
                    "body",
                ];
                if BLOCK_TAGS.contains(&name.to_lowercase().as_str()) {
                    out.push(' ');
                }
            }
            continue;
        }
        out.push(ch);
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markup_is_stripped_to_plain_text() {
        let html = "<html><head><style>p{color:red}</style></head>\
                    <body><h1>Title</h1><p>Hello <b>world</b>.</p>\
                    <script>var x = 1;</script></body></html>";
        assert_eq!(strip_markup(html), "Title Hello world.");
    }

    #[test]
    fn urlencode_escapes_reserved_characters() {
        assert_eq!(urlencode("a b&c"), "a%20b%26c");
    }
}
