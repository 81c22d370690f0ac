//! Offline web world for deterministic runs: a JSON corpus of pages
//! scored by lowercase term overlap. Identical query + corpus always
//! yields identical ranked results, which makes search behavior an exact
//! test oracle.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendResponse, SearchHit, ToolBackend};
use crate::provider::hashed::tokenize;
use crate::types::{RawKnowledgeRecord, RecordSource};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusPage {
    pub id: String,
    pub url: String,
    pub text: String,
}

#[derive(Debug)]
pub struct FixtureCorpus {
    pages: Vec<CorpusPage>,
    token_sets: Vec<BTreeSet<String>>,
}

impl FixtureCorpus {
    pub fn from_pages(pages: Vec<CorpusPage>) -> Result<Self, BackendError> {
        if pages.is_empty() {
            return Err(BackendError::CorpusLoad("corpus has no pages".into()));
        }
        let mut seen = BTreeSet::new();
        for page in &pages {
            if !seen.insert(page.id.as_str()) {
                return Err(BackendError::CorpusLoad(format!(
                    "duplicate page id: {}",
                    page.id
                )));
            }
        }
        let token_sets = pages
            .iter()
            .map(|p| tokenize(&p.text).into_iter().collect())
            .collect();
        Ok(FixtureCorpus { pages, token_sets })
    }

    /// Loads a JSON array of `{id, url, text}` pages.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path).map_err(|e| {
            BackendError::CorpusLoad(format!("cannot read {}: {e}", path.display()))
        })?;
        if raw.trim().is_empty() {
            return Err(BackendError::CorpusLoad(format!(
                "{} is empty",
                path.display()
            )));
        }
        let pages: Vec<CorpusPage> = serde_json::from_str(&raw).map_err(|e| {
            // serde_json reports line and column of the offending element.
            BackendError::CorpusLoad(format!("{}: {e}", path.display()))
        })?;
        Self::from_pages(pages)
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn pages(&self) -> &[CorpusPage] {
        &self.pages
    }

    /// Distinct lowercased query terms present in the page's token set,
    /// ties broken by ascending page id.
    fn score(&self, query_terms: &BTreeSet<String>) -> Vec<(usize, usize)> {
        let count =
            |tokens: &BTreeSet<String>| query_terms.iter().filter(|t| tokens.contains(*t)).count();
        #[cfg(feature = "parallel")]
        let mut scored: Vec<(usize, usize)> = {
            use rayon::prelude::*;
            self.token_sets
                .par_iter()
                .enumerate()
                .map(|(i, tokens)| (i, count(tokens)))
                .collect()
        };
        #[cfg(not(feature = "parallel"))]
        let mut scored: Vec<(usize, usize)> = self
            .token_sets
            .iter()
            .enumerate()
            .map(|(i, tokens)| (i, count(tokens)))
            .collect();
        scored.retain(|(_, score)| *score > 0);
        scored.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| self.pages[a.0].id.cmp(&self.pages[b.0].id))
        });
        scored
    }

    /// Term-overlap search over the corpus. Zero matches is an empty
    /// list, not an error.
    pub fn search(
        &self,
        query: &str,
        top_n: usize,
        task_id: &str,
        help_index: u32,
    ) -> Result<Vec<(SearchHit, RawKnowledgeRecord)>, BackendError> {
        if query.trim().is_empty() {
            return Err(BackendError::InvalidArgument("query is empty".into()));
        }
        if top_n == 0 {
            return Err(BackendError::InvalidArgument("top_n must be >= 1".into()));
        }
        let query_terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let scored = self.score(&query_terms);
        Ok(scored
            .into_iter()
            .take(top_n)
            .enumerate()
            .map(|(rank, (page_index, _))| {
                let page = &self.pages[page_index];
                let hit = SearchHit {
                    url: page.url.clone(),
                    title: page.id.clone(),
                    snippet: page.text.chars().take(160).collect(),
                    rank: rank as u32 + 1,
                };
                let record = RawKnowledgeRecord::new(
                    RecordSource::Url {
                        url: page.url.clone(),
                    },
                    page.text.clone(),
                    task_id,
                    help_index,
                );
                (hit, record)
            })
            .collect())
    }
}

/// Registry adapter binding a corpus and a fixed top_n.
pub struct FixtureSearchBackend {
    corpus: std::sync::Arc<FixtureCorpus>,
    top_n: usize,
}

impl FixtureSearchBackend {
    pub fn new(corpus: std::sync::Arc<FixtureCorpus>, top_n: usize) -> Self {
        FixtureSearchBackend { corpus, top_n }
    }
}

impl ToolBackend for FixtureSearchBackend {
    fn invoke(
        &self,
        argument: &str,
        task_id: &str,
        help_index: u32,
    ) -> Result<BackendResponse, BackendError> {
        let results = self
            .corpus
            .search(argument, self.top_n, task_id, help_index)?;
        Ok(BackendResponse {
            records: results.into_iter().map(|(_, record)| record).collect(),
            notes: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(id: &str, text: &str) -> CorpusPage {
        CorpusPage {
            id: id.into(),
            url: format!("fixture://{id}"),
            text: text.into(),
        }
    }

    fn two_page_corpus() -> FixtureCorpus {
        FixtureCorpus::from_pages(vec![
            page("p1", "vessel hudson yards copper"),
            page("p2", "iclr hotels"),
        ])
        .unwrap()
    }

    #[test]
    fn term_overlap_ranks_matching_page_first() {
        let corpus = two_page_corpus();
        let results = corpus.search("vessel copper", 5, "t", 1).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].0.url, "fixture://p1");
        assert_eq!(results[0].0.rank, 1);
    }

    #[test]
    fn no_match_returns_empty_list() {
        let corpus = two_page_corpus();
        assert!(corpus.search("submarine", 5, "t", 1).unwrap().is_empty());
    }

    #[test]
    fn zero_top_n_is_a_precondition_error() {
        let corpus = two_page_corpus();
        assert!(corpus.search("vessel", 0, "t", 1).is_err());
    }

    #[test]
    fn duplicate_page_ids_fail_load_naming_the_id() {
        let err = FixtureCorpus::from_pages(vec![page("dup", "a"), page("dup", "b")]).unwrap_err();
        assert!(err.to_string().contains("dup"));
    }

    #[test]
    fn empty_corpus_fails_load() {
        assert!(FixtureCorpus::from_pages(vec![]).is_err());
    }

    #[test]
    fn malformed_file_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.json");
        std::fs::write(&path, "[{\"id\": \"p1\", \"url\": 3}]").unwrap();
        let err = FixtureCorpus::load(&path).unwrap_err();
        assert!(err.to_string().contains("line"));
    }

    #[test]
    fn search_is_deterministic() {
        let corpus = two_page_corpus();
        let a = corpus.search("vessel hudson", 5, "t", 1).unwrap();
        let b = corpus.search("vessel hudson", 5, "t", 1).unwrap();
        let ids_a: Vec<_> = a.iter().map(|(h, _)| h.url.clone()).collect();
        let ids_b: Vec<_> = b.iter().map(|(h, _)| h.url.clone()).collect();
        assert_eq!(ids_a, ids_b);
        // Same content yields the same record id across calls.
        assert_eq!(a[0].1.record_id, b[0].1.record_id);
    }

    #[test]
    fn ties_break_by_page_id() {
        let corpus =
            FixtureCorpus::from_pages(vec![page("pb", "shared term"), page("pa", "shared term")])
                .unwrap();
        let results = corpus.search("shared", 5, "t", 1).unwrap();
        assert_eq!(results[0].0.title, "pa");
        assert_eq!(results[1].0.title, "pb");
    }
}
