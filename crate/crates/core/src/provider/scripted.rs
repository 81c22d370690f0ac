//! Scripted chat provider for deterministic replay. Each `complete` call
//! consumes the next script entry; an entry's predicate must accept the
//! actual request or the call fails with a divergence naming the first
//! mismatch. Scripts serialize to JSON so replay transcripts can ship as
//! fixtures.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{apply_stop_markers, ChatProvider, ChatRequest, ProviderError};

/// Expectation evaluated against the flattened request text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextPredicate {
    /// Accepts anything.
    Any,
    Contains {
        needle: String,
    },
    NotContains {
        needle: String,
    },
    AllOf {
        preds: Vec<ContextPredicate>,
    },
}

impl ContextPredicate {
    /// None = accepted; Some(reason) = first failing expectation.
    pub fn check(&self, flattened: &str) -> Option<String> {
        match self {
            ContextPredicate::Any => None,
            ContextPredicate::Contains { needle } => {
                if flattened.contains(needle.as_str()) {
                    None
                } else {
                    Some(format!("expected context to contain {needle:?}"))
                }
            }
            ContextPredicate::NotContains { needle } => {
                if flattened.contains(needle.as_str()) {
                    Some(format!("expected context not to contain {needle:?}"))
                } else {
                    None
                }
            }
            ContextPredicate::AllOf { preds } => preds.iter().find_map(|p| p.check(flattened)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub expect: ContextPredicate,
    pub response: String,
}

impl ScriptEntry {
    pub fn new(expect: ContextPredicate, response: impl Into<String>) -> Self {
        ScriptEntry {
            expect,
            response: response.into(),
        }
    }

    pub fn any(response: impl Into<String>) -> Self {
        ScriptEntry::new(ContextPredicate::Any, response)
    }
}

/// Replays an ordered script. The cursor is behind a mutex so a handle can
/// be shared across threads; calls are consumed in arrival order.
pub struct ScriptedChatProvider {
    script: Vec<ScriptEntry>,
    cursor: Mutex<usize>,
    divergences: Mutex<Vec<String>>,
}

impl ScriptedChatProvider {
    pub fn new(script: Vec<ScriptEntry>) -> Self {
        ScriptedChatProvider {
            script,
            cursor: Mutex::new(0),
            divergences: Mutex::new(Vec::new()),
        }
    }

    /// Convenience: a script of unconditional responses.
    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(responses.into_iter().map(ScriptEntry::any).collect())
    }

    /// Entries consumed so far.
    pub fn consumed(&self) -> usize {
        *self.cursor.lock().unwrap()
    }

    pub fn divergences(&self) -> Vec<String> {
        self.divergences.lock().unwrap().clone()
    }
}

impl ChatProvider for ScriptedChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let mut cursor = self.cursor.lock().unwrap();
        if *cursor >= self.script.len() {
            return Err(ProviderError::ReplayUnderrun);
        }
        let entry = &self.script[*cursor];
        let index = *cursor;
        if let Some(reason) = entry.expect.check(&request.flattened()) {
            let detail = format!("script entry {index}: {reason}");
            self.divergences.lock().unwrap().push(detail.clone());
            return Err(ProviderError::Divergence(detail));
        }
        *cursor += 1;
        Ok(apply_stop_markers(&entry.response, &request.stop_markers))
    }
}

/// Returns the same text on every call. Handy for adversarial budget
/// tests (a model that asks for help forever).
pub struct RepeatChatProvider {
    response: String,
}

impl RepeatChatProvider {
    pub fn new(response: impl Into<String>) -> Self {
        RepeatChatProvider {
            response: response.into(),
        }
    }
}

impl ChatProvider for RepeatChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        Ok(apply_stop_markers(&self.response, &request.stop_markers))
    }
}
