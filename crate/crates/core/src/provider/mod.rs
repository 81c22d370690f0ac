//! Abstractions over external intelligence: a chat-completion model and an
//! embedding model, each with deterministic offline implementations and a
//! live HTTP client. The engine only ever sees these traits, so backbones
//! swap freely and whole runs can be replayed without a network.

pub mod hashed;
pub mod http;
pub mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use hashed::HashedTfEmbedding;
pub use http::{HttpChatProvider, HttpEmbeddingProvider, HttpProviderConfig};
pub use scripted::{ContextPredicate, RepeatChatProvider, ScriptEntry, ScriptedChatProvider};

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Transient transport problem; the caller may retry.
    #[error("transport failure: {0}")]
    Transport(String),
    /// The provider declined to answer; surfaces as a task failure.
    #[error("provider refusal: {0}")]
    Refusal(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    /// Scripted provider ran past the end of its script.
    #[error("replay underrun")]
    ReplayUnderrun,
    /// Scripted provider's expectation rejected the actual request.
    #[error("replay divergence: {0}")]
    Divergence(String),
    /// Run-level configuration mismatch, e.g. embedding dimension.
    #[error("provider configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A chat-completion request. Stop markers are inclusive: generation halts
/// at the earliest marker produced and the marker stays in the output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub stop_markers: Vec<String>,
    pub max_output: usize,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>) -> Self {
        ChatRequest {
            messages,
            stop_markers: Vec::new(),
            max_output: 4096,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest(
                "messages list is empty".into(),
            ));
        }
        if self.messages[0].role != Role::System {
            return Err(ProviderError::InvalidRequest(
                "first message must have the system role".into(),
            ));
        }
        Ok(())
    }

    /// Flat view of the whole request, used by scripted predicates.
    pub fn flattened(&self) -> String {
        let mut out = String::new();
        for message in &self.messages {
            let tag = match message.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            out.push_str(tag);
            out.push_str(": ");
            out.push_str(&message.content);
            out.push('\n');
        }
        out
    }
}

/// Truncates `text` at the end of the earliest stop marker, if any.
pub(crate) fn apply_stop_markers(text: &str, markers: &[String]) -> String {
    let mut cut: Option<usize> = None;
    for marker in markers {
        if marker.is_empty() {
            continue;
        }
        if let Some(pos) = text.find(marker.as_str()) {
            let end = pos + marker.len();
            cut = Some(cut.map_or(end, |c| c.min(end)));
        }
    }
    match cut {
        Some(end) => text[..end].to_string(),
        None => text.to_string(),
    }
}

/// Fixed-length embedding. All providers in one run must agree on `dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub dim: usize,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        let dim = values.len();
        EmbeddingVector { values, dim }
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f32 {
        if self.dim != other.dim {
            return 0.0;
        }
        let mut dot = 0.0f32;
        let mut norm_a = 0.0f32;
        let mut norm_b = 0.0f32;
        for (a, b) in self.values.iter().zip(&other.values) {
            dot += a * b;
            norm_a += a * a;
            norm_b += b * b;
        }
        if norm_a == 0.0 || norm_b == 0.0 {
            return 0.0;
        }
        dot / (norm_a.sqrt() * norm_b.sqrt())
    }
}

/// The generator behind the central agent, the router, the distiller and
/// the reflector. One blocking call per completion.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    /// One vector per input text, order-preserving.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
    fn dim(&self) -> usize;
}

pub type ChatHandle = Arc<dyn ChatProvider>;
pub type EmbeddingHandle = Arc<dyn EmbeddingProvider>;

pub(crate) fn validate_embed_input(texts: &[String]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::InvalidRequest("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(ProviderError::InvalidRequest(format!(
            "text at index {i} is empty"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_requires_system_first() {
        let bad = ChatRequest::new(vec![Message::user("hi")]);
        assert!(bad.validate().is_err());
        let good = ChatRequest::new(vec![Message::system("s"), Message::user("hi")]);
        assert!(good.validate().is_ok());
    }

    #[test]
    fn empty_messages_is_a_precondition_error() {
        let bad = ChatRequest::new(vec![]);
        assert!(matches!(
            bad.validate(),
            Err(ProviderError::InvalidRequest(_))
        ));
    }

    #[test]
    fn stop_markers_keep_earliest_marker_inclusive() {
        let markers = vec!["</help>".to_string(), "</answer>".to_string()];
        assert_eq!(
            apply_stop_markers("a</answer>b</help>c", &markers),
            "a</answer>"
        );
        assert_eq!(apply_stop_markers("plain", &markers), "plain");
    }

    #[test]
    fn cosine_of_identical_vectors_is_one() {
        let v = EmbeddingVector::new(vec![0.5, 0.5, 0.0]);
        assert!((v.cosine(&v) - 1.0).abs() < 1e-6);
    }
}
