//! Live chat-completion and embedding clients over a chat-completion-style
//! HTTP protocol: messages array in, first-choice text out. Transport
//! failures are retried 3 times with exponential backoff starting at 1s;
//! anything else surfaces immediately. API keys come from the environment
//! and never appear in trace files.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    validate_embed_input, ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector,
    ProviderError, Role,
};

const TRANSPORT_ATTEMPTS: u32 = 3;
const BACKOFF_START: Duration = Duration::from_secs(1);

#[derive(Debug, Clone)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout: Duration,
    pub temperature: Option<f64>,
}

impl HttpProviderConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpProviderConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            timeout: Duration::from_secs(120),
            temperature: None,
        }
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(value) if !value.is_empty() => Ok(Some(value)),
                _ => Err(ProviderError::Config(format!(
                    "environment variable {var} is not set"
                ))),
            },
        }
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .new_agent()
    }
}

fn post_json(
    config: &HttpProviderConfig,
    body: &serde_json::Value,
) -> Result<serde_json::Value, ProviderError> {
    let key = config.api_key()?;
    let agent = config.agent();
    let mut backoff = BACKOFF_START;
    let mut last_err = String::new();
    for attempt in 0..TRANSPORT_ATTEMPTS {
        if attempt > 0 {
            std::thread::sleep(backoff);
            backoff *= 2;
        }
        let mut request = agent.post(&config.endpoint);
        if let Some(key) = &key {
            request = request.header("authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body) {
            Ok(mut response) => {
                return response
                    .body_mut()
                    .read_json::<serde_json::Value>()
                    .map_err(|e| ProviderError::Transport(format!("bad response body: {e}")));
            }
            Err(ureq::Error::StatusCode(code)) if (400..500).contains(&code) => {
                // Client errors are not retryable; treat as refusal.
                return Err(ProviderError::Refusal(format!("endpoint returned {code}")));
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(ProviderError::Transport(format!(
        "{} attempts failed, last: {last_err}",
        TRANSPORT_ATTEMPTS
    )))
}

pub struct HttpChatProvider {
    config: HttpProviderConfig,
}

impl HttpChatProvider {
    pub fn new(config: HttpProviderConfig) -> Self {
        HttpChatProvider { config }
    }
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let messages: Vec<serde_json::Value> = request
            .messages
            .iter()
            .map(|m| {
                json!({
                    "role": match m.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    },
                    "content": m.content,
                })
            })
            .collect();
        let mut body = json!({
            "model": self.config.model,
            "messages": messages,
            "max_tokens": request.max_output,
        });
        if !request.stop_markers.is_empty() {
            body["stop"] = json!(request.stop_markers);
        }
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        let value = post_json(&self.config, &body)?;
        let parsed: ChatResponse = serde_json::from_value(value)
            .map_err(|e| ProviderError::Transport(format!("unexpected response shape: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Refusal("response has no choices".into()))?;
        Ok(choice.message.content)
    }
}

pub struct HttpEmbeddingProvider {
    config: HttpProviderConfig,
    dim: usize,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

impl HttpEmbeddingProvider {
    /// `dim` is the run-wide embedding dimension; a response with any
    /// other width is a fatal configuration error.
    pub fn new(config: HttpProviderConfig, dim: usize) -> Self {
        HttpEmbeddingProvider { config, dim }
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        validate_embed_input(texts)?;
        let body = json!({
            "model": self.config.model,
            "input": texts,
        });
        let value = post_json(&self.config, &body)?;
        let parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| ProviderError::Transport(format!("unexpected response shape: {e}")))?;
        if parsed.data.len() != texts.len() {
            return Err(ProviderError::Transport(format!(
                "asked for {} embeddings, got {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        let mut out = Vec::with_capacity(parsed.data.len());
        for datum in parsed.data {
            if datum.embedding.len() != self.dim {
                return Err(ProviderError::Config(format!(
                    "embedding dimension {} does not match configured {}",
                    datum.embedding.len(),
                    self.dim
                )));
            }
            out.push(EmbeddingVector::new(datum.embedding));
        }
        Ok(out)
    }

    fn dim(&self) -> usize {
        self.dim
    }
}
