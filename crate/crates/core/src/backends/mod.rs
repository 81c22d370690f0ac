//! Concrete tools behind the registry: web search (fixture corpus or live
//! search API + page reader), sandboxed code execution, and knowledge-base
//! retrieval. The router only sees the [`ToolBackend`] trait.

pub mod code_exec;
pub mod fixture;
pub mod kb_tool;
pub mod live;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::RawKnowledgeRecord;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("corpus load error: {0}")]
    CorpusLoad(String),
    #[error("sandbox unavailable: {0}")]
    SandboxUnavailable(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("backend failure: {0}")]
    Other(String),
}

/// One ranked search result.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub url: String,
    pub title: String,
    pub snippet: String,
    /// 1-based, strictly increasing within a result list.
    pub rank: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    Error,
    Timeout,
}

/// Outcome of one sandboxed execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub stdout: String,
    pub stderr: String,
    pub exit_status: ExecStatus,
    pub wall_time: Duration,
}

/// What a tool invocation hands back to the router: the raw records to
/// distill and ingest, plus operational notes (degraded fetches etc.).
#[derive(Debug, Default)]
pub struct BackendResponse {
    pub records: Vec<RawKnowledgeRecord>,
    pub notes: Vec<String>,
}

/// A dispatchable tool. `argument` is a free-text query or a code
/// snippet, per the tool's registered input kind.
pub trait ToolBackend: Send + Sync {
    fn invoke(
        &self,
        argument: &str,
        task_id: &str,
        help_index: u32,
    ) -> Result<BackendResponse, BackendError>;
}

pub use code_exec::{code_exec, CodeExecBackend, ExecLimits};
pub use fixture::{FixtureCorpus, FixtureSearchBackend};
pub use kb_tool::KbRetrieveBackend;
pub use live::{LiveSearchBackend, LiveSearchConfig};
