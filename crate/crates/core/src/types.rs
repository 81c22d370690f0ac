//! Shared domain vocabulary: tasks, trajectories, tool metadata, raw
//! knowledge records, experience state, and the run configuration.
//!
//! Every type here is an immutable value after construction and has a
//! canonical lower_snake_case JSON form used by trace files and
//! persistence.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Violation of a structural invariant on a domain value.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum InvariantError {
    #[error("task id must be non-empty")]
    EmptyTaskId,
    #[error("task {0}: query must be non-empty")]
    EmptyQuery(String),
    #[error("duplicate task id in batch: {0}")]
    DuplicateTaskId(String),
    #[error("trajectory {task_id} attempt {attempt}: {detail}")]
    Trajectory {
        task_id: String,
        attempt: u32,
        detail: String,
    },
    #[error("experience state: {0}")]
    Experience(String),
    #[error("run config: {0}")]
    Config(String),
    #[error("context leakage: lesson {title:?} is derived from the current task {task_id}")]
    Leakage { title: String, task_id: String },
}

/// One knowledge-discovery problem: a query, its standing instruction,
/// and an optional gold answer for grading and verified reflection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub instruction: String,
    #[serde(default)]
    pub gold_answer: Option<String>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Task {
    pub fn new(id: impl Into<String>, query: impl Into<String>) -> Self {
        Task {
            id: id.into(),
            query: query.into(),
            instruction: String::new(),
            gold_answer: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.id.is_empty() {
            return Err(InvariantError::EmptyTaskId);
        }
        if self.query.trim().is_empty() {
            return Err(InvariantError::EmptyQuery(self.id.clone()));
        }
        Ok(())
    }
}

/// Validates a batch: every task well-formed, ids unique.
pub fn validate_batch(tasks: &[Task]) -> Result<(), InvariantError> {
    let mut seen = std::collections::BTreeSet::new();
    for task in tasks {
        task.validate()?;
        if !seen.insert(task.id.as_str()) {
            return Err(InvariantError::DuplicateTaskId(task.id.clone()));
        }
    }
    Ok(())
}

/// One step of a solution trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryEvent {
    /// An autonomous reasoning step.
    Reasoning { text: String },
    /// A natural-language statement of an unmet information need.
    HelpRequest { text: String, seq_index: u32 },
    /// Distilled knowledge returned for the preceding help request, with
    /// the ids of the raw records that support it.
    Knowledge {
        distilled_text: String,
        provenance: Vec<String>,
    },
    /// The final answer; at most one per trajectory, always last.
    FinalAnswer { text: String },
}

/// Ordered event sequence for one attempt at a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub events: Vec<TrajectoryEvent>,
    /// 1-based retry counter.
    pub attempt: u32,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>, attempt: u32) -> Self {
        Trajectory {
            task_id: task_id.into(),
            events: Vec::new(),
            attempt,
        }
    }

    pub fn final_answer(&self) -> Option<&str> {
        match self.events.last() {
            Some(TrajectoryEvent::FinalAnswer { text }) => Some(text),
            _ => None,
        }
    }

    /// Checks the structural invariants:
    /// - at most one FinalAnswer, and only as the last event, non-empty;
    /// - each Knowledge event answers the nearest prior HelpRequest with
    ///   no other Knowledge event in between;
    /// - Knowledge never appears without a prior HelpRequest;
    /// - help seq_index values strictly increase.
    pub fn validate(&self) -> Result<(), InvariantError> {
        let fail = |detail: String| InvariantError::Trajectory {
            task_id: self.task_id.clone(),
            attempt: self.attempt,
            detail,
        };
        if self.attempt == 0 {
            return Err(fail("attempt counter must be >= 1".into()));
        }
        let mut last_seq: Option<u32> = None;
        // Help requests not yet answered by a Knowledge event.
        let mut open_help = 0usize;
        for (i, event) in self.events.iter().enumerate() {
            match event {
                TrajectoryEvent::FinalAnswer { text } => {
                    if text.trim().is_empty() {
                        return Err(fail("final answer text is empty".into()));
                    }
                    if i + 1 != self.events.len() {
                        return Err(fail("final answer is not the last event".into()));
                    }
                }
                TrajectoryEvent::HelpRequest { seq_index, .. } => {
                    if let Some(prev) = last_seq {
                        if *seq_index <= prev {
                            return Err(fail(format!(
                                "help seq_index {seq_index} not greater than {prev}"
                            )));
                        }
                    }
                    last_seq = Some(*seq_index);
                    open_help += 1;
                }
                TrajectoryEvent::Knowledge { .. } => {
                    if open_help == 0 {
                        return Err(fail(format!(
                            "knowledge event at index {i} has no open help request"
                        )));
                    }
                    open_help -= 1;
                }
                TrajectoryEvent::Reasoning { .. } => {}
            }
        }
        Ok(())
    }
}

/// What kind of argument a tool expects from the router.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolInputKind {
    FreeTextQuery,
    CodeSnippet,
}

/// A tool as the router sees it: a name and the description it selects on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolDescription {
    pub name: String,
    pub description: String,
    pub input_kind: ToolInputKind,
}

impl ToolDescription {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        input_kind: ToolInputKind,
    ) -> Self {
        ToolDescription {
            name: name.into(),
            description: description.into(),
            input_kind,
        }
    }
}

/// A concrete call the router emits for a help request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    /// Search query string or code snippet, per the tool's input kind.
    pub argument: String,
    /// seq_index of the help request this call serves.
    pub origin_help_index: u32,
}

/// Where a raw record came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordSource {
    Url { url: String },
    CodeExecution { label: String },
    KbChunk { chunk_id: String },
}

impl RecordSource {
    /// Stable canonical form fed to the record hash.
    fn canonical(&self) -> String {
        match self {
            RecordSource::Url { url } => format!("url:{url}"),
            RecordSource::CodeExecution { label } => format!("code_execution:{label}"),
            RecordSource::KbChunk { chunk_id } => format!("kb_chunk:{chunk_id}"),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RecordSource::Url { .. } => "url",
            RecordSource::CodeExecution { .. } => "code_execution",
            RecordSource::KbChunk { .. } => "kb_chunk",
        }
    }
}

impl fmt::Display for RecordSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

/// Content-derived id for a raw record: SHA-256 over the canonical source
/// form and the full content, hex-encoded. Identical (source, content)
/// pairs yield identical ids in any process on any platform; persistence
/// files depend on this exact construction.
pub fn record_id(source: &RecordSource, content: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"record/v1\x00");
    hasher.update(source.canonical().as_bytes());
    hasher.update(b"\x00");
    hasher.update(content.as_bytes());
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// The full, unfiltered result of one tool interaction — an entire
/// fetched page, a complete execution output — before any distillation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawKnowledgeRecord {
    pub record_id: String,
    pub source: RecordSource,
    pub content: String,
    /// Unix seconds; excluded from the record id.
    pub fetched_at: u64,
    pub task_id: String,
    pub help_index: u32,
}

impl RawKnowledgeRecord {
    pub fn new(
        source: RecordSource,
        content: impl Into<String>,
        task_id: impl Into<String>,
        help_index: u32,
    ) -> Self {
        let content = content.into();
        RawKnowledgeRecord {
            record_id: record_id(&source, &content),
            source,
            content,
            fetched_at: unix_now(),
            task_id: task_id.into(),
            help_index,
        }
    }
}

pub(crate) fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// One distilled, titled lesson inside the experience state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lesson {
    pub title: String,
    pub body: String,
    /// Task ids whose verified reflection produced or reinforced this
    /// lesson. The leakage guard keys on this list.
    pub derived_from: Vec<String>,
    /// Experience version at which the lesson was last emitted; drives
    /// least-recently-reinforced eviction.
    pub reinforced_at_version: u32,
}

/// Versioned, ordered, capped set of lessons rendered into task contexts.
/// Version 0 is always empty; verified reflection is the only writer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperienceState {
    pub version: u32,
    pub lessons: Vec<Lesson>,
}

impl ExperienceState {
    pub fn initial() -> Self {
        ExperienceState {
            version: 0,
            lessons: Vec::new(),
        }
    }

    pub fn validate(&self, body_cap: usize) -> Result<(), InvariantError> {
        if self.version == 0 && !self.lessons.is_empty() {
            return Err(InvariantError::Experience(
                "version 0 must have no lessons".into(),
            ));
        }
        for lesson in &self.lessons {
            if lesson.body.chars().count() > body_cap {
                return Err(InvariantError::Experience(format!(
                    "lesson {:?} body exceeds the {body_cap}-character cap",
                    lesson.title
                )));
            }
            if lesson.derived_from.is_empty() {
                return Err(InvariantError::Experience(format!(
                    "lesson {:?} has no derived_from audit trail",
                    lesson.title
                )));
            }
        }
        Ok(())
    }
}

impl Default for ExperienceState {
    fn default() -> Self {
        Self::initial()
    }
}

/// Ablation switches mirroring the engine's removable components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// Gold-free post-answer critique; UNCERTAIN triggers a retry.
    pub self_reflection: bool,
    /// Gold-aware reflection that evolves the experience state.
    pub verified_reflection: bool,
    /// Knowledge-base accumulation exposed as a routable kb_retrieve tool.
    pub in_house_tool: bool,
    /// false = no router agent; tool descriptions go in-context and the
    /// model emits direct `<tool name="…">…</tool>` calls.
    pub router: bool,
    /// true forces every other flag to its off-equivalent: reflections and
    /// in-house tool off, router on.
    pub minimal_only: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            self_reflection: true,
            verified_reflection: true,
            in_house_tool: true,
            router: true,
            minimal_only: false,
        }
    }
}

/// Everything a run needs beyond the task list. Defaults follow the
/// engine's documented choices; `normalized()` applies the minimal_only
/// forcing rule before use. Fields omitted from a serialized form take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Help-request budget per task, shared across retry attempts.
    pub max_help_requests: u32,
    /// Extra attempts allowed after an UNCERTAIN self-reflection.
    pub max_retries: u32,
    #[serde(default)]
    pub ablation: AblationFlags,
    pub warmup_passes: u32,
    /// Help budget during warm-up simulations; None = same as solving.
    #[serde(default)]
    pub warmup_max_help_requests: Option<u32>,
    /// Whether warm-up simulations see the experience block.
    #[serde(default)]
    pub warmup_uses_experience: bool,
    pub retrieval_top_k: usize,
    /// Whitespace-token budget for each distilled knowledge payload.
    pub distill_token_budget: usize,
    pub experience_lesson_cap: usize,
    /// Character cap on each lesson body.
    pub lesson_body_cap: usize,
    /// Run verified reflection on correct answers too.
    #[serde(default = "default_true")]
    pub reflect_on_success: bool,
    /// Consecutive model turns with neither help nor answer before the
    /// attempt is abandoned.
    pub no_action_limit: u32,
    /// Tool-call fan-out cap per help request.
    pub fanout_cap: usize,
    /// Search hits fetched per web_search call.
    pub search_top_n: usize,
    /// Sandbox wall-time limit for code execution, milliseconds.
    pub exec_wall_time_ms: u64,
    /// Sandbox stdout/stderr truncation, bytes.
    pub exec_output_bytes: usize,
    /// Solve tasks concurrently; valid only with verified reflection off.
    #[serde(default)]
    pub parallel_batch: bool,
}

fn default_true() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            max_help_requests: 10,
            max_retries: 2,
            ablation: AblationFlags::default(),
            warmup_passes: 3,
            warmup_max_help_requests: None,
            warmup_uses_experience: false,
            retrieval_top_k: 5,
            distill_token_budget: 1200,
            experience_lesson_cap: 12,
            lesson_body_cap: 400,
            reflect_on_success: true,
            no_action_limit: 3,
            fanout_cap: 8,
            search_top_n: 5,
            exec_wall_time_ms: 5_000,
            exec_output_bytes: 64 * 1024,
            parallel_batch: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.max_help_requests < 1 {
            return Err(InvariantError::Config(
                "max_help_requests must be >= 1".into(),
            ));
        }
        if self.retrieval_top_k < 1 {
            return Err(InvariantError::Config(
                "retrieval_top_k must be >= 1".into(),
            ));
        }
        if self.no_action_limit < 1 {
            return Err(InvariantError::Config(
                "no_action_limit must be >= 1".into(),
            ));
        }
        if self.fanout_cap < 1 {
            return Err(InvariantError::Config("fanout_cap must be >= 1".into()));
        }
        if self.search_top_n < 1 {
            return Err(InvariantError::Config("search_top_n must be >= 1".into()));
        }
        if self.parallel_batch && self.normalized_ablation().verified_reflection {
            return Err(InvariantError::Config(
                "parallel_batch requires verified_reflection off (experience evolution is order-dependent)".into(),
            ));
        }
        Ok(())
    }

    /// Ablation flags with the minimal_only forcing rule applied.
    pub fn normalized_ablation(&self) -> AblationFlags {
        if self.ablation.minimal_only {
            AblationFlags {
                self_reflection: false,
                verified_reflection: false,
                in_house_tool: false,
                router: true,
                minimal_only: true,
            }
        } else {
            self.ablation
        }
    }

    /// Copy with ablation normalized, ready to hand to the engine.
    pub fn normalized(&self) -> RunConfig {
        let mut config = self.clone();
        config.ablation = self.normalized_ablation();
        config
    }

    pub fn warmup_help_budget(&self) -> u32 {
        self.warmup_max_help_requests
            .unwrap_or(self.max_help_requests)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_id_is_stable_across_processes() {
        // Frozen expected digest; changing the hash construction breaks
        // every persisted store, so this must never drift.
        let source = RecordSource::Url {
            url: "fixture://p1".into(),
        };
        let id = record_id(&source, "vessel hudson yards copper");
        assert_eq!(
            id,
            "ba8a25b3ac836c51557f8b9db4eff364f0de1aab57a21e2526c0b8597b04ad4c"
        );
        assert_eq!(id, record_id(&source, "vessel hudson yards copper"));
    }

    #[test]
    fn record_id_distinguishes_source_kinds() {
        let a = record_id(&RecordSource::Url { url: "x".into() }, "same content");
        let b = record_id(
            &RecordSource::CodeExecution { label: "x".into() },
            "same content",
        );
        assert_ne!(a, b);
    }

    #[test]
    fn trajectory_rejects_misplaced_final_answer() {
        let mut t = Trajectory::new("t1", 1);
        t.events
            .push(TrajectoryEvent::FinalAnswer { text: "42".into() });
        t.events.push(TrajectoryEvent::Reasoning {
            text: "after".into(),
        });
        assert!(t.validate().is_err());
    }

    #[test]
    fn trajectory_rejects_empty_final_answer() {
        let mut t = Trajectory::new("t1", 1);
        t.events
            .push(TrajectoryEvent::FinalAnswer { text: "  ".into() });
        assert!(t.validate().is_err());
    }

    #[test]
    fn trajectory_rejects_orphan_knowledge() {
        let mut t = Trajectory::new("t1", 1);
        t.events.push(TrajectoryEvent::Knowledge {
            distilled_text: "stray".into(),
            provenance: vec![],
        });
        let err = t.validate().unwrap_err();
        assert!(matches!(err, InvariantError::Trajectory { .. }));
    }

    #[test]
    fn trajectory_requires_increasing_help_indices() {
        let mut t = Trajectory::new("t1", 1);
        t.events.push(TrajectoryEvent::HelpRequest {
            text: "a".into(),
            seq_index: 2,
        });
        t.events.push(TrajectoryEvent::Knowledge {
            distilled_text: "k".into(),
            provenance: vec![],
        });
        t.events.push(TrajectoryEvent::HelpRequest {
            text: "b".into(),
            seq_index: 2,
        });
        assert!(t.validate().is_err());
    }

    #[test]
    fn well_formed_trajectory_passes() {
        let mut t = Trajectory::new("t1", 1);
        t.events
            .push(TrajectoryEvent::Reasoning { text: "hm".into() });
        t.events.push(TrajectoryEvent::HelpRequest {
            text: "need".into(),
            seq_index: 1,
        });
        t.events.push(TrajectoryEvent::Knowledge {
            distilled_text: "fact".into(),
            provenance: vec!["r1".into()],
        });
        t.events
            .push(TrajectoryEvent::FinalAnswer { text: "ok".into() });
        assert!(t.validate().is_ok());
        assert_eq!(t.final_answer(), Some("ok"));
    }

    #[test]
    fn batch_validation_catches_duplicates() {
        let tasks = vec![Task::new("a", "q"), Task::new("a", "q2")];
        assert_eq!(
            validate_batch(&tasks),
            Err(InvariantError::DuplicateTaskId("a".into()))
        );
    }

    #[test]
    fn minimal_only_forces_flags_off() {
        let config = RunConfig {
            ablation: AblationFlags {
                self_reflection: true,
                verified_reflection: true,
                in_house_tool: true,
                router: false,
                minimal_only: true,
            },
            ..RunConfig::default()
        };
        let normalized = config.normalized_ablation();
        assert!(!normalized.self_reflection);
        assert!(!normalized.verified_reflection);
        assert!(!normalized.in_house_tool);
        assert!(normalized.router);
        assert!(normalized.minimal_only);
    }

    #[test]
    fn parallel_batch_requires_verified_reflection_off() {
        let mut config = RunConfig {
            parallel_batch: true,
            ..RunConfig::default()
        };
        assert!(config.validate().is_err());
        config.ablation.verified_reflection = false;
        assert!(config.validate().is_ok());
    }

    #[test]
    fn experience_version_zero_is_empty() {
        let state = ExperienceState {
            version: 0,
            lessons: vec![Lesson {
                title: "t".into(),
                body: "b".into(),
                derived_from: vec!["x".into()],
                reinforced_at_version: 0,
            }],
        };
        assert!(state.validate(400).is_err());
        assert!(ExperienceState::initial().validate(400).is_ok());
    }

    #[test]
    fn event_json_uses_snake_case_tags() {
        let event = TrajectoryEvent::HelpRequest {
            text: "need".into(),
            seq_index: 3,
        };
        let json = serde_json::to_string(&event).unwrap();
        assert!(json.contains("\"kind\":\"help_request\""));
        assert!(json.contains("\"seq_index\":3"));
    }
}
