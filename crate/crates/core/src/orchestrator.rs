//! The central agent loop: build the task context, complete, parse the
//! segment, dispatch help requests through the router, and finish with an
//! answer — then reflect, maybe retry, and (batch-level) evolve the
//! experience state. Budgets bound everything: help requests per task,
//! retries per task, and consecutive no-action rounds per attempt.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::kb_tool::{KbRetrieveBackend, KB_RETRIEVE_TOOL};
use crate::kb::{KbHandle, WarmupSummary};
use crate::provider::{ChatHandle, ChatRequest, Message, ProviderError};
use crate::reflection::{self, ReflectVerdict, SelfReflection};
use crate::router::{execute, Distiller, Router, RouterError, ToolRegistry};
use crate::trace::{LessonAudit, TracePayload, TraceRecord, TraceSink};
use crate::types::{
    unix_now, validate_batch, ExperienceState, InvariantError, RunConfig, Task, ToolCall,
    ToolInputKind, Trajectory, TrajectoryEvent,
};

/// Section headers of the rendered context. The deterministic reference
/// policy keys on these, so they are part of the engine's stable surface.
pub const SECTION_EXPERIENCE: &str = "## Prior experience";
pub const SECTION_SELF_REFLECTION: &str = "## Self-reflection notes";
pub const SECTION_TASK: &str = "## Task";
pub const SECTION_PROGRESS: &str = "## Progress so far";
pub const SECTION_TOOLS: &str = "## Available tools";

/// Marker line identifying a solving prompt (vs reflection prompts).
pub const SOLVE_PROMPT_MARKER: &str = "solving a knowledge-discovery task";

const BASE_SYSTEM_PROMPT: &str = "You are a research agent solving a knowledge-discovery task. \
Reason step by step with what you already know. When you hit a knowledge gap, state the unmet \
need inside <help>...</help> and stop; distilled knowledge will appear in your progress log. \
When the evidence is sufficient, give only the final answer inside <answer>...</answer>.";

const TOOL_PROTOCOL_PROMPT: &str = "Instead of help requests, invoke a tool directly by writing \
<tool name=\"NAME\">argument</tool> with one of the tools listed below.";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error("provider error: {0}")]
    Provider(#[from] ProviderError),
    #[error("knowledge base error: {0}")]
    Kb(#[from] crate::kb::KbError),
    #[error("router error: {0}")]
    Router(#[from] RouterError),
    #[error("stage barrier violated: {0}")]
    StageBarrier(String),
}

/// The dynamically constructed input for one completion: instruction,
/// experience lessons, optional retry critique, the query, and the
/// progress log of the current attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptContext {
    pub task_id: String,
    pub system_instruction: String,
    pub experience_block: String,
    pub self_reflection_block: Option<String>,
    pub query_block: String,
    pub history_block: String,
    pub experience_version: u32,
    pub lesson_audits: Vec<LessonAudit>,
}

impl PromptContext {
    /// The user-message half of the context.
    pub fn render_user(&self) -> String {
        let mut out = String::new();
        if !self.experience_block.is_empty() {
            out.push_str(SECTION_EXPERIENCE);
            out.push('\n');
            out.push_str(&self.experience_block);
            out.push('\n');
        }
        if let Some(reflection) = &self.self_reflection_block {
            out.push_str(SECTION_SELF_REFLECTION);
            out.push('\n');
            out.push_str(reflection);
            out.push('\n');
        }
        out.push_str(SECTION_TASK);
        out.push('\n');
        out.push_str(&self.query_block);
        out.push('\n');
        if !self.history_block.is_empty() {
            out.push_str(SECTION_PROGRESS);
            out.push('\n');
            out.push_str(&self.history_block);
        }
        out
    }

    pub fn render_full(&self) -> String {
        format!("{}\n{}", self.system_instruction, self.render_user())
    }

    pub fn to_request(&self, max_output: usize) -> ChatRequest {
        let mut request = ChatRequest::new(vec![
            Message::system(self.system_instruction.clone()),
            Message::user(self.render_user()),
        ]);
        request.max_output = max_output;
        request
    }
}

/// Knobs for context construction beyond the task itself.
#[derive(Debug, Clone, Default)]
pub struct ContextOptions {
    /// Minimal workflow: render no experience block.
    pub minimal: bool,
    /// In-context tool descriptions (router ablation off).
    pub tools_block: Option<String>,
}

/// Builds the context for the next completion of `history.attempt`.
/// Fails fast if any rendered lesson was derived from this very task.
pub fn build_context(
    task: &Task,
    experience: &ExperienceState,
    self_reflections: &[String],
    history: &Trajectory,
    options: &ContextOptions,
) -> Result<PromptContext, InvariantError> {
    let mut experience_block = String::new();
    let mut lesson_audits = Vec::new();
    if !options.minimal {
        for lesson in &experience.lessons {
            if lesson.derived_from.iter().any(|id| id == &task.id) {
                return Err(InvariantError::Leakage {
                    title: lesson.title.clone(),
                    task_id: task.id.clone(),
                });
            }
            experience_block.push_str(&format!("- {}: {}\n", lesson.title, lesson.body));
            lesson_audits.push(LessonAudit {
                title: lesson.title.clone(),
                derived_from: lesson.derived_from.clone(),
            });
        }
    }

    let self_reflection_block = if history.attempt > 1 && !self_reflections.is_empty() {
        let mut block = String::new();
        for (i, critique) in self_reflections.iter().enumerate() {
            block.push_str(&format!("Attempt {} critique: {}\n", i + 1, critique));
        }
        Some(block)
    } else {
        None
    };

    let mut system_instruction = BASE_SYSTEM_PROMPT.to_string();
    if !task.instruction.trim().is_empty() {
        system_instruction.push(' ');
        system_instruction.push_str(task.instruction.trim());
    }
    if let Some(tools) = &options.tools_block {
        system_instruction.push('\n');
        system_instruction.push_str(TOOL_PROTOCOL_PROMPT);
        system_instruction.push('\n');
        system_instruction.push_str(SECTION_TOOLS);
        system_instruction.push('\n');
        system_instruction.push_str(tools);
    }

    let mut history_block = String::new();
    for event in &history.events {
        match event {
            TrajectoryEvent::Reasoning { text } => {
                history_block.push_str(&format!("Thought: {text}\n"))
            }
            TrajectoryEvent::HelpRequest { text, .. } => {
                history_block.push_str(&format!("Help: {text}\n"))
            }
            TrajectoryEvent::Knowledge { distilled_text, .. } => {
                history_block.push_str(&format!("Knowledge: {distilled_text}\n"))
            }
            TrajectoryEvent::FinalAnswer { text } => {
                history_block.push_str(&format!("Answer: {text}\n"))
            }
        }
    }

    Ok(PromptContext {
        task_id: task.id.clone(),
        system_instruction,
        experience_block,
        self_reflection_block,
        query_block: task.query.clone(),
        history_block,
        experience_version: experience.version,
        lesson_audits,
    })
}

/// What a model segment asks for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SegmentAction {
    Help(String),
    Answer(String),
    None,
}

/// First complete, non-empty `open…close` block at or after the start.
fn first_complete_block(text: &str, open: &str, close: &str) -> Option<(usize, String)> {
    let mut from = 0;
    while let Some(rel) = text[from..].find(open) {
        let open_pos = from + rel;
        let content_start = open_pos + open.len();
        {
            let rel_close = text[content_start..].find(close)?;
            let content = text[content_start..content_start + rel_close].trim();
            if !content.is_empty() {
                return Some((open_pos, content.to_string()));
            }
            from = content_start + rel_close + close.len();
        }
    }
    None
}

/// Total parser for model output: extracts the earliest complete
/// `<help>…</help>` or `<answer>…</answer>` block. Text before the block
/// is the leading reasoning; unterminated or empty blocks leave the whole
/// text as reasoning with no action.
pub fn parse_segment(model_output: &str) -> (String, SegmentAction) {
    let help = first_complete_block(model_output, "<help>", "</help>");
    let answer = first_complete_block(model_output, "<answer>", "</answer>");
    let (pos, action) = match (help, answer) {
        (Some((hp, h)), Some((ap, a))) => {
            if hp < ap {
                (hp, SegmentAction::Help(h))
            } else {
                (ap, SegmentAction::Answer(a))
            }
        }
        (Some((hp, h)), None) => (hp, SegmentAction::Help(h)),
        (None, Some((ap, a))) => (ap, SegmentAction::Answer(a)),
        (None, None) => return (model_output.trim().to_string(), SegmentAction::None),
    };
    (model_output[..pos].trim().to_string(), action)
}

/// Parses the earliest complete `<tool name="…">argument</tool>` block.
/// Returns (position, tool name, argument).
pub fn parse_tool_call(model_output: &str) -> Option<(usize, String, String)> {
    let mut from = 0;
    while let Some(rel) = model_output[from..].find("<tool ") {
        let open_pos = from + rel;
        let tag_rest = &model_output[open_pos..];
        let tag_end = tag_rest.find('>')?;
        let tag = &tag_rest[..tag_end];
        let name = tag
            .find("name=\"")
            .and_then(|n| {
                let start = n + 6;
                tag[start..]
                    .find('"')
                    .map(|e| tag[start..start + e].to_string())
            })
            .unwrap_or_default();
        let content_start = open_pos + tag_end + 1;
        let rel_close = model_output[content_start..].find("</tool>")?;
        let argument = model_output[content_start..content_start + rel_close].trim();
        if !name.is_empty() && !argument.is_empty() {
            return Some((open_pos, name, argument.to_string()));
        }
        from = content_start + rel_close + "</tool>".len();
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Answered,
    BudgetExhausted,
    ProviderError,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Answered => "answered",
            SolveStatus::BudgetExhausted => "budget_exhausted",
            SolveStatus::ProviderError => "provider_error",
        }
    }
}

/// Result of solving one task: one trajectory per attempt plus totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub task_id: String,
    pub final_answer: Option<String>,
    pub attempts: u32,
    pub trajectories: Vec<Trajectory>,
    pub help_requests_used: u32,
    pub status: SolveStatus,
}

impl SolveReport {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.status == SolveStatus::Answered && self.final_answer.is_none() {
            return Err(InvariantError::Trajectory {
                task_id: self.task_id.clone(),
                attempt: self.attempts,
                detail: "answered report without a final answer".into(),
            });
        }
        if self.attempts as usize != self.trajectories.len() {
            return Err(InvariantError::Trajectory {
                task_id: self.task_id.clone(),
                attempt: self.attempts,
                detail: "attempt count does not match trajectory count".into(),
            });
        }
        for trajectory in &self.trajectories {
            trajectory.validate()?;
        }
        Ok(())
    }
}

/// Report plus engine-side bookkeeping that never enters the context.
#[derive(Debug)]
pub struct SolveOutput {
    pub report: SolveReport,
    pub last_context: Option<PromptContext>,
    pub self_reflections: Vec<SelfReflection>,
    pub fetched_record_ids: BTreeSet<String>,
    pub new_records: usize,
    pub dup_records: usize,
    next_seq: u64,
}

/// Everything a batch run produces.
#[derive(Debug)]
pub struct BatchOutput {
    pub reports: Vec<SolveReport>,
    /// Snapshot per experience version, v0 first.
    pub experience_timeline: Vec<ExperienceState>,
    pub warmup: Option<WarmupSummary>,
    pub dispatch_counts: BTreeMap<String, u64>,
}

struct SolveParams {
    max_help_requests: u32,
    max_retries: u32,
    self_reflection: bool,
    use_experience: bool,
    /// Task id used in trace records; warm-up simulations write to
    /// `warmup.p<pass>.<task>` so solve traces stay one file per task.
    trace_task_id: Option<String>,
}

/// The orchestration engine: providers, router, registry, knowledge base,
/// and trace sink wired to one run configuration.
pub struct Engine {
    config: RunConfig,
    chat: ChatHandle,
    router: Arc<dyn Router>,
    distiller: Arc<dyn Distiller>,
    registry: RwLock<ToolRegistry>,
    kb: KbHandle,
    trace: Arc<dyn TraceSink>,
    dispatch_counts: Mutex<BTreeMap<String, u64>>,
    warmed: AtomicBool,
}

impl Engine {
    pub fn new(
        config: RunConfig,
        chat: ChatHandle,
        router: Arc<dyn Router>,
        distiller: Arc<dyn Distiller>,
        registry: ToolRegistry,
        kb: KbHandle,
        trace: Arc<dyn TraceSink>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Engine {
            config: config.normalized(),
            chat,
            router,
            distiller,
            registry: RwLock::new(registry),
            kb,
            trace,
            dispatch_counts: Mutex::new(BTreeMap::new()),
            warmed: AtomicBool::new(false),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn kb(&self) -> KbHandle {
        Arc::clone(&self.kb)
    }

    pub fn chat(&self) -> ChatHandle {
        Arc::clone(&self.chat)
    }

    pub fn has_tool(&self, name: &str) -> bool {
        self.registry
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .contains(name)
    }

    pub fn dispatch_counts(&self) -> BTreeMap<String, u64> {
        self.dispatch_counts
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    fn count_dispatches(&self, calls: &[ToolCall]) {
        let mut counts = self
            .dispatch_counts
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        for call in calls {
            *counts.entry(call.tool.clone()).or_insert(0) += 1;
        }
    }

    fn emit(&self, task_id: &str, attempt: u32, seq: &mut u64, payload: TracePayload) {
        let record = TraceRecord {
            task_id: task_id.to_string(),
            attempt,
            seq: *seq,
            timestamp: unix_now(),
            payload,
        };
        *seq += 1;
        self.trace.write(&record);
    }

    fn context_options(&self) -> ContextOptions {
        let flags = self.config.ablation;
        let tools_block = if flags.router {
            None
        } else {
            let registry = self.registry.read().unwrap_or_else(|e| e.into_inner());
            Some(registry.describe())
        };
        ContextOptions {
            minimal: flags.minimal_only,
            tools_block,
        }
    }

    /// Two-stage barrier: simulate each task `warmup_passes` times with
    /// answers and reflections discarded, ingesting every raw record;
    /// only then does kb_retrieve become routable (when the in-house tool
    /// is enabled).
    pub fn warm_up(
        &self,
        tasks: &[Task],
        experience: &ExperienceState,
    ) -> Result<WarmupSummary, EngineError> {
        if self.has_tool(KB_RETRIEVE_TOOL) {
            return Err(EngineError::StageBarrier(
                "kb_retrieve is already registered; warm-up must precede it".into(),
            ));
        }
        let mut summary = WarmupSummary {
            passes: self.config.warmup_passes,
            ..WarmupSummary::default()
        };
        for pass in 0..self.config.warmup_passes {
            let mut pass_ids = BTreeSet::new();
            for task in tasks {
                summary.simulations += 1;
                let params = SolveParams {
                    max_help_requests: self.config.warmup_help_budget(),
                    max_retries: 0,
                    self_reflection: false,
                    use_experience: self.config.warmup_uses_experience,
                    trace_task_id: Some(format!("warmup.p{pass}.{}", task.id)),
                };
                match self.solve_with(task, experience, &params) {
                    Ok(output) => {
                        summary.new_records += output.new_records;
                        summary.dup_records += output.dup_records;
                        pass_ids.extend(output.fetched_record_ids);
                        if output.report.status == SolveStatus::ProviderError {
                            summary.failures += 1;
                            summary.notes.push(format!(
                                "pass {pass}: task {} ended with provider error",
                                task.id
                            ));
                        }
                    }
                    Err(e) => {
                        summary.failures += 1;
                        summary
                            .notes
                            .push(format!("pass {pass}: task {} failed: {e}", task.id));
                    }
                }
            }
            summary.per_pass_record_ids.push(pass_ids);
        }
        if self.config.ablation.in_house_tool {
            let mut registry = self.registry.write().unwrap_or_else(|e| e.into_inner());
            registry.register(
                crate::types::ToolDescription::new(
                    KB_RETRIEVE_TOOL,
                    "retrieve passages from the accumulated knowledge base of prior tool output",
                    ToolInputKind::FreeTextQuery,
                ),
                Arc::new(KbRetrieveBackend::new(
                    Arc::clone(&self.kb),
                    self.config.retrieval_top_k,
                )),
            )?;
        }
        self.warmed.store(true, Ordering::SeqCst);
        Ok(summary)
    }

    /// Solves one task under the run configuration, including the
    /// self-reflection retry cycle.
    pub fn solve_task(
        &self,
        task: &Task,
        experience: &ExperienceState,
    ) -> Result<SolveOutput, EngineError> {
        task.validate()?;
        let params = SolveParams {
            max_help_requests: self.config.max_help_requests,
            max_retries: self.config.max_retries,
            self_reflection: self.config.ablation.self_reflection,
            use_experience: true,
            trace_task_id: None,
        };
        self.solve_with(task, experience, &params)
    }

    fn solve_with(
        &self,
        task: &Task,
        experience: &ExperienceState,
        params: &SolveParams,
    ) -> Result<SolveOutput, EngineError> {
        let trace_id: &str = params.trace_task_id.as_deref().unwrap_or(&task.id);
        let options = self.context_options();
        let empty_experience = ExperienceState::initial();
        let experience = if params.use_experience {
            experience
        } else {
            &empty_experience
        };

        let mut seq: u64 = 0;
        let mut help_used: u32 = 0;
        let mut trajectories: Vec<Trajectory> = Vec::new();
        let mut critiques: Vec<String> = Vec::new();
        let mut reflections: Vec<SelfReflection> = Vec::new();
        let mut fetched_record_ids = BTreeSet::new();
        let mut new_records = 0usize;
        let mut dup_records = 0usize;
        let mut last_context: Option<PromptContext> = None;
        let mut status = SolveStatus::BudgetExhausted;
        let max_attempts = 1 + params.max_retries;

        'attempts: for attempt in 1..=max_attempts {
            let mut trajectory = Trajectory::new(&task.id, attempt);
            let mut consecutive_none: u32 = 0;

            'steps: loop {
                let context = build_context(task, experience, &critiques, &trajectory, &options)?;
                self.emit(
                    trace_id,
                    attempt,
                    &mut seq,
                    TracePayload::ContextRender {
                        rendered: context.render_full(),
                        experience_version: context.experience_version,
                        experience_lessons: context.lesson_audits.clone(),
                        self_reflection_present: context.self_reflection_block.is_some(),
                    },
                );
                let request = context.to_request(4096);
                last_context = Some(context);

                let output = match self.chat.complete(&request) {
                    Ok(text) => text,
                    Err(e) => {
                        status = SolveStatus::ProviderError;
                        self.emit(
                            trace_id,
                            attempt,
                            &mut seq,
                            TracePayload::Note {
                                text: format!("provider error: {e}"),
                            },
                        );
                        trajectories.push(trajectory);
                        break 'attempts;
                    }
                };

                let tool_mode = !self.config.ablation.router;
                let (reasoning, action) = parse_segment(&output);
                let tool_parse = if tool_mode {
                    parse_tool_call(&output)
                } else {
                    None
                };

                // In tool mode the earliest block wins between an answer
                // and a direct tool call.
                enum Step {
                    Help(String),
                    Tool(String, String),
                    Answer(String),
                    None,
                }
                let (reasoning, step) = match (&action, tool_parse) {
                    (SegmentAction::Answer(answer), Some((tool_pos, name, arg))) => {
                        let answer_pos = output.find("<answer>").unwrap_or(usize::MAX);
                        if tool_pos < answer_pos {
                            (output[..tool_pos].trim().to_string(), Step::Tool(name, arg))
                        } else {
                            (reasoning, Step::Answer(answer.clone()))
                        }
                    }
                    (_, Some((tool_pos, name, arg))) => {
                        (output[..tool_pos].trim().to_string(), Step::Tool(name, arg))
                    }
                    (SegmentAction::Answer(answer), None) => {
                        (reasoning, Step::Answer(answer.clone()))
                    }
                    (SegmentAction::Help(help), None) => (reasoning, Step::Help(help.clone())),
                    (SegmentAction::None, None) => (reasoning, Step::None),
                };

                if !reasoning.is_empty() {
                    let event = TrajectoryEvent::Reasoning { text: reasoning };
                    self.emit(
                        trace_id,
                        attempt,
                        &mut seq,
                        TracePayload::Event {
                            event: event.clone(),
                        },
                    );
                    trajectory.events.push(event);
                }

                match step {
                    Step::Answer(answer) => {
                        let event = TrajectoryEvent::FinalAnswer { text: answer };
                        self.emit(
                            trace_id,
                            attempt,
                            &mut seq,
                            TracePayload::Event {
                                event: event.clone(),
                            },
                        );
                        trajectory.events.push(event);
                        status = SolveStatus::Answered;
                        break 'steps;
                    }
                    Step::Help(help_text) => {
                        if help_used >= params.max_help_requests {
                            status = SolveStatus::BudgetExhausted;
                            self.emit(
                                trace_id,
                                attempt,
                                &mut seq,
                                TracePayload::Note {
                                    text: "help budget exhausted".into(),
                                },
                            );
                            trajectories.push(trajectory);
                            break 'attempts;
                        }
                        consecutive_none = 0;
                        help_used += 1;
                        let help_index = help_used;
                        let event = TrajectoryEvent::HelpRequest {
                            text: help_text.clone(),
                            seq_index: help_index,
                        };
                        self.emit(
                            trace_id,
                            attempt,
                            &mut seq,
                            TracePayload::Event {
                                event: event.clone(),
                            },
                        );
                        trajectory.events.push(event);

                        let tool_mode_note = if tool_mode {
                            Some(
                                "no tool router in this configuration; direct tool calls only"
                                    .to_string(),
                            )
                        } else {
                            None
                        };
                        let knowledge = if let Some(note) = tool_mode_note {
                            (note, Vec::new())
                        } else {
                            self.serve_help(
                                task,
                                trace_id,
                                &help_text,
                                help_index,
                                attempt,
                                &mut seq,
                                &mut fetched_record_ids,
                                &mut new_records,
                                &mut dup_records,
                            )
                        };
                        let event = TrajectoryEvent::Knowledge {
                            distilled_text: knowledge.0,
                            provenance: knowledge.1,
                        };
                        self.emit(
                            trace_id,
                            attempt,
                            &mut seq,
                            TracePayload::Event {
                                event: event.clone(),
                            },
                        );
                        trajectory.events.push(event);
                    }
                    Step::Tool(name, argument) => {
                        if help_used >= params.max_help_requests {
                            status = SolveStatus::BudgetExhausted;
                            trajectories.push(trajectory);
                            break 'attempts;
                        }
                        consecutive_none = 0;
                        help_used += 1;
                        let help_index = help_used;
                        // Direct calls are recorded as help requests so the
                        // trajectory shape stays uniform across modes.
                        let event = TrajectoryEvent::HelpRequest {
                            text: format!("{name}: {argument}"),
                            seq_index: help_index,
                        };
                        self.emit(
                            trace_id,
                            attempt,
                            &mut seq,
                            TracePayload::Event {
                                event: event.clone(),
                            },
                        );
                        trajectory.events.push(event);

                        let (text, provenance) = self.serve_direct_call(
                            task,
                            &name,
                            &argument,
                            help_index,
                            &mut fetched_record_ids,
                            &mut new_records,
                            &mut dup_records,
                        );
                        let event = TrajectoryEvent::Knowledge {
                            distilled_text: text,
                            provenance,
                        };
                        self.emit(
                            trace_id,
                            attempt,
                            &mut seq,
                            TracePayload::Event {
                                event: event.clone(),
                            },
                        );
                        trajectory.events.push(event);
                    }
                    Step::None => {
                        consecutive_none += 1;
                        if consecutive_none >= self.config.no_action_limit {
                            status = SolveStatus::BudgetExhausted;
                            self.emit(
                                trace_id,
                                attempt,
                                &mut seq,
                                TracePayload::Note {
                                    text: format!(
                                        "{consecutive_none} consecutive rounds without help or answer"
                                    ),
                                },
                            );
                            trajectories.push(trajectory);
                            break 'attempts;
                        }
                    }
                }
            }

            // Reached only via an answer.
            let answered_trajectory = trajectory;
            let retry = if params.self_reflection {
                let context = last_context.as_ref().expect("context built this attempt");
                let reflection =
                    reflection::self_reflect(context, &answered_trajectory, &self.chat);
                self.emit(
                    trace_id,
                    attempt,
                    &mut seq,
                    TracePayload::Reflection {
                        kind: "self".into(),
                        verdict: Some(format!("{:?}", reflection.verdict).to_uppercase()),
                        detail: reflection.critique.clone(),
                        experience_version: None,
                    },
                );
                let uncertain = reflection.verdict == ReflectVerdict::Uncertain;
                if uncertain {
                    critiques.push(reflection.critique.clone());
                }
                reflections.push(reflection);
                uncertain && attempt < max_attempts
            } else {
                false
            };
            trajectories.push(answered_trajectory);
            if !retry {
                break 'attempts;
            }
        }

        let final_answer = trajectories
            .last()
            .and_then(|t| t.final_answer())
            .map(String::from);
        if status == SolveStatus::Answered && final_answer.is_none() {
            status = SolveStatus::BudgetExhausted;
        }
        let report = SolveReport {
            task_id: task.id.clone(),
            final_answer,
            attempts: trajectories.len() as u32,
            trajectories,
            help_requests_used: help_used,
            status,
        };
        self.emit(
            trace_id,
            report.attempts,
            &mut seq,
            TracePayload::Report {
                status: report.status.as_str().into(),
                final_answer: report.final_answer.clone(),
                attempts: report.attempts,
                help_requests_used: report.help_requests_used,
            },
        );
        debug_assert!(report.validate().is_ok(), "{:?}", report.validate());
        Ok(SolveOutput {
            report,
            last_context,
            self_reflections: reflections,
            fetched_record_ids,
            new_records,
            dup_records,
            next_seq: seq,
        })
    }

    /// Routes one help request, executes the calls, ingests the raw
    /// records, and returns the distilled text plus provenance. Routing
    /// and backend failures degrade to an error note.
    #[allow(clippy::too_many_arguments)]
    fn serve_help(
        &self,
        task: &Task,
        trace_id: &str,
        help_text: &str,
        help_index: u32,
        attempt: u32,
        seq: &mut u64,
        fetched: &mut BTreeSet<String>,
        new_records: &mut usize,
        dup_records: &mut usize,
    ) -> (String, Vec<String>) {
        let registry = self.registry.read().unwrap_or_else(|e| e.into_inner());
        let calls = match self.router.route(help_text, help_index, &registry) {
            Ok(calls) => calls,
            Err(e) => {
                let note = format!("routing failed: {e}");
                self.emit(
                    trace_id,
                    attempt,
                    seq,
                    TracePayload::Note { text: note.clone() },
                );
                return (note, Vec::new());
            }
        };
        self.count_dispatches(&calls);
        for call in &calls {
            self.emit(
                trace_id,
                attempt,
                seq,
                TracePayload::Note {
                    text: format!("[route] {}: {}", call.tool, call.argument),
                },
            );
        }
        let outcome = execute(
            calls,
            &registry,
            self.distiller.as_ref(),
            help_text,
            &task.id,
            self.config.distill_token_budget,
        );
        drop(registry);
        for note in &outcome.notes {
            self.emit(
                trace_id,
                attempt,
                seq,
                TracePayload::Note { text: note.clone() },
            );
        }
        if !outcome.raw.is_empty() {
            let mut kb = self.kb.write().unwrap_or_else(|e| e.into_inner());
            match kb.ingest(&outcome.raw) {
                Ok((fresh, dup)) => {
                    *new_records += fresh;
                    *dup_records += dup;
                }
                Err(e) => self.emit(
                    trace_id,
                    attempt,
                    seq,
                    TracePayload::Note {
                        text: format!("ingest failed: {e}"),
                    },
                ),
            }
            fetched.extend(outcome.raw.iter().map(|r| r.record_id.clone()));
        }
        match outcome.distilled.into_iter().next() {
            Some(distilled) => (distilled.text, distilled.provenance),
            None => {
                let mut note = String::from("no knowledge retrieved");
                if !outcome.notes.is_empty() {
                    note.push_str(": ");
                    note.push_str(&outcome.notes.join("; "));
                }
                (note, Vec::new())
            }
        }
    }

    /// Direct dispatch for the in-context tool-description mode: no
    /// router, no distillation — the truncated raw output goes straight
    /// into the knowledge event.
    #[allow(clippy::too_many_arguments)]
    fn serve_direct_call(
        &self,
        task: &Task,
        name: &str,
        argument: &str,
        help_index: u32,
        fetched: &mut BTreeSet<String>,
        new_records: &mut usize,
        dup_records: &mut usize,
    ) -> (String, Vec<String>) {
        let registry = self.registry.read().unwrap_or_else(|e| e.into_inner());
        let call = ToolCall {
            tool: name.to_string(),
            argument: argument.to_string(),
            origin_help_index: help_index,
        };
        self.count_dispatches(std::slice::from_ref(&call));
        let response = match registry.dispatch(&call, &task.id) {
            Ok(response) => response,
            Err(e) => return (format!("tool call failed: {e}"), Vec::new()),
        };
        drop(registry);
        let mut provenance = Vec::new();
        let mut text = String::new();
        let budget = self.config.distill_token_budget;
        let mut used = 0usize;
        for record in &response.records {
            provenance.push(record.record_id.clone());
            for token in record.content.split_whitespace() {
                if used >= budget {
                    break;
                }
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(token);
                used += 1;
            }
        }
        if text.is_empty() {
            text = "no results".into();
        }
        if !response.records.is_empty() {
            let mut kb = self.kb.write().unwrap_or_else(|e| e.into_inner());
            if let Ok((fresh, dup)) = kb.ingest(&response.records) {
                *new_records += fresh;
                *dup_records += dup;
            }
            fetched.extend(response.records.iter().map(|r| r.record_id.clone()));
        }
        (text, provenance)
    }

    /// Processes tasks in order: task i is solved with the experience
    /// built from tasks 0..i, and — with verified reflection on and gold
    /// present — evolves the state for the tasks after it. Warm-up runs
    /// first when it has not run yet. Per-task failures are captured in
    /// their reports; the batch continues.
    pub fn run_batch(&self, tasks: &[Task]) -> Result<BatchOutput, EngineError> {
        self.run_batch_with(tasks, ExperienceState::initial())
    }

    /// [`Engine::run_batch`] starting from a pre-built experience state
    /// (e.g. lessons distilled from annotated prior cases).
    pub fn run_batch_with(
        &self,
        tasks: &[Task],
        initial_experience: ExperienceState,
    ) -> Result<BatchOutput, EngineError> {
        if tasks.is_empty() {
            return Err(EngineError::Invariant(InvariantError::Config(
                "task batch is empty".into(),
            )));
        }
        validate_batch(tasks)?;
        let mut experience = initial_experience;
        let warmup = if self.warmed.load(Ordering::SeqCst) {
            None
        } else {
            Some(self.warm_up(tasks, &experience)?)
        };

        let flags = self.config.ablation;
        let mut reports = Vec::with_capacity(tasks.len());
        let mut timeline = vec![experience.clone()];

        #[cfg(feature = "parallel")]
        let parallel = self.config.parallel_batch && !flags.verified_reflection;
        #[cfg(not(feature = "parallel"))]
        let parallel = false;

        if parallel {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                let outputs: Vec<Result<SolveOutput, EngineError>> = tasks
                    .par_iter()
                    .map(|task| self.solve_task(task, &experience))
                    .collect();
                for output in outputs {
                    reports.push(output?.report);
                }
            }
        } else {
            for task in tasks {
                let output = self.solve_task(task, &experience)?;
                let mut seq = output.next_seq;
                if flags.verified_reflection {
                    if let Some(gold) = &task.gold_answer {
                        let incorrect = output
                            .report
                            .final_answer
                            .as_deref()
                            .map(|answer| {
                                !reflection::grade(
                                    answer,
                                    gold,
                                    reflection::GradeMethod::ExactMatch,
                                    None,
                                )
                                .map(|v| v.correct)
                                .unwrap_or(false)
                            })
                            .unwrap_or(true);
                        if self.config.reflect_on_success || incorrect {
                            let context = output
                                .last_context
                                .clone()
                                .expect("context exists after solve");
                            let trajectory = output
                                .report
                                .trajectories
                                .last()
                                .expect("at least one attempt");
                            let (next, warning) = reflection::verified_reflect(
                                &context,
                                trajectory,
                                gold,
                                &experience,
                                &self.chat,
                                self.config.experience_lesson_cap,
                                self.config.lesson_body_cap,
                            );
                            if let Some(warning) = warning {
                                self.emit(
                                    &task.id,
                                    output.report.attempts,
                                    &mut seq,
                                    TracePayload::Note { text: warning },
                                );
                            } else {
                                self.emit(
                                    &task.id,
                                    output.report.attempts,
                                    &mut seq,
                                    TracePayload::Reflection {
                                        kind: "verified".into(),
                                        verdict: None,
                                        detail: format!(
                                            "experience evolved to version {}",
                                            next.version
                                        ),
                                        experience_version: Some(next.version),
                                    },
                                );
                                experience = next;
                                timeline.push(experience.clone());
                            }
                        }
                    }
                }
                reports.push(output.report);
            }
        }

        Ok(BatchOutput {
            reports,
            experience_timeline: timeline,
            warmup,
            dispatch_counts: self.dispatch_counts(),
        })
    }
}
