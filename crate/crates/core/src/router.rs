//! The stand-alone tool router: interprets a natural-language help request
//! against the registered tool descriptions, emits concrete calls,
//! executes them, and distills the raw results into a task-relevant
//! summary. The agent only ever sees the distilled text plus provenance
//! ids — raw content flows to the knowledge base, reachable again solely
//! through the kb_retrieve tool.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::backends::{BackendResponse, ToolBackend};
use crate::provider::{ChatHandle, ChatRequest, Message};
use crate::types::{RawKnowledgeRecord, RecordSource, ToolCall, ToolDescription};

pub const WEB_SEARCH_TOOL: &str = "web_search";
pub const CODE_EXEC_TOOL: &str = "code_exec";
pub use crate::backends::kb_tool::KB_RETRIEVE_TOOL;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("tool registry is empty")]
    EmptyRegistry,
    #[error("help request is empty")]
    EmptyHelp,
    #[error("duplicate tool registration: {0}")]
    DuplicateTool(String),
    #[error("router selected unregistered tool: {0}")]
    UnregisteredTool(String),
    #[error("router declined the request: {0}")]
    Declined(String),
    #[error("router produced no tool calls")]
    NoCalls,
    #[error("router provider error: {0}")]
    Provider(String),
}

/// The description set the router selects from, plus dispatch bindings.
/// Every description has a binding and names are unique.
#[derive(Default)]
pub struct ToolRegistry {
    descriptions: Vec<ToolDescription>,
    bindings: BTreeMap<String, Arc<dyn ToolBackend>>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        description: ToolDescription,
        backend: Arc<dyn ToolBackend>,
    ) -> Result<(), RouterError> {
        if self.bindings.contains_key(&description.name) {
            return Err(RouterError::DuplicateTool(description.name));
        }
        self.bindings.insert(description.name.clone(), backend);
        self.descriptions.push(description);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.descriptions.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.bindings.contains_key(name)
    }

    pub fn descriptions(&self) -> &[ToolDescription] {
        &self.descriptions
    }

    pub fn dispatch(&self, call: &ToolCall, task_id: &str) -> Result<BackendResponse, RouterError> {
        let backend = self
            .bindings
            .get(&call.tool)
            .ok_or_else(|| RouterError::UnregisteredTool(call.tool.clone()))?;
        backend
            .invoke(&call.argument, task_id, call.origin_help_index)
            .map_err(|e| RouterError::Provider(format!("{}: {e}", call.tool)))
    }

    /// Rendering of the description set for prompts.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        for d in &self.descriptions {
            let kind = match d.input_kind {
                crate::types::ToolInputKind::FreeTextQuery => "free-text query",
                crate::types::ToolInputKind::CodeSnippet => "code snippet",
            };
            out.push_str(&format!(
                "- {}: {} (input: {kind})\n",
                d.name, d.description
            ));
        }
        out
    }
}

/// Maps one help request to concrete tool calls.
pub trait Router: Send + Sync {
    fn route(
        &self,
        help_request: &str,
        help_index: u32,
        registry: &ToolRegistry,
    ) -> Result<Vec<ToolCall>, RouterError>;
}

fn check_route_preconditions(
    help_request: &str,
    registry: &ToolRegistry,
) -> Result<(), RouterError> {
    if registry.is_empty() {
        return Err(RouterError::EmptyRegistry);
    }
    if help_request.trim().is_empty() {
        return Err(RouterError::EmptyHelp);
    }
    Ok(())
}

/// Live router: a chat call whose system prompt lists the tool
/// descriptions and demands a structured call list, one per line:
/// `call <tool>: <argument>`, or `decline: <reason>`.
pub struct LlmRouter {
    provider: ChatHandle,
    fanout_cap: usize,
}

impl LlmRouter {
    pub fn new(provider: ChatHandle, fanout_cap: usize) -> Self {
        LlmRouter {
            provider,
            fanout_cap,
        }
    }

    fn prompt(&self, help_request: &str, registry: &ToolRegistry) -> ChatRequest {
        let system = format!(
            "You are a tool router. Map the help request to the most suitable \
             tool calls from this list:\n{}\
             Reply with one line per call, formatted exactly as\n\
             call <tool>: <argument>\n\
             A request may fan out into several calls. If no tool fits, reply\n\
             decline: <reason>",
            registry.describe()
        );
        ChatRequest::new(vec![Message::system(system), Message::user(help_request)])
    }

    fn parse_calls(
        output: &str,
        help_index: u32,
        registry: &ToolRegistry,
    ) -> Result<Vec<ToolCall>, RouterError> {
        let mut calls = Vec::new();
        for line in output.lines() {
            let line = line.trim();
            if let Some(reason) = line.strip_prefix("decline:") {
                return Err(RouterError::Declined(reason.trim().to_string()));
            }
            let Some(rest) = line.strip_prefix("call ") else {
                continue;
            };
            let Some((tool, argument)) = rest.split_once(':') else {
                continue;
            };
            let tool = tool.trim();
            let argument = argument.trim();
            if argument.is_empty() {
                continue;
            }
            if !registry.contains(tool) {
                return Err(RouterError::UnregisteredTool(tool.to_string()));
            }
            calls.push(ToolCall {
                tool: tool.to_string(),
                argument: argument.to_string(),
                origin_help_index: help_index,
            });
        }
        if calls.is_empty() {
            return Err(RouterError::NoCalls);
        }
        Ok(calls)
    }
}

impl Router for LlmRouter {
    fn route(
        &self,
        help_request: &str,
        help_index: u32,
        registry: &ToolRegistry,
    ) -> Result<Vec<ToolCall>, RouterError> {
        check_route_preconditions(help_request, registry)?;
        let output = self
            .provider
            .complete(&self.prompt(help_request, registry))
            .map_err(|e| RouterError::Provider(e.to_string()))?;
        let mut calls = Self::parse_calls(&output, help_index, registry)?;
        calls.truncate(self.fanout_cap);
        Ok(calls)
    }
}

/// Deterministic keyword-rule router for offline runs: computational
/// requests go to code_exec, everything else fans out to kb_retrieve
/// (when registered) plus web_search with the help text as the query.
pub struct RuleRouter {
    code_keywords: Vec<String>,
    fanout_cap: usize,
}

impl RuleRouter {
    pub fn new(fanout_cap: usize) -> Self {
        RuleRouter {
            code_keywords: ["calculate", "convert", "compute", "print("]
                .into_iter()
                .map(String::from)
                .collect(),
            fanout_cap,
        }
    }

    pub fn with_code_keywords<I, S>(mut self, keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.code_keywords = keywords.into_iter().map(Into::into).collect();
        self
    }

    fn extract_snippet(help_request: &str) -> String {
        match help_request.find("print(") {
            Some(start) => help_request[start..].trim().to_string(),
            None => help_request.trim().to_string(),
        }
    }
}

impl Router for RuleRouter {
    fn route(
        &self,
        help_request: &str,
        help_index: u32,
        registry: &ToolRegistry,
    ) -> Result<Vec<ToolCall>, RouterError> {
        check_route_preconditions(help_request, registry)?;
        let lower = help_request.to_lowercase();
        let mut calls = Vec::new();
        let wants_code = self
            .code_keywords
            .iter()
            .any(|k| lower.contains(k.as_str()));
        if wants_code && registry.contains(CODE_EXEC_TOOL) {
            calls.push(ToolCall {
                tool: CODE_EXEC_TOOL.into(),
                argument: Self::extract_snippet(help_request),
                origin_help_index: help_index,
            });
        } else {
            if registry.contains(KB_RETRIEVE_TOOL) {
                calls.push(ToolCall {
                    tool: KB_RETRIEVE_TOOL.into(),
                    argument: help_request.trim().to_string(),
                    origin_help_index: help_index,
                });
            }
            if registry.contains(WEB_SEARCH_TOOL) {
                calls.push(ToolCall {
                    tool: WEB_SEARCH_TOOL.into(),
                    argument: help_request.trim().to_string(),
                    origin_help_index: help_index,
                });
            }
        }
        if calls.is_empty() {
            return Err(RouterError::Declined(
                "no registered tool fits the request".into(),
            ));
        }
        calls.truncate(self.fanout_cap);
        Ok(calls)
    }
}

/// One Knowledge-event payload: the summary and the raw record ids that
/// support it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistilledKnowledge {
    pub text: String,
    pub provenance: Vec<String>,
}

/// Produces the task-relevant subset of the raw records for one help
/// request, within a whitespace-token budget.
pub trait Distiller: Send + Sync {
    fn distill(
        &self,
        help_request: &str,
        records: &[RawKnowledgeRecord],
        budget_tokens: usize,
    ) -> Result<DistilledKnowledge, RouterError>;
}

fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

fn short_id(id: &str) -> &str {
    &id[..12.min(id.len())]
}

/// Deterministic distiller: sentences are scored by distinct-term overlap
/// with the help request and taken greedily under the budget, each cited
/// with its source record. Code-execution output is always included.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExtractiveDistiller;

impl ExtractiveDistiller {
    fn sentences(content: &str) -> Vec<String> {
        content
            .split(['.', '\n'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| format!("{s}."))
            .collect()
    }
}

impl Distiller for ExtractiveDistiller {
    fn distill(
        &self,
        help_request: &str,
        records: &[RawKnowledgeRecord],
        budget_tokens: usize,
    ) -> Result<DistilledKnowledge, RouterError> {
        use crate::provider::hashed::tokenize;
        let help_terms: std::collections::BTreeSet<String> =
            tokenize(help_request).into_iter().collect();

        let mut lines: Vec<String> = Vec::new();
        let mut provenance: Vec<String> = Vec::new();
        let mut used = 0usize;
        let push_line = |line: String,
                         record_id: &str,
                         used: &mut usize,
                         lines: &mut Vec<String>,
                         provenance: &mut Vec<String>|
         -> bool {
            let cost = token_count(&line);
            if *used + cost > budget_tokens && !lines.is_empty() {
                return false;
            }
            *used += cost;
            lines.push(line);
            if !provenance.iter().any(|p| p == record_id) {
                provenance.push(record_id.to_string());
            }
            true
        };

        // Execution output first: it is the direct result of the request.
        for record in records {
            if matches!(record.source, RecordSource::CodeExecution { .. }) {
                let line = format!(
                    "execution result: {} [source {}]",
                    record.content.trim(),
                    short_id(&record.record_id)
                );
                push_line(
                    line,
                    &record.record_id,
                    &mut used,
                    &mut lines,
                    &mut provenance,
                );
            }
        }

        // Then scored sentences from fetched text.
        let mut candidates: Vec<(usize, usize, usize, String)> = Vec::new();
        for (ri, record) in records.iter().enumerate() {
            if matches!(record.source, RecordSource::CodeExecution { .. }) {
                continue;
            }
            for (si, sentence) in Self::sentences(&record.content).into_iter().enumerate() {
                let terms: std::collections::BTreeSet<String> =
                    tokenize(&sentence).into_iter().collect();
                let score = help_terms.iter().filter(|t| terms.contains(*t)).count();
                candidates.push((score, ri, si, sentence));
            }
        }
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        for (score, ri, _, sentence) in &candidates {
            if *score == 0 {
                break;
            }
            let record = &records[*ri];
            let line = format!("- {} [source {}]", sentence, short_id(&record.record_id));
            if !push_line(
                line,
                &record.record_id,
                &mut used,
                &mut lines,
                &mut provenance,
            ) {
                break;
            }
        }

        // Nothing matched at all: fall back to leading sentences so the
        // agent still sees what came back.
        if lines.is_empty() {
            for (_, ri, si, sentence) in &candidates {
                if *si > 0 {
                    continue;
                }
                let record = &records[*ri];
                let line = format!("- {} [source {}]", sentence, short_id(&record.record_id));
                if !push_line(
                    line,
                    &record.record_id,
                    &mut used,
                    &mut lines,
                    &mut provenance,
                ) {
                    break;
                }
            }
        }

        Ok(DistilledKnowledge {
            text: lines.join("\n"),
            provenance,
        })
    }
}

/// Live distiller: one chat call over the union of records, citations
/// parsed back and clamped to ids that actually exist.
pub struct LlmDistiller {
    provider: ChatHandle,
}

impl LlmDistiller {
    pub fn new(provider: ChatHandle) -> Self {
        LlmDistiller { provider }
    }
}

impl Distiller for LlmDistiller {
    fn distill(
        &self,
        help_request: &str,
        records: &[RawKnowledgeRecord],
        budget_tokens: usize,
    ) -> Result<DistilledKnowledge, RouterError> {
        let system = format!(
            "Condense the fetched material into only the facts relevant to the \
             request, in at most {budget_tokens} words. After each claim cite the \
             supporting record as [rec:<id>], using only ids present in the material."
        );
        let mut material = format!("Request: {help_request}\n\nMaterial:\n");
        for record in records {
            material.push_str(&format!("[rec:{}] {}\n", record.record_id, record.content));
        }
        let request = ChatRequest::new(vec![Message::system(system), Message::user(material)]);
        let output = self
            .provider
            .complete(&request)
            .map_err(|e| RouterError::Provider(e.to_string()))?;

        let known: std::collections::BTreeSet<&str> =
            records.iter().map(|r| r.record_id.as_str()).collect();
        let mut provenance = Vec::new();
        let mut rest = output.as_str();
        while let Some(start) = rest.find("[rec:") {
            rest = &rest[start + 5..];
            if let Some(end) = rest.find(']') {
                let id = &rest[..end];
                if known.contains(id) && !provenance.iter().any(|p| p == id) {
                    provenance.push(id.to_string());
                }
                rest = &rest[end + 1..];
            } else {
                break;
            }
        }
        let mut text = output.clone();
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.len() > budget_tokens {
            text = tokens[..budget_tokens].join(" ");
        }
        Ok(DistilledKnowledge { text, provenance })
    }
}

/// Result of executing one help request's calls.
#[derive(Debug, Default)]
pub struct RoutingOutcome {
    pub calls: Vec<ToolCall>,
    pub distilled: Vec<DistilledKnowledge>,
    pub raw: Vec<RawKnowledgeRecord>,
    pub notes: Vec<String>,
}

/// Dispatches every call, collects the raw records, and distills once
/// over their union. A failing call degrades to a note; if every call
/// fails the outcome carries empty knowledge plus the notes.
pub fn execute(
    calls: Vec<ToolCall>,
    registry: &ToolRegistry,
    distiller: &dyn Distiller,
    help_request: &str,
    task_id: &str,
    budget_tokens: usize,
) -> RoutingOutcome {
    let dispatch = |call: &ToolCall| registry.dispatch(call, task_id);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<BackendResponse, RouterError>> = {
        use rayon::prelude::*;
        calls.par_iter().map(dispatch).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<BackendResponse, RouterError>> = calls.iter().map(dispatch).collect();

    let mut outcome = RoutingOutcome {
        calls,
        ..RoutingOutcome::default()
    };
    let mut failures = 0usize;
    for (call, result) in outcome.calls.iter().zip(results) {
        match result {
            Ok(response) => {
                outcome.notes.extend(response.notes);
                outcome.raw.extend(response.records);
            }
            Err(e) => {
                failures += 1;
                outcome
                    .notes
                    .push(format!("call {} failed: {e}", call.tool));
            }
        }
    }
    if failures == outcome.calls.len() {
        outcome
            .notes
            .push("all tool calls failed; no knowledge retrieved".into());
        return outcome;
    }
    if outcome.raw.is_empty() {
        return outcome;
    }
    match distiller.distill(help_request, &outcome.raw, budget_tokens) {
        Ok(mut distilled) => {
            // Provenance may only cite fetched records.
            let raw_ids: std::collections::BTreeSet<&str> =
                outcome.raw.iter().map(|r| r.record_id.as_str()).collect();
            distilled
                .provenance
                .retain(|id| raw_ids.contains(id.as_str()));
            outcome.distilled.push(distilled);
        }
        Err(e) => outcome.notes.push(format!("distillation failed: {e}")),
    }
    outcome
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::fixture::{CorpusPage, FixtureCorpus, FixtureSearchBackend};
    use crate::backends::{BackendError, CodeExecBackend, ExecLimits};
    use crate::provider::ScriptedChatProvider;
    use crate::types::ToolInputKind;

    fn search_description() -> ToolDescription {
        ToolDescription::new(
            WEB_SEARCH_TOOL,
            "search indexed pages and fetch their text",
            ToolInputKind::FreeTextQuery,
        )
    }

    fn code_description() -> ToolDescription {
        ToolDescription::new(
            CODE_EXEC_TOOL,
            "run a python snippet in a sandbox",
            ToolInputKind::CodeSnippet,
        )
    }

    fn three_page_registry() -> ToolRegistry {
        let corpus = FixtureCorpus::from_pages(vec![
            CorpusPage {
                id: "p1".into(),
                url: "fixture://p1".into(),
                text: "the vessel structure has a copper facade".into(),
            },
            CorpusPage {
                id: "p2".into(),
                url: "fixture://p2".into(),
                text: "the vessel site covers five acres".into(),
            },
            CorpusPage {
                id: "p3".into(),
                url: "fixture://p3".into(),
                text: "conference hotels near the venue".into(),
            },
        ])
        .unwrap();
        let mut registry = ToolRegistry::new();
        registry
            .register(
                search_description(),
                Arc::new(FixtureSearchBackend::new(Arc::new(corpus), 5)),
            )
            .unwrap();
        registry
            .register(
                code_description(),
                Arc::new(CodeExecBackend::new(ExecLimits::default())),
            )
            .unwrap();
        registry
    }

    #[test]
    fn empty_registry_is_a_configuration_error() {
        let registry = ToolRegistry::new();
        let router = RuleRouter::new(8);
        assert!(matches!(
            router.route("need facts", 1, &registry),
            Err(RouterError::EmptyRegistry)
        ));
    }

    #[test]
    fn keyword_rule_routes_conversions_to_code_exec() {
        let registry = three_page_registry();
        let router = RuleRouter::new(8);
        let calls = router
            .route("convert 300 USD to EUR at rate 0.92", 1, &registry)
            .unwrap();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].tool, CODE_EXEC_TOOL);
    }

    #[test]
    fn plain_requests_route_to_search() {
        let registry = three_page_registry();
        let router = RuleRouter::new(8);
        let calls = router
            .route("I need the vessel facade color.", 2, &registry)
            .unwrap();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].tool, WEB_SEARCH_TOOL);
        assert_eq!(calls[0].origin_help_index, 2);
    }

    #[test]
    fn llm_router_parses_structured_call_list() {
        let registry = three_page_registry();
        let provider = Arc::new(ScriptedChatProvider::from_responses([
            "call web_search: Vessel Hudson Yards closure date\n\
             call web_search: Vessel Hudson Yards site size acres",
        ]));
        let router = LlmRouter::new(provider, 8);
        let calls = router
            .route("verify the vessel closure date and site size", 3, &registry)
            .unwrap();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].argument, "Vessel Hudson Yards closure date");
        assert_eq!(calls[1].argument, "Vessel Hudson Yards site size acres");
    }

    #[test]
    fn llm_router_rejects_unregistered_tools() {
        let registry = three_page_registry();
        let provider = Arc::new(ScriptedChatProvider::from_responses([
            "call teleport: somewhere else",
        ]));
        let router = LlmRouter::new(provider, 8);
        assert!(matches!(
            router.route("go somewhere", 1, &registry),
            Err(RouterError::UnregisteredTool(t)) if t == "teleport"
        ));
    }

    #[test]
    fn fanout_is_capped() {
        let registry = three_page_registry();
        let lines: Vec<String> = (0..12)
            .map(|i| format!("call web_search: query number {i}"))
            .collect();
        let provider = Arc::new(ScriptedChatProvider::from_responses([lines.join("\n")]));
        let router = LlmRouter::new(provider, 8);
        let calls = router.route("broad sweep", 1, &registry).unwrap();
        assert_eq!(calls.len(), 8);
    }

    #[test]
    fn execute_collects_raw_and_distills_with_provenance() {
        let registry = three_page_registry();
        let router = RuleRouter::new(8);
        let help = "I need the vessel facade and the vessel site size.";
        let calls = router.route(help, 1, &registry).unwrap();
        let outcome = execute(calls, &registry, &ExtractiveDistiller, help, "t1", 1200);
        assert!(!outcome.raw.is_empty());
        assert_eq!(outcome.distilled.len(), 1);
        let raw_ids: Vec<&str> = outcome.raw.iter().map(|r| r.record_id.as_str()).collect();
        for id in &outcome.distilled[0].provenance {
            assert!(raw_ids.contains(&id.as_str()), "fabricated source {id}");
        }
        assert!(!outcome.distilled[0].provenance.is_empty());
    }

    #[test]
    fn code_execution_output_is_distilled_with_result() {
        let registry = three_page_registry();
        let calls = vec![ToolCall {
            tool: CODE_EXEC_TOOL.into(),
            argument: "print(2+2)".into(),
            origin_help_index: 1,
        }];
        let outcome = execute(
            calls,
            &registry,
            &ExtractiveDistiller,
            "compute the sum",
            "t1",
            1200,
        );
        assert_eq!(outcome.raw.len(), 1);
        assert!(matches!(
            outcome.raw[0].source,
            RecordSource::CodeExecution { .. }
        ));
        assert!(outcome.distilled[0].text.contains('4'));
    }

    #[test]
    fn all_backends_failing_degrades_to_error_note() {
        struct FailingBackend;
        impl ToolBackend for FailingBackend {
            fn invoke(
                &self,
                _argument: &str,
                _task_id: &str,
                _help_index: u32,
            ) -> Result<BackendResponse, BackendError> {
                Err(BackendError::Other("backend exploded".into()))
            }
        }
        let mut registry = ToolRegistry::new();
        registry
            .register(search_description(), Arc::new(FailingBackend))
            .unwrap();
        let calls = vec![ToolCall {
            tool: WEB_SEARCH_TOOL.into(),
            argument: "anything".into(),
            origin_help_index: 1,
        }];
        let outcome = execute(
            calls,
            &registry,
            &ExtractiveDistiller,
            "anything",
            "t1",
            1200,
        );
        assert!(outcome.distilled.is_empty());
        assert!(outcome.notes.iter().any(|n| n.contains("failed")));
    }

    #[test]
    fn distillation_respects_token_budget() {
        let records: Vec<RawKnowledgeRecord> = (0..30)
            .map(|i| {
                RawKnowledgeRecord::new(
                    RecordSource::Url {
                        url: format!("fixture://page{i}"),
                    },
                    format!("the facade color fact number {i} repeats facade color words"),
                    "t1",
                    1,
                )
            })
            .collect();
        let distilled = ExtractiveDistiller
            .distill("facade color", &records, 40)
            .unwrap();
        assert!(distilled.text.split_whitespace().count() <= 40);
        assert!(!distilled.provenance.is_empty());
    }

    #[test]
    fn duplicate_registration_is_rejected() {
        let mut registry = ToolRegistry::new();
        registry
            .register(
                search_description(),
                Arc::new(CodeExecBackend::new(ExecLimits::default())),
            )
            .unwrap();
        assert!(matches!(
            registry.register(
                search_description(),
                Arc::new(CodeExecBackend::new(ExecLimits::default())),
            ),
            Err(RouterError::DuplicateTool(_))
        ));
    }

    #[test]
    fn unserviceable_request_is_declined() {
        // Only code_exec registered, plain lookup request: nothing fits.
        let mut registry = ToolRegistry::new();
        registry
            .register(
                code_description(),
                Arc::new(CodeExecBackend::new(ExecLimits::default())),
            )
            .unwrap();
        let router = RuleRouter::new(8);
        assert!(matches!(
            router.route("I need the vessel facade color.", 1, &registry),
            Err(RouterError::Declined(_))
        ));
        // The scripted LLM router can decline explicitly too.
        let registry = three_page_registry();
        let provider = Arc::new(ScriptedChatProvider::from_responses([
            "decline: the request names no retrievable fact",
        ]));
        let router = LlmRouter::new(provider, 8);
        assert!(matches!(
            router.route("please feel an emotion", 1, &registry),
            Err(RouterError::Declined(_))
        ));
    }
}
