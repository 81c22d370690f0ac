//! Deterministic reference policy: a chat "model" that solves synthetic
//! chained-lookup tasks by reading its own rendered context. It stands in
//! for a live backbone in fixture runs, making whole end-to-end runs
//! exact and offline.
//!
//! Behavior is conditioned entirely on the context, mirroring how a fixed
//! backbone's output quality depends on what the engine renders into it:
//!
//! - Expert mode — an experience lesson about decomposing lookups, a
//!   self-reflection critique, or in-context tool descriptions — walks the
//!   dependency chain one lookup per step and answers from the resolved
//!   terminal value.
//! - Novice mode (none of those present) issues a single broad lookup,
//!   follows at most one hop, and answers whatever it reached. Chains
//!   deeper than one lookup therefore defeat it.
//!
//! The reflector halves follow suit: self-reflection re-walks the chain
//! from the trajectory's knowledge and is CONFIDENT only when the final
//! answer equals the fully resolved terminal; verified reflection always
//! distills the same decomposition lesson, reinforcing it across tasks.

use std::collections::BTreeMap;

use magellan_core::orchestrator::{
    SECTION_PROGRESS, SECTION_SELF_REFLECTION, SECTION_TASK, SECTION_TOOLS, SOLVE_PROMPT_MARKER,
};
use magellan_core::provider::{ChatProvider, ChatRequest, ProviderError, Role};
use magellan_core::reflection::{SELF_REFLECT_PROMPT_MARKER, VERIFIED_REFLECT_PROMPT_MARKER};

use crate::world::parse_chain_query;

/// Title of the lesson the policy keys on; emitting it is what makes
/// verified reflection matter in fixture runs.
pub const DECOMPOSE_LESSON_TITLE: &str = "Decompose Dependent Lookups";

const DECOMPOSE_LESSON_BODY: &str = "Split a multi-step question into one lookup per \
dependency and resolve the steps in order, verifying each intermediate value before moving on.";

#[derive(Debug, Default, Clone, Copy)]
pub struct ReferencePolicy;

impl ReferencePolicy {
    pub fn new() -> Self {
        ReferencePolicy
    }
}

fn section<'a>(text: &'a str, header: &str) -> Option<&'a str> {
    let start = text.find(header)? + header.len();
    let rest = &text[start..];
    let end = rest.find("\n## ").unwrap_or(rest.len());
    Some(&rest[..end])
}

/// Scans free text for `the <attr> of <entity> is <value>` statements,
/// the sentence form every fixture page uses. Attribute and entity must
/// be single tokens; values run to the end of the sentence or a source
/// citation.
fn parse_facts(text: &str) -> BTreeMap<(String, String), String> {
    let mut facts = BTreeMap::new();
    let lower = text.to_lowercase();
    for fragment in lower.split(['.', '\n']) {
        let mut rest = fragment;
        while let Some(pos) = rest.find("the ") {
            // Word boundary on the left.
            let at_boundary = pos == 0
                || !rest[..pos]
                    .chars()
                    .next_back()
                    .map(char::is_alphanumeric)
                    .unwrap_or(false);
            let candidate = &rest[pos + 4..];
            if !at_boundary {
                rest = candidate;
                continue;
            }
            let Some(of_pos) = candidate.find(" of ") else {
                break;
            };
            let attr = candidate[..of_pos].trim();
            let after_of = &candidate[of_pos + 4..];
            let Some(is_pos) = after_of.find(" is ") else {
                rest = candidate;
                continue;
            };
            let entity = after_of[..is_pos].trim();
            let mut value = after_of[is_pos + 4..].trim();
            if let Some(cite) = value.find(" [") {
                value = value[..cite].trim();
            }
            let single_token = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_alphanumeric());
            if single_token(attr) && single_token(entity) && !value.is_empty() {
                facts.insert((attr.to_string(), entity.to_string()), value.to_string());
            }
            rest = candidate;
        }
    }
    facts
}

enum Walk {
    /// Chain fully resolved to a terminal value.
    Resolved(String),
    /// Stuck needing (attribute, entity); `hops` steps were resolved.
    Stuck {
        attr: String,
        entity: String,
        hops: usize,
    },
    BadQuery,
}

fn walk_chain(query: &str, facts: &BTreeMap<(String, String), String>, max_hops: usize) -> Walk {
    let Some((base, attrs)) = parse_chain_query(query) else {
        return Walk::BadQuery;
    };
    let mut current = base;
    for (i, attr) in attrs.iter().enumerate() {
        if i >= max_hops {
            return Walk::Stuck {
                attr: attr.clone(),
                entity: current,
                hops: i,
            };
        }
        match facts.get(&(attr.clone(), current.clone())) {
            Some(value) => {
                let is_last = i + 1 == attrs.len();
                if is_last {
                    return Walk::Resolved(value.clone());
                }
                // Intermediate values are entity names (single token);
                // anything else means the chain is broken.
                if value.contains(' ') {
                    return Walk::Resolved(value.clone());
                }
                current = value.clone();
            }
            None => {
                return Walk::Stuck {
                    attr: attr.clone(),
                    entity: current,
                    hops: i,
                }
            }
        }
    }
    Walk::BadQuery
}

fn solve(system: &str, user: &str) -> String {
    let query = section(user, SECTION_TASK).map(str::trim).unwrap_or("");
    let query = query.lines().next().unwrap_or("").trim();
    let progress = section(user, SECTION_PROGRESS).unwrap_or("");
    let facts = parse_facts(progress);

    let tool_mode = system.contains(SECTION_TOOLS);
    let expert = tool_mode
        || user.contains(DECOMPOSE_LESSON_TITLE)
        || user.contains(SECTION_SELF_REFLECTION);

    if expert {
        match walk_chain(query, &facts, usize::MAX) {
            Walk::Resolved(answer) => {
                format!("Chain fully resolved. <answer>{answer}</answer>")
            }
            Walk::Stuck { attr, entity, .. } => {
                if tool_mode {
                    format!(
                        "Next dependency: {attr} of {entity}. \
                         <tool name=\"web_search\">the {attr} of {entity}</tool>"
                    )
                } else {
                    format!(
                        "Next dependency: {attr} of {entity}. \
                         <help>I need the {attr} of {entity}.</help>"
                    )
                }
            }
            Walk::BadQuery => "<answer>unknown</answer>".to_string(),
        }
    } else {
        // Novice: one broad lookup, then answer after at most one hop.
        let asked_before = progress.contains("Help: ");
        if !asked_before {
            return format!(
                "The question looks involved but one search should cover it. \
                 <help>I need the answer to: {query}</help>"
            );
        }
        match walk_chain(query, &facts, 1) {
            Walk::Resolved(answer) => format!("Found it directly. <answer>{answer}</answer>"),
            Walk::Stuck { entity, hops, .. } => {
                if hops >= 1 {
                    format!(
                        "The records point to {entity}; taking that as the answer. \
                         <answer>{entity}</answer>"
                    )
                } else {
                    "<answer>unknown; the records did not cover it</answer>".to_string()
                }
            }
            Walk::BadQuery => "<answer>unknown</answer>".to_string(),
        }
    }
}

fn reflect(user: &str) -> String {
    let query = section(user, SECTION_TASK).map(str::trim).unwrap_or("");
    let query = query.lines().next().unwrap_or("").trim();
    let facts = parse_facts(user);
    let answer = user
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix("Answer: "))
        .unwrap_or("")
        .trim()
        .to_lowercase();
    match walk_chain(query, &facts, usize::MAX) {
        Walk::Resolved(resolved) if resolved == answer => {
            "Every dependency in the question was resolved and the final value matches \
             the gathered evidence. All constraints are met.\nVERDICT: CONFIDENT"
                .to_string()
        }
        _ => "The answer did not come from resolving every dependency in the question; \
             at least one lookup in the chain is missing or unverified. Decompose the \
             question into one lookup per dependency and verify each intermediate \
             value before answering.\nVERDICT: UNCERTAIN"
            .to_string(),
    }
}

impl ChatProvider for ReferencePolicy {
    fn complete(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let system = request
            .messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let user = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");

        if system.contains(SELF_REFLECT_PROMPT_MARKER) {
            return Ok(reflect(user));
        }
        if system.contains(VERIFIED_REFLECT_PROMPT_MARKER) {
            return Ok(format!(
                "LESSON: {DECOMPOSE_LESSON_TITLE}\n{DECOMPOSE_LESSON_BODY}"
            ));
        }
        if system.contains(SOLVE_PROMPT_MARKER) {
            return Ok(solve(system, user));
        }
        Err(ProviderError::Refusal(
            "reference policy does not recognize this prompt".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use magellan_core::provider::Message;

    fn request(system: &str, user: &str) -> ChatRequest {
        ChatRequest::new(vec![Message::system(system), Message::user(user)])
    }

    const SOLVE_SYSTEM: &str =
        "You are a research agent solving a knowledge-discovery task. Answer precisely.";

    #[test]
    fn novice_asks_one_broad_question_first() {
        let user = "## Task\nWhat is the motto of the founder of barceldor?\n";
        let out = ReferencePolicy::new()
            .complete(&request(SOLVE_SYSTEM, user))
            .unwrap();
        assert!(out.contains(
            "<help>I need the answer to: What is the motto of the founder of barceldor?</help>"
        ));
    }

    #[test]
    fn novice_answers_intermediate_entity_after_one_hop() {
        let user = "## Task\nWhat is the motto of the founder of barceldor?\n\
                    ## Progress so far\nHelp: I need the answer to: ...\n\
                    Knowledge: - the founder of barceldor is tavwisgal. [source abc]\n\
                    - the motto of tavwisgal is amber lantern. [source def]\n";
        let out = ReferencePolicy::new()
            .complete(&request(SOLVE_SYSTEM, user))
            .unwrap();
        // Even though the terminal fact is visible, the novice cannot
        // chain: it stops after one hop.
        assert!(out.contains("<answer>tavwisgal</answer>"), "got {out}");
    }

    #[test]
    fn expert_walks_the_chain_step_by_step() {
        let lesson_user = format!(
            "## Prior experience\n- {DECOMPOSE_LESSON_TITLE}: split it up\n\
             ## Task\nWhat is the motto of the founder of barceldor?\n"
        );
        let out = ReferencePolicy::new()
            .complete(&request(SOLVE_SYSTEM, &lesson_user))
            .unwrap();
        assert!(
            out.contains("<help>I need the founder of barceldor.</help>"),
            "got {out}"
        );

        let with_first_hop = format!(
            "{lesson_user}## Progress so far\n\
             Help: I need the founder of barceldor.\n\
             Knowledge: - the founder of barceldor is tavwisgal. [source abc]\n"
        );
        let out = ReferencePolicy::new()
            .complete(&request(SOLVE_SYSTEM, &with_first_hop))
            .unwrap();
        assert!(
            out.contains("<help>I need the motto of tavwisgal.</help>"),
            "got {out}"
        );

        let with_both = format!(
            "{with_first_hop}Help: I need the motto of tavwisgal.\n\
             Knowledge: - the motto of tavwisgal is amber lantern. [source def]\n"
        );
        let out = ReferencePolicy::new()
            .complete(&request(SOLVE_SYSTEM, &with_both))
            .unwrap();
        assert!(out.contains("<answer>amber lantern</answer>"), "got {out}");
    }

    #[test]
    fn critique_block_also_unlocks_expert_mode() {
        let user = "## Self-reflection notes\nAttempt 1 critique: decompose it\n\
                    ## Task\nWhat is the motto of the founder of barceldor?\n";
        let out = ReferencePolicy::new()
            .complete(&request(SOLVE_SYSTEM, user))
            .unwrap();
        assert!(out.contains("<help>I need the founder of barceldor.</help>"));
    }

    #[test]
    fn tool_descriptions_unlock_direct_tool_calls() {
        let system = format!("{SOLVE_SYSTEM}\n## Available tools\n- web_search: search pages\n");
        let user = "## Task\nWhat is the motto of the founder of barceldor?\n";
        let out = ReferencePolicy::new()
            .complete(&request(&system, user))
            .unwrap();
        assert!(
            out.contains("<tool name=\"web_search\">the founder of barceldor</tool>"),
            "got {out}"
        );
    }

    #[test]
    fn reflection_is_confident_only_when_chain_supports_answer() {
        let system = format!("You are {SELF_REFLECT_PROMPT_MARKER} at a task.");
        let resolved = "## Task\nWhat is the motto of the founder of barceldor?\n\
                        ## Trajectory under review\n\
                        Knowledge: - the founder of barceldor is tavwisgal.\n\
                        Knowledge: - the motto of tavwisgal is amber lantern.\n\
                        Answer: amber lantern\n";
        let out = ReferencePolicy::new()
            .complete(&request(&system, resolved))
            .unwrap();
        assert!(out.ends_with("VERDICT: CONFIDENT"), "got {out}");

        let unresolved = "## Task\nWhat is the motto of the founder of barceldor?\n\
                          ## Trajectory under review\n\
                          Knowledge: - the founder of barceldor is tavwisgal.\n\
                          Answer: tavwisgal\n";
        let out = ReferencePolicy::new()
            .complete(&request(&system, unresolved))
            .unwrap();
        assert!(out.ends_with("VERDICT: UNCERTAIN"));
        assert!(out.contains("Decompose"));
    }

    #[test]
    fn verified_reflection_always_distills_the_decompose_lesson() {
        let system = format!("You are {VERIFIED_REFLECT_PROMPT_MARKER}.");
        let out = ReferencePolicy::new()
            .complete(&request(&system, "anything"))
            .unwrap();
        assert!(out.starts_with(&format!("LESSON: {DECOMPOSE_LESSON_TITLE}")));
    }

    #[test]
    fn fact_parser_reads_cited_and_plain_sentences() {
        let facts = parse_facts(
            "- the founder of barceldor is tavwisgal. [source abc]\n\
             The motto of tavwisgal is amber lantern. Noise here.",
        );
        assert_eq!(
            facts.get(&("founder".into(), "barceldor".into())).unwrap(),
            "tavwisgal"
        );
        assert_eq!(
            facts.get(&("motto".into(), "tavwisgal".into())).unwrap(),
            "amber lantern"
        );
    }
}
