//! The reflective processes: gold-free self-reflection whose UNCERTAIN
//! verdict triggers a retry, gold-aware verified reflection that evolves
//! the experience state with titled, transferable lessons, and answer
//! grading.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::PromptContext;
use crate::provider::{ChatHandle, ChatRequest, Message};
use crate::types::{ExperienceState, Lesson, Trajectory, TrajectoryEvent};

#[derive(Debug, Error)]
pub enum GradeError {
    #[error("grading inputs must be non-empty")]
    EmptyInput,
    #[error("llm_equivalence grading requires a live provider")]
    NoProvider,
    #[error("equivalence judge failed: {0}")]
    Judge(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReflectVerdict {
    Confident,
    Uncertain,
}

/// Outcome of a gold-free review of the finished attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfReflection {
    pub critique: String,
    pub verdict: ReflectVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradeMethod {
    ExactMatch,
    LlmEquivalence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub correct: bool,
    pub method: GradeMethod,
}

pub(crate) fn render_trajectory(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for event in &trajectory.events {
        match event {
            TrajectoryEvent::Reasoning { text } => out.push_str(&format!("Thought: {text}\n")),
            TrajectoryEvent::HelpRequest { text, seq_index } => {
                out.push_str(&format!("Help[{seq_index}]: {text}\n"))
            }
            TrajectoryEvent::Knowledge { distilled_text, .. } => {
                out.push_str(&format!("Knowledge: {distilled_text}\n"))
            }
            TrajectoryEvent::FinalAnswer { text } => out.push_str(&format!("Answer: {text}\n")),
        }
    }
    out
}

const VERDICT_MARKER: &str = "VERDICT:";

/// Marker fragment identifying a self-reflection prompt; deterministic
/// policies key on it.
pub const SELF_REFLECT_PROMPT_MARKER: &str = "reviewing your own finished attempt";
/// Marker fragment identifying a verified-reflection prompt.
pub const VERIFIED_REFLECT_PROMPT_MARKER: &str = "distilling lessons from a completed task";

/// Splits reflector output into critique text and a strictly parsed
/// verdict token. Anything unparseable fails safe to UNCERTAIN.
fn parse_verdict(output: &str) -> (String, ReflectVerdict, bool) {
    if let Some(pos) = output.rfind(VERDICT_MARKER) {
        let token = output[pos + VERDICT_MARKER.len()..].trim();
        let critique = output[..pos].trim().to_string();
        match token {
            "CONFIDENT" => return (critique, ReflectVerdict::Confident, true),
            "UNCERTAIN" => return (critique, ReflectVerdict::Uncertain, true),
            _ => {}
        }
    }
    (output.trim().to_string(), ReflectVerdict::Uncertain, false)
}

/// Reviews a finished attempt without the gold answer. The reflector
/// prompt demands an explicit final verdict token; a missing or mangled
/// token is treated as UNCERTAIN with a parser note, so doubt always
/// errs toward a retry.
pub fn self_reflect(
    context: &PromptContext,
    trajectory: &Trajectory,
    provider: &ChatHandle,
) -> SelfReflection {
    debug_assert!(trajectory.final_answer().is_some());
    let system = "You are reviewing your own finished attempt at a task. Check every \
                  requirement in the task against the evidence gathered, and judge \
                  whether the final answer is actually supported. Summarize any flaw, \
                  unmet constraint, or doubt. End with exactly one line: \
                  'VERDICT: CONFIDENT' or 'VERDICT: UNCERTAIN'."
        .to_string();
    let user = format!(
        "{}\n## Trajectory under review\n{}",
        context.render_user(),
        render_trajectory(trajectory)
    );
    let request = ChatRequest::new(vec![Message::system(system), Message::user(user)]);
    let output = match provider.complete(&request) {
        Ok(text) => text,
        Err(e) => {
            return SelfReflection {
                critique: format!("reflection provider failed: {e}"),
                verdict: ReflectVerdict::Uncertain,
            }
        }
    };
    let (mut critique, verdict, parsed) = parse_verdict(&output);
    if !parsed {
        if !critique.is_empty() {
            critique.push(' ');
        }
        critique.push_str("(reflector emitted no verdict token; treated as UNCERTAIN)");
    }
    if verdict == ReflectVerdict::Uncertain && critique.trim().is_empty() {
        critique = "(no critique text provided)".into();
    }
    SelfReflection { critique, verdict }
}

fn parse_lessons(output: &str, body_cap: usize) -> Vec<(String, String)> {
    let mut lessons: Vec<(String, String)> = Vec::new();
    let mut current: Option<(String, String)> = None;
    for line in output.lines() {
        if let Some(title) = line.trim().strip_prefix("LESSON:") {
            if let Some(done) = current.take() {
                lessons.push(done);
            }
            let title = title.trim().to_string();
            if !title.is_empty() {
                current = Some((title, String::new()));
            }
        } else if let Some((_, body)) = current.as_mut() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !body.is_empty() {
                body.push(' ');
            }
            body.push_str(line);
        }
    }
    if let Some(done) = current.take() {
        lessons.push(done);
    }
    for (_, body) in &mut lessons {
        if body.chars().count() > body_cap {
            *body = body.chars().take(body_cap).collect();
        }
    }
    lessons
}

/// Compares the attempt against the gold answer and folds newly distilled
/// lessons into the prior experience. The returned state always has
/// version prior+1; a re-emitted title reinforces the existing lesson.
/// Beyond the cap, the least recently reinforced lessons are evicted.
/// On provider failure the prior state is returned unchanged together
/// with a warning for the caller to log.
pub fn verified_reflect(
    context: &PromptContext,
    trajectory: &Trajectory,
    gold: &str,
    prior: &ExperienceState,
    provider: &ChatHandle,
    lesson_cap: usize,
    body_cap: usize,
) -> (ExperienceState, Option<String>) {
    debug_assert!(!gold.is_empty());
    let task_id = trajectory.task_id.clone();
    let system = format!(
        "You are distilling lessons from a completed task, with the reference \
         answer available. Compare the predicted answer against the reference \
         and analyze what made the approach succeed or fail. Abstract short, \
         transferable lessons about planning, tool use, and evidence checking \
         — never task-specific facts. Write each lesson as:\n\
         LESSON: <short title>\n\
         <one or two sentences, at most {body_cap} characters>\n\
         Re-state an existing lesson's title to reinforce it."
    );
    let mut prior_block = String::new();
    for lesson in &prior.lessons {
        prior_block.push_str(&format!("- {}: {}\n", lesson.title, lesson.body));
    }
    let predicted = trajectory.final_answer().unwrap_or("(no answer)");
    let user = format!(
        "{}\n## Trajectory\n{}\nPredicted answer: {predicted}\nReference answer: {gold}\n\
         ## Prior lessons\n{prior_block}",
        context.render_user(),
        render_trajectory(trajectory),
    );
    let request = ChatRequest::new(vec![Message::system(system), Message::user(user)]);
    let output = match provider.complete(&request) {
        Ok(text) => text,
        Err(e) => {
            return (
                prior.clone(),
                Some(format!("verified reflection provider failed: {e}")),
            )
        }
    };

    let version = prior.version + 1;
    let mut lessons = prior.lessons.clone();
    for (title, body) in parse_lessons(&output, body_cap) {
        match lessons.iter_mut().find(|l| l.title == title) {
            Some(existing) => {
                if !body.is_empty() {
                    existing.body = body;
                }
                if !existing.derived_from.contains(&task_id) {
                    existing.derived_from.push(task_id.clone());
                }
                existing.reinforced_at_version = version;
            }
            None => lessons.push(Lesson {
                title,
                body,
                derived_from: vec![task_id.clone()],
                reinforced_at_version: version,
            }),
        }
    }
    while lessons.len() > lesson_cap {
        let evict = lessons
            .iter()
            .enumerate()
            .min_by_key(|(i, l)| (l.reinforced_at_version, *i))
            .map(|(i, _)| i)
            .expect("non-empty");
        lessons.remove(evict);
    }
    (ExperienceState { version, lessons }, None)
}

/// Normalization behind exact-match grading: lowercase, trim, collapse
/// whitespace, strip surrounding punctuation, drop one leading article,
/// and remove thousands separators from pure numbers.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let collapsed = lowered.split_whitespace().collect::<Vec<_>>().join(" ");
    let stripped = collapsed
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_string();
    let mut out = stripped;
    for article in ["a ", "an ", "the "] {
        if let Some(rest) = out.strip_prefix(article) {
            out = rest.trim_start().to_string();
            break;
        }
    }
    let is_pure_number = !out.is_empty()
        && out
            .chars()
            .all(|c| c.is_ascii_digit() || c == ',' || c == '.')
        && out.chars().any(|c| c.is_ascii_digit());
    if is_pure_number {
        out = out.replace(',', "");
    }
    out
}

/// Grades a predicted answer against gold. Exact match compares the
/// normalized forms; LLM equivalence asks a live judge for yes/no.
pub fn grade(
    predicted: &str,
    gold: &str,
    method: GradeMethod,
    provider: Option<&ChatHandle>,
) -> Result<Verdict, GradeError> {
    if predicted.trim().is_empty() || gold.trim().is_empty() {
        return Err(GradeError::EmptyInput);
    }
    match method {
        GradeMethod::ExactMatch => Ok(Verdict {
            correct: normalize_answer(predicted) == normalize_answer(gold),
            method,
        }),
        GradeMethod::LlmEquivalence => {
            let provider = provider.ok_or(GradeError::NoProvider)?;
            let request = ChatRequest::new(vec![
                Message::system(
                    "Judge whether the candidate answer is equivalent to the reference \
                     answer for the given question context. Reply with exactly 'yes' \
                     or 'no'.",
                ),
                Message::user(format!("Candidate: {predicted}\nReference: {gold}")),
            ]);
            let output = provider
                .complete(&request)
                .map_err(|e| GradeError::Judge(e.to_string()))?;
            let first = output.trim().to_lowercase();
            Ok(Verdict {
                correct: first.starts_with("yes"),
                method,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::orchestrator::{build_context, ContextOptions};
    use crate::provider::ScriptedChatProvider;
    use crate::types::Task;

    fn answered_trajectory(answer: &str) -> Trajectory {
        let mut t = Trajectory::new("t1", 1);
        t.events.push(TrajectoryEvent::FinalAnswer {
            text: answer.into(),
        });
        t
    }

    fn context_for(trajectory: &Trajectory) -> PromptContext {
        build_context(
            &Task::new("t1", "what color?"),
            &ExperienceState::initial(),
            &[],
            trajectory,
            &ContextOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn missing_verdict_token_fails_safe_to_uncertain() {
        let trajectory = answered_trajectory("blue");
        let context = context_for(&trajectory);
        let provider: ChatHandle = Arc::new(ScriptedChatProvider::from_responses([
            "looks plausible to me",
        ]));
        let reflection = self_reflect(&context, &trajectory, &provider);
        assert_eq!(reflection.verdict, ReflectVerdict::Uncertain);
        assert!(reflection.critique.contains("no verdict token"));
    }

    #[test]
    fn verdict_tokens_parse_strictly() {
        let trajectory = answered_trajectory("blue");
        let context = context_for(&trajectory);
        for (raw, expected) in [
            ("all good\nVERDICT: CONFIDENT", ReflectVerdict::Confident),
            (
                "missed a constraint\nVERDICT: UNCERTAIN",
                ReflectVerdict::Uncertain,
            ),
        ] {
            let provider: ChatHandle = Arc::new(ScriptedChatProvider::from_responses([raw]));
            let reflection = self_reflect(&context, &trajectory, &provider);
            assert_eq!(reflection.verdict, expected);
        }
    }

    #[test]
    fn verified_reflect_increments_version_and_records_derivation() {
        let trajectory = answered_trajectory("wrong answer");
        let context = context_for(&trajectory);
        let provider: ChatHandle = Arc::new(ScriptedChatProvider::from_responses([
            "LESSON: Check Every Constraint\nTreat each stated requirement as a mandatory filter.",
        ]));
        let prior = ExperienceState {
            version: 4,
            lessons: vec![],
        };
        let (state, warning) =
            verified_reflect(&context, &trajectory, "gold", &prior, &provider, 12, 400);
        assert!(warning.is_none());
        assert_eq!(state.version, 5);
        assert_eq!(state.lessons.len(), 1);
        assert_eq!(state.lessons[0].derived_from, vec!["t1".to_string()]);
    }

    #[test]
    fn lesson_cap_evicts_least_recently_reinforced() {
        let trajectory = answered_trajectory("x");
        let context = context_for(&trajectory);
        let provider: ChatHandle = Arc::new(ScriptedChatProvider::from_responses([
            "LESSON: New One\nbody\nLESSON: New Two\nbody",
        ]));
        let prior = ExperienceState {
            version: 3,
            lessons: vec![
                Lesson {
                    title: "Old A".into(),
                    body: "a".into(),
                    derived_from: vec!["t0".into()],
                    reinforced_at_version: 1,
                },
                Lesson {
                    title: "Old B".into(),
                    body: "b".into(),
                    derived_from: vec!["t0".into()],
                    reinforced_at_version: 3,
                },
                Lesson {
                    title: "Old C".into(),
                    body: "c".into(),
                    derived_from: vec!["t0".into()],
                    reinforced_at_version: 2,
                },
            ],
        };
        let (state, _) = verified_reflect(&context, &trajectory, "gold", &prior, &provider, 3, 400);
        assert_eq!(state.lessons.len(), 3);
        let titles: Vec<&str> = state.lessons.iter().map(|l| l.title.as_str()).collect();
        // Old A (v1) and Old C (v2) go; Old B (v3) and the two new stay.
        assert_eq!(titles, vec!["Old B", "New One", "New Two"]);
    }

    #[test]
    fn reemitted_lesson_is_reinforced_not_duplicated() {
        let trajectory = answered_trajectory("x");
        let context = context_for(&trajectory);
        let provider: ChatHandle = Arc::new(ScriptedChatProvider::from_responses([
            "LESSON: Stay Skeptical\nrefreshed body",
        ]));
        let prior = ExperienceState {
            version: 1,
            lessons: vec![Lesson {
                title: "Stay Skeptical".into(),
                body: "old body".into(),
                derived_from: vec!["t0".into()],
                reinforced_at_version: 1,
            }],
        };
        let (state, _) =
            verified_reflect(&context, &trajectory, "gold", &prior, &provider, 12, 400);
        assert_eq!(state.lessons.len(), 1);
        assert_eq!(state.lessons[0].body, "refreshed body");
        assert_eq!(state.lessons[0].reinforced_at_version, 2);
        assert_eq!(
            state.lessons[0].derived_from,
            vec!["t0".to_string(), "t1".to_string()]
        );
    }

    #[test]
    fn provider_failure_returns_prior_unchanged() {
        let trajectory = answered_trajectory("x");
        let context = context_for(&trajectory);
        // Empty script: first call underruns.
        let provider: ChatHandle = Arc::new(ScriptedChatProvider::new(vec![]));
        let prior = ExperienceState::initial();
        let (state, warning) =
            verified_reflect(&context, &trajectory, "gold", &prior, &provider, 12, 400);
        assert_eq!(state, prior);
        assert!(warning.is_some());
    }

    #[test]
    fn exact_match_normalizes_punctuation_case_and_articles() {
        let verdict = grade(" Copper.", "Copper", GradeMethod::ExactMatch, None).unwrap();
        assert!(verdict.correct);
        let verdict = grade("The Copper", "copper", GradeMethod::ExactMatch, None).unwrap();
        assert!(verdict.correct);
    }

    #[test]
    fn wrong_answer_is_incorrect() {
        let verdict = grade(
            "silver-gray with dark blue accents",
            "Copper",
            GradeMethod::ExactMatch,
            None,
        )
        .unwrap();
        assert!(!verdict.correct);
    }

    #[test]
    fn numeric_thousands_separators_are_stripped() {
        let verdict = grade("1,000", "1000", GradeMethod::ExactMatch, None).unwrap();
        assert!(verdict.correct);
    }

    #[test]
    fn llm_equivalence_without_provider_is_a_config_error() {
        assert!(matches!(
            grade("a", "b", GradeMethod::LlmEquivalence, None),
            Err(GradeError::NoProvider)
        ));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(
            grade("", "gold", GradeMethod::ExactMatch, None),
            Err(GradeError::EmptyInput)
        ));
    }
}
