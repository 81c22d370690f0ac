//! Aggregate run reports: per-task outcomes, accuracy under the selected
//! grading method, budget usage, the experience-version timeline, and
//! structural tool metrics. Serialized as JSON next to a rendered text
//! table; fixture runs produce byte-identical reports for a fixed
//! seed and configuration.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use magellan_core::orchestrator::{BatchOutput, SolveStatus};
use magellan_core::provider::ChatHandle;
use magellan_core::reflection::{grade, GradeMethod};
use magellan_core::router::KB_RETRIEVE_TOOL;
use magellan_core::types::{Task, TrajectoryEvent};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub status: String,
    pub attempts: u32,
    pub help_requests_used: u32,
    pub final_answer: Option<String>,
    /// None when the task has no gold answer.
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub benchmark: String,
    pub variant: String,
    pub n_tasks: usize,
    pub answered: usize,
    pub graded: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub help_requests_total: u64,
    pub attempts_total: u64,
    pub experience_versions: Vec<u32>,
    pub dispatch_counts: BTreeMap<String, u64>,
    pub kb_retrieve_dispatches: u64,
    /// Direct tool-call parses (router-off mode records them as helps).
    pub tool_call_parses: u64,
    pub per_task: Vec<TaskRow>,
}

pub fn build_report(
    benchmark: &str,
    variant: &str,
    tasks: &[Task],
    batch: &BatchOutput,
    method: GradeMethod,
    judge: Option<&ChatHandle>,
    router_enabled: bool,
) -> Result<AggregateReport, CliError> {
    let mut rows = Vec::with_capacity(batch.reports.len());
    let mut answered = 0usize;
    let mut graded = 0usize;
    let mut correct = 0usize;
    let mut help_total = 0u64;
    let mut attempt_total = 0u64;
    let gold_by_id: BTreeMap<&str, &str> = tasks
        .iter()
        .filter_map(|t| t.gold_answer.as_deref().map(|g| (t.id.as_str(), g)))
        .collect();

    for report in &batch.reports {
        if report.status == SolveStatus::Answered {
            answered += 1;
        }
        help_total += u64::from(report.help_requests_used);
        attempt_total += u64::from(report.attempts);
        let verdict = match (
            &report.final_answer,
            gold_by_id.get(report.task_id.as_str()),
        ) {
            (Some(answer), Some(gold)) => {
                graded += 1;
                let v = grade(answer, gold, method, judge)
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                if v.correct {
                    correct += 1;
                }
                Some(v.correct)
            }
            (None, Some(_)) => {
                graded += 1;
                Some(false)
            }
            _ => None,
        };
        rows.push(TaskRow {
            task_id: report.task_id.clone(),
            status: report.status.as_str().to_string(),
            attempts: report.attempts,
            help_requests_used: report.help_requests_used,
            final_answer: report.final_answer.clone(),
            correct: verdict,
        });
    }

    let tool_call_parses = if router_enabled {
        0
    } else {
        batch
            .reports
            .iter()
            .flat_map(|r| r.trajectories.iter())
            .flat_map(|t| t.events.iter())
            .filter(|e| matches!(e, TrajectoryEvent::HelpRequest { .. }))
            .count() as u64
    };

    Ok(AggregateReport {
        benchmark: benchmark.to_string(),
        variant: variant.to_string(),
        n_tasks: batch.reports.len(),
        answered,
        graded,
        correct,
        accuracy: if graded == 0 {
            0.0
        } else {
            correct as f64 / graded as f64
        },
        help_requests_total: help_total,
        attempts_total: attempt_total,
        experience_versions: batch
            .experience_timeline
            .iter()
            .map(|e| e.version)
            .collect(),
        kb_retrieve_dispatches: *batch.dispatch_counts.get(KB_RETRIEVE_TOOL).unwrap_or(&0),
        dispatch_counts: batch.dispatch_counts.clone(),
        tool_call_parses,
        per_task: rows,
    })
}

pub fn render_table(reports: &[AggregateReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<22} {:>7} {:>9} {:>8} {:>9} {:>12} {:>11}\n",
        "variant", "correct", "accuracy", "answers", "attempts", "kb_retrieve", "tool_parses"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<22} {:>3}/{:<3} {:>8.1}% {:>8} {:>9} {:>12} {:>11}\n",
            r.variant,
            r.correct,
            r.graded,
            r.accuracy * 100.0,
            r.answered,
            r.attempts_total,
            r.kb_retrieve_dispatches,
            r.tool_call_parses
        ));
    }
    out
}

pub fn render_task_table(report: &AggregateReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "benchmark: {}  variant: {}\n",
        report.benchmark, report.variant
    ));
    out.push_str(&format!(
        "{:<8} {:<16} {:>8} {:>6} {:>8}  {}\n",
        "task", "status", "attempts", "helps", "correct", "answer"
    ));
    for row in &report.per_task {
        out.push_str(&format!(
            "{:<8} {:<16} {:>8} {:>6} {:>8}  {}\n",
            row.task_id,
            row.status,
            row.attempts,
            row.help_requests_used,
            row.correct.map_or("-".into(), |c| c.to_string()),
            row.final_answer.as_deref().unwrap_or("-")
        ));
    }
    out.push_str(&format!(
        "correct {}/{} ({:.1}%), experience versions {:?}\n",
        report.correct,
        report.graded,
        report.accuracy * 100.0,
        report.experience_versions
    ));
    out
}
