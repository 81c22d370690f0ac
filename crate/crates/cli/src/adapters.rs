//! Task-file readers. The native format is a JSON array of tasks; the
//! benchmark adapters parse the external formats into the same shape.
//! They are input parsers only — running those benchmarks needs live
//! endpoints and stays outside CI.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use magellan_core::types::{validate_batch, Task};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFormat {
    #[default]
    Native,
    Gaia,
    Webwalkerqa,
    Browsecomp,
}

pub fn load_tasks(path: &Path, format: TaskFormat) -> Result<Vec<Task>, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let tasks = match format {
        TaskFormat::Native => serde_json::from_str::<Vec<Task>>(&raw)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        TaskFormat::Gaia => parse_gaia(&raw)?,
        TaskFormat::Webwalkerqa => parse_webwalkerqa(&raw)?,
        TaskFormat::Browsecomp => parse_browsecomp(&raw)?,
    };
    validate_batch(&tasks).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(tasks)
}

fn get_str(value: &Value, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| value.get(k).and_then(Value::as_str))
        .map(str::to_string)
}

/// GAIA metadata is line-delimited JSON. Only text-only tasks (empty
/// `file_name`) are kept, matching the text-only validation subset.
fn parse_gaia(raw: &str) -> Result<Vec<Task>, CliError> {
    let mut tasks = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line)
            .map_err(|e| CliError::Config(format!("gaia line {}: {e}", i + 1)))?;
        if let Some(file) = value.get("file_name").and_then(Value::as_str) {
            if !file.is_empty() {
                continue;
            }
        }
        let query = get_str(&value, &["Question", "question"])
            .ok_or_else(|| CliError::Config(format!("gaia line {}: no question", i + 1)))?;
        let id = get_str(&value, &["task_id", "id"]).unwrap_or_else(|| format!("gaia-{i:04}"));
        let mut task = Task::new(id, query);
        task.gold_answer = get_str(&value, &["Final answer", "answer"]);
        let mut meta = BTreeMap::new();
        meta.insert("benchmark".into(), "gaia".into());
        if let Some(level) = value.get("Level") {
            meta.insert("level".into(), level.to_string().trim_matches('"').into());
        }
        task.meta = meta;
        tasks.push(task);
    }
    Ok(tasks)
}

/// WebWalkerQA ships a JSON array of {question, answer, …}.
fn parse_webwalkerqa(raw: &str) -> Result<Vec<Task>, CliError> {
    let values: Vec<Value> =
        serde_json::from_str(raw).map_err(|e| CliError::Config(format!("webwalkerqa: {e}")))?;
    let mut tasks = Vec::new();
    for (i, value) in values.iter().enumerate() {
        let query = get_str(value, &["question", "Question"])
            .ok_or_else(|| CliError::Config(format!("webwalkerqa item {i}: no question")))?;
        let mut task = Task::new(format!("ww-{i:04}"), query);
        task.gold_answer = get_str(value, &["answer", "Answer"]);
        task.meta.insert("benchmark".into(), "webwalkerqa".into());
        if let Some(difficulty) = get_str(value, &["difficulty", "difficulty_level"]) {
            task.meta.insert("difficulty".into(), difficulty);
        }
        tasks.push(task);
    }
    Ok(tasks)
}

/// BrowseComp, decrypted form: a JSON array of {problem, answer, topic?}.
fn parse_browsecomp(raw: &str) -> Result<Vec<Task>, CliError> {
    let values: Vec<Value> =
        serde_json::from_str(raw).map_err(|e| CliError::Config(format!("browsecomp: {e}")))?;
    let mut tasks = Vec::new();
    for (i, value) in values.iter().enumerate() {
        let query = get_str(value, &["problem", "question"])
            .ok_or_else(|| CliError::Config(format!("browsecomp item {i}: no problem")))?;
        let mut task = Task::new(format!("bc-{i:04}"), query);
        task.gold_answer = get_str(value, &["answer", "Answer"]);
        task.meta.insert("benchmark".into(), "browsecomp".into());
        if let Some(topic) = get_str(value, &["topic", "Topic"]) {
            task.meta.insert("topic".into(), topic);
        }
        tasks.push(task);
    }
    Ok(tasks)
}
