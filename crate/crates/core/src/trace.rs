//! Line-delimited JSON task traces: one record per trajectory event plus
//! context-render, reflection, note, and report records, each stamped
//! with task id, attempt, a per-task monotone sequence number, and a
//! timestamp. Runs with scripted providers are byte-identical across
//! repeats once timestamps are masked.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::types::TrajectoryEvent;

/// A lesson as rendered into a context, with its audit trail. Leakage
/// checks grep these against the record's own task id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LessonAudit {
    pub title: String,
    pub derived_from: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TracePayload {
    ContextRender {
        rendered: String,
        experience_version: u32,
        experience_lessons: Vec<LessonAudit>,
        self_reflection_present: bool,
    },
    Event {
        event: TrajectoryEvent,
    },
    Reflection {
        kind: String,
        verdict: Option<String>,
        detail: String,
        experience_version: Option<u32>,
    },
    Note {
        text: String,
    },
    Report {
        status: String,
        final_answer: Option<String>,
        attempts: u32,
        help_requests_used: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub task_id: String,
    pub attempt: u32,
    pub seq: u64,
    pub timestamp: u64,
    #[serde(flatten)]
    pub payload: TracePayload,
}

/// Destination for trace records. Implementations lock internally; the
/// engine may write from several task threads at once.
pub trait TraceSink: Send + Sync {
    fn write(&self, record: &TraceRecord);
}

/// Discards everything.
pub struct NullTraceSink;

impl TraceSink for NullTraceSink {
    fn write(&self, _record: &TraceRecord) {}
}

/// Collects records in memory; the workhorse for tests and audits.
#[derive(Default)]
pub struct VecTraceSink {
    records: Mutex<Vec<TraceRecord>>,
}

impl VecTraceSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }
}

impl TraceSink for VecTraceSink {
    fn write(&self, record: &TraceRecord) {
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(record.clone());
    }
}

/// One `<task_id>.trace.jsonl` file per task under a directory.
pub struct DirTraceSink {
    dir: PathBuf,
    files: Mutex<BTreeMap<String, std::fs::File>>,
}

impl DirTraceSink {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(DirTraceSink {
            dir,
            files: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn path_for(&self, task_id: &str) -> PathBuf {
        self.dir.join(format!("{}.trace.jsonl", sanitize(task_id)))
    }
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl TraceSink for DirTraceSink {
    fn write(&self, record: &TraceRecord) {
        let Ok(line) = serde_json::to_string(record) else {
            return;
        };
        let mut files = self.files.lock().unwrap_or_else(|e| e.into_inner());
        let file = files.entry(record.task_id.clone()).or_insert_with(|| {
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.path_for(&record.task_id))
                .unwrap_or_else(|_| {
                    // Fall back to a discard handle; tracing must not
                    // bring the run down.
                    std::fs::File::create(std::env::temp_dir().join("magellan-trace-fallback"))
                        .expect("temp file")
                })
        });
        let _ = writeln!(file, "{line}");
    }
}

/// One parsed line of a trace file.
pub enum TraceLine {
    Record(Box<TraceRecord>),
    /// Unparseable line, kept so rendering can mark and continue.
    Corrupt {
        line_no: usize,
        raw: String,
    },
}

/// Reads a trace file leniently: corrupt lines become markers instead of
/// aborting.
pub fn read_trace(path: &Path) -> std::io::Result<Vec<TraceLine>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceRecord>(&line) {
            Ok(record) => out.push(TraceLine::Record(Box::new(record))),
            Err(_) => out.push(TraceLine::Corrupt {
                line_no: i + 1,
                raw: line,
            }),
        }
    }
    Ok(out)
}

/// Scans context-render records for lessons derived from the very task
/// being solved. Any hit is a leakage violation.
pub fn audit_leakage(records: &[TraceRecord]) -> Vec<String> {
    let mut violations = Vec::new();
    for record in records {
        if let TracePayload::ContextRender {
            experience_lessons, ..
        } = &record.payload
        {
            for lesson in experience_lessons {
                if lesson.derived_from.iter().any(|id| id == &record.task_id) {
                    violations.push(format!(
                        "task {} attempt {} rendered lesson {:?} derived from itself",
                        record.task_id, record.attempt, lesson.title
                    ));
                }
            }
        }
    }
    violations
}

/// Copy of a record with the timestamp masked, for byte-determinism
/// comparisons between runs.
pub fn mask_timestamp(record: &TraceRecord) -> TraceRecord {
    let mut masked = record.clone();
    masked.timestamp = 0;
    masked
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(task: &str, seq: u64, payload: TracePayload) -> TraceRecord {
        TraceRecord {
            task_id: task.into(),
            attempt: 1,
            seq,
            timestamp: 123,
            payload,
        }
    }

    #[test]
    fn trace_round_trips_through_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let sink = DirTraceSink::new(dir.path()).unwrap();
        sink.write(&record(
            "t1",
            0,
            TracePayload::Event {
                event: TrajectoryEvent::Reasoning { text: "hm".into() },
            },
        ));
        sink.write(&record(
            "t1",
            1,
            TracePayload::Note {
                text: "note".into(),
            },
        ));
        let lines = read_trace(&sink.path_for("t1")).unwrap();
        assert_eq!(lines.len(), 2);
        assert!(matches!(&lines[0], TraceLine::Record(r) if r.seq == 0));
    }

    #[test]
    fn corrupt_lines_are_marked_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.trace.jsonl");
        std::fs::write(
            &path,
            "{\"task_id\":\"t\",\"attempt\":1,\"seq\":0,\"timestamp\":0,\"type\":\"note\",\"text\":\"ok\"}\nnot json\n",
        )
        .unwrap();
        let lines = read_trace(&path).unwrap();
        assert_eq!(lines.len(), 2);
        assert!(matches!(&lines[1], TraceLine::Corrupt { line_no: 2, .. }));
    }

    #[test]
    fn leakage_audit_flags_self_derived_lessons() {
        let clean = record(
            "t2",
            0,
            TracePayload::ContextRender {
                rendered: String::new(),
                experience_version: 1,
                experience_lessons: vec![LessonAudit {
                    title: "L".into(),
                    derived_from: vec!["t1".into()],
                }],
                self_reflection_present: false,
            },
        );
        assert!(audit_leakage(std::slice::from_ref(&clean)).is_empty());
        let leaky = record(
            "t1",
            1,
            TracePayload::ContextRender {
                rendered: String::new(),
                experience_version: 1,
                experience_lessons: vec![LessonAudit {
                    title: "L".into(),
                    derived_from: vec!["t1".into()],
                }],
                self_reflection_present: false,
            },
        );
        assert_eq!(audit_leakage(&[clean, leaky]).len(), 1);
    }
}
