//! Subcommand implementations. Each returns printable output instead of
//! printing directly, so tests drive them as functions and main stays a
//! thin shell.

use std::path::{Path, PathBuf};

use magellan_core::orchestrator::{BatchOutput, SolveStatus};
use magellan_core::reflection::{grade, GradeMethod};
use magellan_core::trace::{read_trace, TraceLine, TracePayload};
use magellan_core::types::{RunConfig, TrajectoryEvent};

use crate::config::{build_engine, BuiltEngine, FileConfig};
use crate::error::CliError;
use crate::report::{build_report, render_table, render_task_table, AggregateReport};
use crate::world::{generate_world, WorldParams};

/// Flag-level overrides applied on top of the config file's `[run]`.
#[derive(Debug, Default, Clone)]
pub struct RunOverrides {
    pub max_help_requests: Option<u32>,
    pub max_retries: Option<u32>,
    pub warmup_passes: Option<u32>,
    pub retrieval_top_k: Option<usize>,
    pub distill_token_budget: Option<usize>,
    pub experience_lesson_cap: Option<usize>,
    pub no_action_limit: Option<u32>,
    pub fanout_cap: Option<usize>,
    pub search_top_n: Option<usize>,
    pub minimal_only: bool,
    pub no_self_reflection: bool,
    pub no_verified_reflection: bool,
    pub no_in_house_tool: bool,
    pub no_router: bool,
    pub parallel_batch: bool,
}

impl RunOverrides {
    pub fn apply(&self, run: &mut RunConfig) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    run.$field = v;
                }
            };
        }
        set!(max_help_requests);
        set!(max_retries);
        set!(warmup_passes);
        set!(retrieval_top_k);
        set!(distill_token_budget);
        set!(experience_lesson_cap);
        set!(no_action_limit);
        set!(fanout_cap);
        set!(search_top_n);
        if self.minimal_only {
            run.ablation.minimal_only = true;
        }
        if self.no_self_reflection {
            run.ablation.self_reflection = false;
        }
        if self.no_verified_reflection {
            run.ablation.verified_reflection = false;
        }
        if self.no_in_house_tool {
            run.ablation.in_house_tool = false;
        }
        if self.no_router {
            run.ablation.router = false;
        }
        if self.parallel_batch {
            run.parallel_batch = true;
        }
    }
}

fn load_config(
    config_path: &Path,
    benchmark: Option<&str>,
    overrides: &RunOverrides,
) -> Result<(FileConfig, PathBuf, RunConfig), CliError> {
    let (config, base) = FileConfig::load(config_path)?;
    if let Some(name) = benchmark {
        if name != config.benchmark.name {
            return Err(CliError::Config(format!(
                "unknown benchmark name {name:?}; this configuration defines {:?}",
                config.benchmark.name
            )));
        }
    }
    let mut run = config.run.clone();
    overrides.apply(&mut run);
    Ok((config, base, run))
}

/// `warmup`: run the knowledge-gathering stage alone and report
/// ingestion statistics.
pub fn cmd_warmup(
    config_path: &Path,
    benchmark: Option<&str>,
    overrides: &RunOverrides,
    out: Option<PathBuf>,
) -> Result<String, CliError> {
    let (config, base, run) = load_config(config_path, benchmark, overrides)?;
    let built = build_engine(&config, &base, run, out)?;
    let summary = built
        .engine
        .warm_up(&built.tasks, &built.initial_experience)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    save_kb(&built)?;
    let stats = {
        let kb = built.engine.kb();
        let kb = kb.read().unwrap_or_else(|e| e.into_inner());
        kb.stats()
    };
    let mut out = format!(
        "warm-up complete: {} passes, {} simulations, {} failures\n\
         records: {} new, {} duplicate; store now holds {} records / {} chunks\n",
        summary.passes,
        summary.simulations,
        summary.failures,
        summary.new_records,
        summary.dup_records,
        stats.records,
        stats.chunks,
    );
    for (source, count) in &stats.by_source {
        out.push_str(&format!("  {source}: {count}\n"));
    }
    for note in &summary.notes {
        out.push_str(&format!("  note: {note}\n"));
    }
    Ok(out)
}

fn save_kb(built: &BuiltEngine) -> Result<(), CliError> {
    let kb = built.engine.kb();
    let kb = kb.read().unwrap_or_else(|e| e.into_inner());
    kb.save(&built.kb_dir)
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, body)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
}

fn run_once(
    config: &FileConfig,
    base: &Path,
    run: RunConfig,
    out: Option<PathBuf>,
    variant: &str,
) -> Result<(AggregateReport, BatchOutput, PathBuf), CliError> {
    let built = build_engine(config, base, run.clone(), out)?;
    let batch = built
        .engine
        .run_batch_with(&built.tasks, built.initial_experience.clone())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    save_kb(&built)?;
    let report = build_report(
        &config.benchmark.name,
        variant,
        &built.tasks,
        &batch,
        built.grade_method,
        built.grade_provider.as_ref(),
        run.normalized_ablation().router,
    )?;
    write_json(&built.out_dir.join("report.json"), &report)?;
    write_json(
        &built.out_dir.join("experience.json"),
        &batch.experience_timeline,
    )?;
    Ok((report, batch, built.out_dir))
}

/// `run`: warm-up plus the sequential batch, emitting per-task traces,
/// the aggregate report, and the experience snapshot file.
pub fn cmd_run(
    config_path: &Path,
    benchmark: Option<&str>,
    overrides: &RunOverrides,
    out: Option<PathBuf>,
) -> Result<(String, AggregateReport), CliError> {
    let (config, base, run) = load_config(config_path, benchmark, overrides)?;
    let mut preamble = String::new();
    if run.warmup_passes == 0 && run.normalized_ablation().in_house_tool {
        preamble.push_str(
            "warning: in-house tool enabled with zero warm-up passes; the knowledge base starts empty\n",
        );
    }
    let (report, batch, out_dir) = run_once(&config, &base, run, out, "configured")?;
    let completed = batch
        .reports
        .iter()
        .filter(|r| r.status != SolveStatus::ProviderError)
        .count();
    if completed == 0 {
        return Err(CliError::Runtime(
            "zero tasks completed; see traces for provider errors".into(),
        ));
    }
    let mut text = preamble;
    text.push_str(&render_task_table(&report));
    text.push_str(&format!("report written to {}\n", out_dir.display()));
    Ok((text, report))
}

/// One ablation variant: display name plus the flag mutation it applies.
pub type AblationVariant = (&'static str, fn(&mut RunConfig));

/// The ablation grid: the full configuration plus the five single-removal
/// variants.
pub fn ablation_variants() -> Vec<AblationVariant> {
    vec![
        ("full", |_c: &mut RunConfig| {}),
        ("w/o self reflection", |c| {
            c.ablation.self_reflection = false;
        }),
        ("w/o verified reflection", |c| {
            c.ablation.verified_reflection = false;
        }),
        ("w/o in-house tool", |c| {
            c.ablation.in_house_tool = false;
        }),
        ("minimal workflow", |c| {
            c.ablation.minimal_only = true;
        }),
        ("w/ tool description", |c| {
            c.ablation.router = false;
        }),
    ]
}

/// `ablate`: run every variant on the same benchmark, each in its own
/// output subdirectory with a fresh knowledge base.
pub fn cmd_ablate(
    config_path: &Path,
    benchmark: Option<&str>,
    overrides: &RunOverrides,
    out: Option<PathBuf>,
) -> Result<(String, Vec<AggregateReport>), CliError> {
    let (config, base, run) = load_config(config_path, benchmark, overrides)?;
    let root = out
        .or_else(|| config.output.dir.clone().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("magellan-ablate"));
    let mut reports = Vec::new();
    for (name, mutate) in ablation_variants() {
        let mut variant_run = run.clone();
        mutate(&mut variant_run);
        let sub = root.join(name.replace(['/', ' '], "_"));
        let (report, _, _) = run_once(&config, &base, variant_run, Some(sub), name)?;
        reports.push(report);
    }
    write_json(&root.join("ablate.json"), &reports)?;
    let mut text = render_table(&reports);
    text.push_str(&format!(
        "written to {}\n",
        root.join("ablate.json").display()
    ));
    Ok((text, reports))
}

/// `gen-world`: emit a deterministic synthetic corpus and task set.
pub fn cmd_gen_world(params: &WorldParams, out_dir: &Path) -> Result<String, CliError> {
    let world = generate_world(params).map_err(|e| match e {
        crate::world::WorldError::InvalidParams(m) => CliError::Config(m),
        crate::world::WorldError::Infeasible(m) => CliError::Config(m),
    })?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("create {}: {e}", out_dir.display())))?;
    write_json(&out_dir.join("corpus.json"), &world.pages)?;
    write_json(&out_dir.join("tasks.json"), &world.tasks)?;
    Ok(format!(
        "generated {} pages and {} tasks (seed {}) into {}\n",
        world.pages.len(),
        world.tasks.len(),
        params.seed,
        out_dir.display()
    ))
}

fn payload_kind(payload: &TracePayload) -> &'static str {
    match payload {
        TracePayload::ContextRender { .. } => "context",
        TracePayload::Event { event } => match event {
            TrajectoryEvent::Reasoning { .. } => "thought",
            TrajectoryEvent::HelpRequest { .. } => "help",
            TrajectoryEvent::Knowledge { .. } => "knowledge",
            TrajectoryEvent::FinalAnswer { .. } => "answer",
        },
        TracePayload::Reflection { .. } => "reflection",
        TracePayload::Note { .. } => "note",
        TracePayload::Report { .. } => "report",
    }
}

fn clip(text: &str, max: usize) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= max {
        flat
    } else {
        let clipped: String = flat.chars().take(max).collect();
        format!("{clipped}…")
    }
}

/// `trace`: human-readable rendering of a task trace with attempt
/// boundaries, help/knowledge pairing, and reflection verdicts. Corrupt
/// lines become markers and rendering continues.
pub fn cmd_trace(
    path: &Path,
    attempt_filter: Option<u32>,
    kind_filter: Option<&str>,
) -> Result<String, CliError> {
    let lines =
        read_trace(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut out = String::new();
    let mut shown = 0usize;
    let mut current_attempt = 0u32;
    for line in &lines {
        match line {
            TraceLine::Corrupt { line_no, .. } => {
                out.push_str(&format!("[corrupt line {line_no}]\n"));
            }
            TraceLine::Record(record) => {
                if let Some(wanted) = attempt_filter {
                    if record.attempt != wanted {
                        continue;
                    }
                }
                let kind = payload_kind(&record.payload);
                if let Some(wanted) = kind_filter {
                    if kind != wanted {
                        continue;
                    }
                }
                if record.attempt != current_attempt {
                    current_attempt = record.attempt;
                    out.push_str(&format!("-- attempt {current_attempt} --\n"));
                }
                shown += 1;
                let detail = match &record.payload {
                    TracePayload::ContextRender {
                        experience_version,
                        experience_lessons,
                        self_reflection_present,
                        ..
                    } => format!(
                        "context v{experience_version} ({} lessons, reflection: {})",
                        experience_lessons.len(),
                        if *self_reflection_present {
                            "yes"
                        } else {
                            "no"
                        }
                    ),
                    TracePayload::Event { event } => match event {
                        TrajectoryEvent::Reasoning { text } => {
                            format!("thought: {}", clip(text, 100))
                        }
                        TrajectoryEvent::HelpRequest { text, seq_index } => {
                            format!("help#{seq_index}: {}", clip(text, 100))
                        }
                        TrajectoryEvent::Knowledge {
                            distilled_text,
                            provenance,
                        } => format!(
                            "knowledge ({} sources): {}",
                            provenance.len(),
                            clip(distilled_text, 100)
                        ),
                        TrajectoryEvent::FinalAnswer { text } => {
                            format!("answer: {}", clip(text, 100))
                        }
                    },
                    TracePayload::Reflection {
                        kind,
                        verdict,
                        detail,
                        experience_version,
                    } => {
                        let mut line = format!("reflection {kind}");
                        if let Some(v) = verdict {
                            line.push_str(&format!(" {v}"));
                        }
                        if let Some(version) = experience_version {
                            line.push_str(&format!(" -> v{version}"));
                        }
                        line.push_str(&format!(": {}", clip(detail, 100)));
                        line
                    }
                    TracePayload::Note { text } => format!("note: {}", clip(text, 100)),
                    TracePayload::Report {
                        status,
                        attempts,
                        help_requests_used,
                        ..
                    } => {
                        format!("report: {status}, attempts={attempts}, helps={help_requests_used}")
                    }
                };
                out.push_str(&format!("[{}] {detail}\n", record.seq));
            }
        }
    }
    out.push_str(&format!("{shown} events\n"));
    Ok(out)
}

/// `grade`: one predicted/gold pair under a grading method.
pub fn cmd_grade(predicted: &str, gold: &str, method: &str) -> Result<String, CliError> {
    let method = match method {
        "exact_match" | "exact-match" => GradeMethod::ExactMatch,
        "llm_equivalence" | "llm-equivalence" => {
            return Err(CliError::Config(
                "llm_equivalence grading requires a live run configuration".into(),
            ))
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown grading method {other:?}"
            )))
        }
    };
    let verdict =
        grade(predicted, gold, method, None).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(format!(
        "{}\n",
        if verdict.correct {
            "correct"
        } else {
            "incorrect"
        }
    ))
}
