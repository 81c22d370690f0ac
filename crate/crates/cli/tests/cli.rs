//! Process-level CLI tests: exit-code discipline (0 success, 2
//! configuration error, 1 runtime failure), trace rendering, and
//! generator determinism through the real binary.

use std::path::Path;
use std::process::{Command, Output};

fn magellan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_magellan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(path: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(path)
        .to_string_lossy()
        .into_owned()
}

#[test]
fn run_on_the_synthetic_fixture_succeeds() {
    let out = tempfile::tempdir().unwrap();
    let output = magellan(&[
        "run",
        "--config",
        &fixture("synthetic/config.toml"),
        "--out",
        &out.path().join("r").to_string_lossy(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("correct 20/20"));
}

#[test]
fn unknown_benchmark_name_exits_2() {
    let out = tempfile::tempdir().unwrap();
    let output = magellan(&[
        "run",
        "--config",
        &fixture("synthetic/config.toml"),
        "--benchmark",
        "no-such-benchmark",
        "--out",
        &out.path().join("r").to_string_lossy(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown benchmark name"));
}

#[test]
fn missing_corpus_in_fixture_mode_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        "[benchmark]\nname = \"x\"\ntasks = \"tasks.json\"\n\n[provider]\nmode = \"reference\"\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("tasks.json"), "[]").unwrap();
    let output = magellan(&[
        "warmup",
        "--config",
        &config.to_string_lossy(),
        "--out",
        &dir.path().join("out").to_string_lossy(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("corpus"));
}

#[test]
fn live_mode_without_key_variable_exits_2_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("live.toml");
    std::fs::write(
        &config,
        concat!(
            "[benchmark]\n",
            "name = \"live\"\n",
            "tasks = \"tasks.json\"\n",
            "live = true\n\n",
            "[provider]\n",
            "mode = \"live\"\n",
            "chat_endpoint = \"https://example.invalid/v1/chat\"\n",
            "chat_model = \"m\"\n",
            "chat_api_key_env = \"MAGELLAN_TEST_ABSENT_KEY\"\n",
        ),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("tasks.json"),
        "[{\"id\": \"t1\", \"query\": \"q?\"}]",
    )
    .unwrap();
    let output = magellan(&[
        "run",
        "--config",
        &config.to_string_lossy(),
        "--out",
        &dir.path().join("out").to_string_lossy(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("MAGELLAN_TEST_ABSENT_KEY"));
}

#[test]
fn gen_world_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let output = magellan(&[
            "gen-world",
            "--seed",
            "7",
            "--n-tasks",
            "20",
            "--depth-min",
            "2",
            "--depth-max",
            "4",
            "--n-pages",
            "100",
            "--out",
            &dir.path().join(sub).to_string_lossy(),
        ]);
        assert_eq!(output.status.code(), Some(0));
    }
    for file in ["corpus.json", "tasks.json"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical invocations");
    }
    // And matches the committed fixture.
    let committed = std::fs::read(fixture("synthetic/tasks.json")).unwrap();
    let fresh = std::fs::read(dir.path().join("a/tasks.json")).unwrap();
    assert_eq!(committed, fresh);
}

#[test]
fn gen_world_rejects_zero_depth_range() {
    let dir = tempfile::tempdir().unwrap();
    let output = magellan(&[
        "gen-world",
        "--depth-min",
        "0",
        "--depth-max",
        "0",
        "--out",
        &dir.path().join("w").to_string_lossy(),
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn trace_renders_attempts_and_filters() {
    let out = tempfile::tempdir().unwrap();
    let run_out = out.path().join("r");
    let status = magellan(&[
        "run",
        "--config",
        &fixture("replay/config.toml"),
        "--out",
        &run_out.to_string_lossy(),
    ]);
    assert_eq!(status.status.code(), Some(0));
    let trace_path = run_out.join("traces/case-vessel.trace.jsonl");

    let output = magellan(&["trace", &trace_path.to_string_lossy()]);
    assert_eq!(output.status.code(), Some(0));
    let rendering = String::from_utf8_lossy(&output.stdout);
    assert!(rendering.contains("-- attempt 1 --"));
    assert!(rendering.contains("-- attempt 2 --"));
    assert!(rendering.contains("UNCERTAIN"));
    assert!(rendering.contains("CONFIDENT"));

    let output = magellan(&["trace", &trace_path.to_string_lossy(), "--attempt", "2"]);
    let filtered = String::from_utf8_lossy(&output.stdout);
    assert!(!filtered.contains("-- attempt 1 --"));
    assert!(filtered.contains("-- attempt 2 --"));

    let output = magellan(&["trace", &trace_path.to_string_lossy(), "--kind", "answer"]);
    let answers = String::from_utf8_lossy(&output.stdout);
    assert!(answers.contains("silver-gray"));
    assert!(answers.contains("Copper"));
}

#[test]
fn trace_marks_corrupt_lines_and_counts_zero_for_empty() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.trace.jsonl");
    std::fs::write(&empty, "").unwrap();
    let output = magellan(&["trace", &empty.to_string_lossy()]);
    assert_eq!(output.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&output.stdout).contains("0 events"));

    let corrupt = dir.path().join("corrupt.trace.jsonl");
    std::fs::write(
        &corrupt,
        "{\"task_id\":\"t\",\"attempt\":1,\"seq\":0,\"timestamp\":0,\"type\":\"note\",\"text\":\"ok\"}\nbroken json\n",
    )
    .unwrap();
    let output = magellan(&["trace", &corrupt.to_string_lossy()]);
    assert_eq!(output.status.code(), Some(0));
    let rendering = String::from_utf8_lossy(&output.stdout);
    assert!(rendering.contains("[corrupt line 2]"));
    assert!(rendering.contains("1 events"));
}

#[test]
fn grade_pairs_from_the_command_line() {
    let output = magellan(&["grade", "--predicted", " Copper.", "--gold", "Copper"]);
    assert_eq!(output.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&output.stdout).contains("correct"));

    let output = magellan(&[
        "grade",
        "--predicted",
        "silver-gray with dark blue accents",
        "--gold",
        "Copper",
    ]);
    assert_eq!(output.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&output.stdout).contains("incorrect"));

    let output = magellan(&[
        "grade",
        "--predicted",
        "x",
        "--gold",
        "y",
        "--method",
        "telepathy",
    ]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn zero_completed_tasks_exits_1() {
    // Replay mode with an empty chat script: every completion underruns,
    // both tasks end in provider errors, so nothing completes.
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("config.toml"),
        concat!(
            "[benchmark]\n",
            "name = \"dead\"\n",
            "tasks = \"tasks.json\"\n",
            "corpus = \"corpus.json\"\n\n",
            "[run]\n",
            "warmup_passes = 0\n\n",
            "[provider]\n",
            "mode = \"replay\"\n",
            "replay_script = \"script.json\"\n",
        ),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("tasks.json"),
        "[{\"id\": \"t1\", \"query\": \"a?\"}, {\"id\": \"t2\", \"query\": \"b?\"}]",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("corpus.json"),
        "[{\"id\": \"p1\", \"url\": \"fixture://p1\", \"text\": \"nothing\"}]",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("script.json"),
        "{\"chat\": [], \"router\": []}",
    )
    .unwrap();
    let output = magellan(&[
        "run",
        "--config",
        &dir.path().join("config.toml").to_string_lossy(),
        "--out",
        &dir.path().join("out").to_string_lossy(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("zero tasks completed"));
}

#[test]
fn ablate_writes_the_comparison_table() {
    let out = tempfile::tempdir().unwrap();
    let output = magellan(&[
        "ablate",
        "--config",
        &fixture("synthetic/config.toml"),
        "--out",
        &out.path().join("ab").to_string_lossy(),
    ]);
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("full"));
    assert!(stdout.contains("minimal workflow"));
    assert!(out.path().join("ab/ablate.json").exists());
}
