//! End-to-end tests of the `memora` binary: real process, real files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn memora() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memora"))
}

struct Workspace {
    dir: TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = TempDir::new().expect("tempdir");
        let config = dir.path().join("memora.toml");
        fs::write(
            &config,
            concat!(
                "config_version = 1\n",
                "store_path = \"store.memora\"\n",
                "\n",
                "[embedder]\n",
                "kind = \"test\"\n",
                "dims = 32\n",
            ),
        )
        .expect("write config");
        Self { dir, config }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn write_source(&self, name: &str, body: &serde_json::Value) -> PathBuf {
        let path = self.path().join(name);
        fs::write(&path, serde_json::to_string_pretty(body).unwrap()).expect("write source");
        path
    }

    fn run(&self, args: &[&str]) -> Output {
        memora()
            .arg("--config")
            .arg(&self.config)
            .args(args)
            .output()
            .expect("run memora")
    }
}

fn sample_source() -> serde_json::Value {
    serde_json::json!({
        "name": "chat-weekly",
        "kind": "conversation",
        "units": [
            {"ordinal": 1, "label": "emma hobby", "text": "Emma swims at the lake every weekend."},
            {"ordinal": 2, "label": "jane plan", "text": "Jane is planning a trip to Lisbon."},
        ],
    })
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_str(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn test_ingest_then_query_round_trip() {
    let ws = Workspace::new();
    let source = ws.write_source("source.json", &sample_source());

    let out = ws.run(&["ingest", "--source", source.to_str().unwrap()]);
    assert!(out.status.success(), "ingest failed: {}", stderr_str(&out));
    assert!(stdout_str(&out).contains("entries"));
    assert!(ws.path().join("store.memora").is_file());

    let out = ws.run(&["query", "what does emma enjoy", "--mode", "semantic"]);
    assert!(out.status.success(), "query failed: {}", stderr_str(&out));
    let text = stdout_str(&out);
    assert!(text.contains("swims at the lake"), "unexpected output: {text}");
}

#[test]
fn test_query_on_empty_store_succeeds_with_no_entries() {
    let ws = Workspace::new();
    let out = ws.run(&["query", "x", "--mode", "semantic"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_str(&out).contains("no entries retrieved"));
}

#[test]
fn test_policy_mode_runs_offline_with_stub_policy() {
    let ws = Workspace::new();
    let source = ws.write_source("source.json", &sample_source());
    ws.run(&["ingest", "--source", source.to_str().unwrap()]);

    let out = ws.run(&["query", "emma hobby", "--mode", "policy", "--json"]);
    assert!(out.status.success(), "policy query failed: {}", stderr_str(&out));
    let result: serde_json::Value = serde_json::from_str(&stdout_str(&out)).expect("json");
    assert!(result["trace"].as_array().is_some());
    assert!(result["steps_taken"].as_u64().unwrap() >= 1);
}

#[test]
fn test_reingesting_the_same_source_changes_nothing() {
    let ws = Workspace::new();
    let source = ws.write_source("source.json", &sample_source());

    let first = ws.run(&["ingest", "--source", source.to_str().unwrap(), "--json"]);
    let first: serde_json::Value = serde_json::from_str(&stdout_str(&first)).expect("json");
    assert!(first["entries_created"].as_u64().unwrap() >= 1);
    let before: serde_json::Value =
        serde_json::from_str(&stdout_str(&ws.run(&["stats", "--json"]))).expect("stats");

    // Episodes record each ingest occurrence, so their count may grow;
    // the consolidated memory itself must not.
    let second = ws.run(&["ingest", "--source", source.to_str().unwrap(), "--json"]);
    let second: serde_json::Value = serde_json::from_str(&stdout_str(&second)).expect("json");
    assert_eq!(second["entries_created"].as_u64().unwrap(), 0);
    let after: serde_json::Value =
        serde_json::from_str(&stdout_str(&ws.run(&["stats", "--json"]))).expect("stats");
    assert_eq!(before["entry_count"], after["entry_count"]);
    assert_eq!(before["anchor_count"], after["anchor_count"]);
    assert_eq!(before["mean_cues_per_entry"], after["mean_cues_per_entry"]);
}

#[test]
fn test_query_json_has_the_full_result_shape() {
    let ws = Workspace::new();
    let source = ws.write_source("source.json", &sample_source());
    ws.run(&["ingest", "--source", source.to_str().unwrap()]);

    let out = ws.run(&["query", "lisbon trip", "--json"]);
    assert!(out.status.success());
    let result: serde_json::Value = serde_json::from_str(&stdout_str(&out)).expect("json");
    for key in ["query", "entries", "episodic_groups", "steps_taken", "budget_spent", "end"] {
        assert!(result.get(key).is_some(), "missing key {key}");
    }
}

#[test]
fn test_stats_lists_counters_in_text_mode() {
    let ws = Workspace::new();
    let source = ws.write_source("source.json", &sample_source());
    ws.run(&["ingest", "--source", source.to_str().unwrap()]);

    let out = ws.run(&["stats"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.contains("entries"));
    assert!(text.contains("cue anchors"));
    assert!(text.contains("episodes"));
}

#[test]
fn test_export_writes_snapshot_where_asked() {
    let ws = Workspace::new();
    let source = ws.write_source("source.json", &sample_source());
    ws.run(&["ingest", "--source", source.to_str().unwrap()]);

    let target = ws.path().join("backup.memora");
    let out = ws.run(&["export", "--out", target.to_str().unwrap()]);
    assert!(out.status.success(), "export failed: {}", stderr_str(&out));
    let written = fs::read_to_string(&target).expect("snapshot");
    assert!(written.starts_with("MEMORA-SNAPSHOT v1"));
}

#[test]
fn test_export_without_store_path_is_a_config_error() {
    let ws = Workspace::new();
    fs::write(
        &ws.config,
        "config_version = 1\n\n[embedder]\nkind = \"test\"\ndims = 32\n",
    )
    .unwrap();
    let out = ws.run(&["export"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_str(&out));
}

#[test]
fn test_bad_mode_exits_with_the_config_code() {
    let ws = Workspace::new();
    let out = ws.run(&["query", "hello", "--mode", "hybrid"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_str(&out).contains("bad_mode"));
}

#[test]
fn test_missing_config_file_is_an_io_error() {
    let out = memora()
        .arg("--config")
        .arg("/nonexistent/memora.toml")
        .args(["stats"])
        .output()
        .expect("run");
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn test_missing_source_file_is_an_io_error() {
    let ws = Workspace::new();
    let out = ws.run(&["ingest", "--source", "/nonexistent/source.json"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn test_malformed_source_json_is_a_general_error() {
    let ws = Workspace::new();
    let path = ws.path().join("bad.json");
    fs::write(&path, "{not json").unwrap();
    let out = ws.run(&["ingest", "--source", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn test_unknown_theory_suite_is_a_config_error() {
    let ws = Workspace::new();
    let out = ws.run(&["theory", "--suite", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn test_theory_efficiency_suite_reports_each_case() {
    let ws = Workspace::new();
    let out = ws.run(&["theory", "--suite", "efficiency"]);
    assert!(out.status.success(), "stderr: {}", stderr_str(&out));
    let text = stdout_str(&out);
    assert!(text.contains("suite efficiency"));
    assert!(text.contains("PASS"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn test_theory_strictness_suite_prints_witness_sizes() {
    let ws = Workspace::new();
    let out = ws.run(&["theory", "--suite", "strictness"]);
    assert!(out.status.success(), "stderr: {}", stderr_str(&out));
    let text = stdout_str(&out);
    assert!(text.contains("gated"));
    assert!(text.contains("all cases passed"));
}
