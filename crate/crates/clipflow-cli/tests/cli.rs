//! End-to-end tests of the `clipflow` binary: exit codes, output files,
//! determinism, and config/flag/environment precedence.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

/// Command for the built binary, isolated from any ambient seed variable.
fn bin(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_clipflow"));
    c.current_dir(dir);
    c.env_remove("CLIPFLOW_SEED");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary should spawn")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no exit code")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}",
            String::from_utf8_lossy(&out.stdout)
        )
    })
}

fn stderr_text(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[test]
fn verify_runs_every_property_and_exits_zero() {
    let dir = TempDir::new().unwrap();
    let out = run(bin(dir.path()).args(["verify", "--seed", "2024"]));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    let report = stdout_json(&out);
    assert_eq!(report["all_passed"], Value::Bool(true));
    let outcomes = report["outcomes"].as_array().unwrap();
    assert_eq!(outcomes.len(), 14);
    for o in outcomes {
        assert_eq!(o["passed"], Value::Bool(true), "failed: {}", o["name"]);
    }
    assert!(stderr_text(&out).contains("14 properties, all passed"));
}

#[test]
fn verify_filter_selects_matching_properties() {
    let dir = TempDir::new().unwrap();
    let out = run(bin(dir.path()).args(["verify", "--filter", "memory"]));
    assert_eq!(exit_code(&out), 0);
    let report = stdout_json(&out);
    let outcomes = report["outcomes"].as_array().unwrap();
    assert!(!outcomes.is_empty());
    for o in outcomes {
        let name = o["name"].as_str().unwrap();
        assert!(name.contains("memory"), "unexpected property {name}");
    }
}

#[test]
fn verify_filter_without_matches_exits_one() {
    let dir = TempDir::new().unwrap();
    let out = run(bin(dir.path()).args(["verify", "--filter", "no_such_property"]));
    assert_eq!(exit_code(&out), 1);
    let report = stdout_json(&out);
    assert_eq!(report["all_passed"], Value::Bool(false));
    assert!(report["outcomes"].as_array().unwrap().is_empty());
}

#[test]
fn verify_report_file_matches_stdout() {
    let dir = TempDir::new().unwrap();
    let report_path = dir.path().join("report.json");
    let out = run(bin(dir.path()).args([
        "verify",
        "--filter",
        "flow.loss_weight_identity",
        "--report",
        report_path.to_str().unwrap(),
    ]));
    assert_eq!(exit_code(&out), 0);
    let from_stdout = stdout_json(&out);
    let from_file: Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(from_stdout, from_file);
}

// ---------------------------------------------------------------------------
// train-toy
// ---------------------------------------------------------------------------

fn train_args(seed: &str) -> Vec<String> {
    [
        "train-toy", "--steps", "40", "--lr", "1e-6", "--seed", seed,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn train_toy_is_deterministic_per_seed() {
    let dir_a = TempDir::new().unwrap();
    let dir_b = TempDir::new().unwrap();
    let out_a = run(bin(dir_a.path()).args(train_args("3")));
    let out_b = run(bin(dir_b.path()).args(train_args("3")));
    assert_eq!(exit_code(&out_a), 0, "stderr: {}", stderr_text(&out_a));
    assert_eq!(out_a.stdout, out_b.stdout);
    let curve_a = fs::read(dir_a.path().join("train_curve.csv")).unwrap();
    let curve_b = fs::read(dir_b.path().join("train_curve.csv")).unwrap();
    assert_eq!(curve_a, curve_b);
    let report_a = fs::read(dir_a.path().join("train_report.json")).unwrap();
    let report_b = fs::read(dir_b.path().join("train_report.json")).unwrap();
    assert_eq!(report_a, report_b);

    let report = stdout_json(&out_a);
    assert_eq!(report["seed"], Value::from(3u64));
    assert_eq!(report["steps"], Value::from(40u64));
    let kept = report["kept_steps"].as_u64().unwrap();
    let outliers = report["skipped_outliers"].as_u64().unwrap();
    let anomalies = report["skipped_anomalies"].as_u64().unwrap();
    assert_eq!(kept + outliers + anomalies, 40);
}

#[test]
fn train_toy_seed_changes_the_curve() {
    let dir_a = TempDir::new().unwrap();
    let dir_b = TempDir::new().unwrap();
    run(bin(dir_a.path()).args(train_args("3")));
    run(bin(dir_b.path()).args(train_args("4")));
    let curve_a = fs::read(dir_a.path().join("train_curve.csv")).unwrap();
    let curve_b = fs::read(dir_b.path().join("train_curve.csv")).unwrap();
    assert_ne!(curve_a, curve_b);
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[test]
fn simulate_twice_gives_byte_identical_outputs() {
    let dir_a = TempDir::new().unwrap();
    let dir_b = TempDir::new().unwrap();
    let args = ["simulate", "--clips", "4", "--seed", "9"];
    let out_a = run(bin(dir_a.path()).args(args));
    let out_b = run(bin(dir_b.path()).args(args));
    assert_eq!(exit_code(&out_a), 0, "stderr: {}", stderr_text(&out_a));
    assert_eq!(out_a.stdout, out_b.stdout);
    for name in ["simulate_trace.jsonl", "simulate_clips.bin"] {
        let a = fs::read(dir_a.path().join(name)).unwrap();
        let b = fs::read(dir_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn simulate_memory_ablation_changes_later_clips() {
    let dir_full = TempDir::new().unwrap();
    let dir_ablate = TempDir::new().unwrap();
    let base = ["simulate", "--clips", "4", "--seed", "9"];
    run(bin(dir_full.path()).args(base));
    run(bin(dir_ablate.path()).args(base).args(["--ablate-memory", "last1clip"]));

    let trace_full = fs::read_to_string(dir_full.path().join("simulate_trace.jsonl")).unwrap();
    let trace_ablate =
        fs::read_to_string(dir_ablate.path().join("simulate_trace.jsonl")).unwrap();
    assert_ne!(trace_full, trace_ablate);

    // Same noise stream: the first clip has no history yet, so its summary
    // statistics agree before the histories diverge.
    let first_full: Value = serde_json::from_str(trace_full.lines().next().unwrap()).unwrap();
    let first_ablate: Value =
        serde_json::from_str(trace_ablate.lines().next().unwrap()).unwrap();
    assert_eq!(
        first_full["mean_abs_feature"],
        first_ablate["mean_abs_feature"]
    );
}

#[test]
fn simulate_accepts_a_constant_emotion() {
    let dir = TempDir::new().unwrap();
    let out = run(bin(dir.path()).args([
        "simulate", "--clips", "3", "--seed", "2", "--emotion", "happy",
    ]));
    assert_eq!(exit_code(&out), 0);
    let trace = fs::read_to_string(dir.path().join("simulate_trace.jsonl")).unwrap();
    for line in trace.lines() {
        let t: Value = serde_json::from_str(line).unwrap();
        assert_eq!(t["emotion"], Value::from("happy"));
    }
}

#[test]
fn simulate_rejects_an_unknown_emotion() {
    let dir = TempDir::new().unwrap();
    let out = run(bin(dir.path()).args([
        "simulate", "--clips", "1", "--emotion", "pleased",
    ]));
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("pleased"));
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

fn write_fixture_manifest(dir: &Path) -> String {
    let path = dir.join("manifest.jsonl");
    let lines = [
        r#"{"clip_id":"keep-me","duration_s":12.0,"face_count":1,"face_partial":false,"bbox":[0.4,0.4,0.2,0.2],"iqa_score":55.0,"sync_c":6.0,"manual_ok":true}"#,
        r#"{"clip_id":"blurry","duration_s":8.0,"face_count":1,"face_partial":false,"bbox":[0.1,0.1,0.3,0.3],"iqa_score":39.0,"sync_c":6.0,"manual_ok":true}"#,
        r#"{"clip_id":"off-sync","duration_s":8.0,"face_count":1,"face_partial":false,"bbox":[0.1,0.1,0.3,0.3],"iqa_score":55.0,"sync_c":5.0,"manual_ok":true}"#,
        r#"{"clip_id":"crowded","duration_s":8.0,"face_count":2,"face_partial":false,"bbox":[0.1,0.1,0.3,0.3],"iqa_score":55.0,"sync_c":6.0,"manual_ok":true}"#,
        r#"{"clip_id":"too-long","duration_s":90.0,"face_count":1,"face_partial":false,"bbox":[0.2,0.2,0.3,0.3],"iqa_score":55.0,"sync_c":6.0,"manual_ok":true}"#,
        "this line is not json",
    ];
    fs::write(&path, lines.join("\n")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn pipeline_report_accounts_for_every_record() {
    let dir = TempDir::new().unwrap();
    let manifest = write_fixture_manifest(dir.path());
    let out = run(bin(dir.path()).args(["pipeline", "--manifest", &manifest]));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    let report = stdout_json(&out);

    // 6 input lines; the 90 s clip splits into 4 pieces, so 9 post-trim.
    assert_eq!(report["input_count"], Value::from(6u64));
    assert_eq!(report["post_trim_count"], Value::from(9u64));
    let kept = report["kept"].as_u64().unwrap();
    let rejected: u64 = report["rejected"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(kept + rejected, 9);
    // keep-me plus the four fully-scored pieces of too-long survive.
    assert_eq!(kept, 5);
    let rejections = report["rejected"].as_object().unwrap();
    assert_eq!(rejections["malformed"], Value::from(1u64));
    assert_eq!(rejections["low_quality"], Value::from(1u64));
    assert_eq!(rejections["lip_sync"], Value::from(1u64));
    assert_eq!(rejections["multiple_heads"], Value::from(1u64));

    let kept_lines = fs::read_to_string(dir.path().join("pipeline_kept.jsonl")).unwrap();
    assert_eq!(kept_lines.lines().count(), 5);
    for line in kept_lines.lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        assert_eq!(r["bbox_expanded"], Value::Bool(true));
    }
}

#[test]
fn pipeline_flags_override_thresholds() {
    let dir = TempDir::new().unwrap();
    let manifest = write_fixture_manifest(dir.path());
    let out = run(bin(dir.path()).args([
        "pipeline", "--manifest", &manifest, "--iqa-min", "60", "--sync-c-min", "4",
    ]));
    assert_eq!(exit_code(&out), 0);
    let report = stdout_json(&out);
    let used = &report["thresholds_used"];
    assert_eq!(used["iqa_min"], Value::from(60.0));
    assert_eq!(used["sync_c_min"], Value::from(4.0));
    // Nothing clears an IQA floor of 60, but off-sync now passes the sync gate.
    assert_eq!(report["kept"], Value::from(0u64));
}

#[test]
fn pipeline_rerun_on_kept_output_is_identity() {
    let dir = TempDir::new().unwrap();
    let manifest = write_fixture_manifest(dir.path());
    let first_out = dir.path().join("kept1.jsonl");
    run(bin(dir.path()).args([
        "pipeline", "--manifest", &manifest, "--out", first_out.to_str().unwrap(),
    ]));
    let second_out = dir.path().join("kept2.jsonl");
    let out = run(bin(dir.path()).args([
        "pipeline",
        "--manifest",
        first_out.to_str().unwrap(),
        "--out",
        second_out.to_str().unwrap(),
    ]));
    assert_eq!(exit_code(&out), 0);
    let report = stdout_json(&out);
    assert_eq!(report["kept"], report["input_count"]);
    assert!(report["rejected"].as_object().unwrap().is_empty());
    let first = fs::read_to_string(&first_out).unwrap();
    let second = fs::read_to_string(&second_out).unwrap();
    assert_eq!(first, second, "a second pass must not rewrite records");
}

#[test]
fn pipeline_without_manifest_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run(bin(dir.path()).arg("pipeline"));
    assert_eq!(exit_code(&out), 2);
}

// ---------------------------------------------------------------------------
// emotion
// ---------------------------------------------------------------------------

#[test]
fn emotion_votes_full_and_tail_subsegments() {
    let dir = TempDir::new().unwrap();
    // 33 rows: 16 happy, 16 sad, 1 surprised.
    let mut rows = String::new();
    for _ in 0..16 {
        rows.push_str("0 0 0 1 0 0 0 0\n");
    }
    for _ in 0..16 {
        rows.push_str("0 0 0 0 0 1 0 0\n");
    }
    rows.push_str("0 0 0 0 0 0 1 0\n");
    let probs = dir.path().join("probs.txt");
    fs::write(&probs, rows).unwrap();

    let timeline_path = dir.path().join("timeline.json");
    let out = run(bin(dir.path()).args([
        "emotion",
        "--probs",
        probs.to_str().unwrap(),
        "--subseg",
        "16",
        "--out",
        timeline_path.to_str().unwrap(),
    ]));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    let timeline = stdout_json(&out);
    let subsegments = timeline["subsegments"].as_array().unwrap();
    assert_eq!(subsegments.len(), 3);
    let spans: Vec<(u64, u64, &str)> = subsegments
        .iter()
        .map(|s| {
            (
                s["start_frame"].as_u64().unwrap(),
                s["end_frame"].as_u64().unwrap(),
                s["label"].as_str().unwrap(),
            )
        })
        .collect();
    assert_eq!(spans, vec![(0, 16, "happy"), (16, 32, "sad"), (32, 33, "surprised")]);

    let from_file: Value =
        serde_json::from_str(&fs::read_to_string(&timeline_path).unwrap()).unwrap();
    assert_eq!(from_file, timeline);
}

#[test]
fn emotion_rejects_rows_that_do_not_sum_to_one() {
    let dir = TempDir::new().unwrap();
    let probs = dir.path().join("probs.txt");
    fs::write(&probs, "0.5 0 0 0 0 0 0 0\n").unwrap();
    let out = run(bin(dir.path()).args(["emotion", "--probs", probs.to_str().unwrap()]));
    assert_eq!(exit_code(&out), 1);
}

// ---------------------------------------------------------------------------
// config file and environment
// ---------------------------------------------------------------------------

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("clipflow.toml");
    fs::write(&config, "[simulate]\nclips = 2\nseed = 123\n").unwrap();

    let out = run(bin(dir.path()).args([
        "--config", config.to_str().unwrap(), "simulate",
    ]));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    let summary = stdout_json(&out);
    assert_eq!(summary["clips"], Value::from(2u64));
    assert_eq!(summary["seed"], Value::from(123u64));

    let out = run(bin(dir.path()).args([
        "--config", config.to_str().unwrap(), "simulate", "--clips", "3", "--seed", "4",
    ]));
    let summary = stdout_json(&out);
    assert_eq!(summary["clips"], Value::from(3u64));
    assert_eq!(summary["seed"], Value::from(4u64));
}

#[test]
fn config_unknown_key_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("clipflow.toml");
    fs::write(&config, "[simulate]\nclipz = 2\n").unwrap();
    let out = run(bin(dir.path()).args([
        "--config", config.to_str().unwrap(), "simulate",
    ]));
    assert_eq!(exit_code(&out), 2);
    assert!(stderr_text(&out).contains("clipz"), "stderr: {}", stderr_text(&out));
}

#[test]
fn env_seed_fills_in_only_when_nothing_names_one() {
    let dir = TempDir::new().unwrap();

    // Environment alone: seed comes from the variable.
    let out = run(bin(dir.path())
        .env("CLIPFLOW_SEED", "77")
        .args(["simulate", "--clips", "1"]));
    assert_eq!(exit_code(&out), 0, "stderr: {}", stderr_text(&out));
    assert_eq!(stdout_json(&out)["seed"], Value::from(77u64));

    // A flag beats the environment.
    let out = run(bin(dir.path())
        .env("CLIPFLOW_SEED", "77")
        .args(["simulate", "--clips", "1", "--seed", "5"]));
    assert_eq!(stdout_json(&out)["seed"], Value::from(5u64));

    // A config file that names a seed beats the environment too.
    let config = dir.path().join("clipflow.toml");
    fs::write(&config, "[simulate]\nseed = 123\n").unwrap();
    let out = run(bin(dir.path())
        .env("CLIPFLOW_SEED", "77")
        .args(["--config", config.to_str().unwrap(), "simulate", "--clips", "1"]));
    assert_eq!(stdout_json(&out)["seed"], Value::from(123u64));

    // A malformed value is a usage error.
    let out = run(bin(dir.path())
        .env("CLIPFLOW_SEED", "not-a-number")
        .args(["simulate", "--clips", "1"]));
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = run(bin(dir.path()).arg("frobnicate"));
    assert_eq!(exit_code(&out), 2);
}
