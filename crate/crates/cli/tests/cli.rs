//! End-to-end behavior of the `gnnlab` binary and the runner library.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gnnlab_cli::runner::{read_manifest, read_trial_log};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gnnlab"))
}

fn write_config(dir: &Path, seeds: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    fs::write(
        &path,
        format!(
            r#"
version = 1

[dataset]
kind = "synthetic"
graphs = 40
size_min = 4
size_max = 7
seed = 3

[run]
modes = ["2stg"]
architectures = ["graphsage"]
seeds = {seeds}
stage1_epochs = 8
stage2_epochs = 6
patience = 3

[grid]
input_dim = [16]
hidden_dim = [16]
output_dim = [16]
num_layers = [2]
margin = [1.0]
classifier_layers = [1]
classifier_hidden = [8]
"#
        ),
    )
    .unwrap();
    path
}

/// Strip per-run volatile fields (wall clock) so runs compare exactly.
fn canonical_log(path: &Path) -> Vec<serde_json::Value> {
    let text = fs::read_to_string(path).unwrap();
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_secs");
            v
        })
        .collect()
}

#[test]
fn singleton_grid_five_seeds_writes_five_records_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[0, 1, 2, 3, 4]");
    let out = dir.path().join("run");
    let status = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let records = read_trial_log(&out.join("trials.jsonl")).unwrap();
    assert_eq!(records.len(), 5);
    let checkpoints: Vec<_> = fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .collect::<std::io::Result<Vec<_>>>()
        .unwrap();
    assert_eq!(checkpoints.len(), 5);

    let manifest = read_manifest(&out).unwrap();
    assert_eq!(manifest.trial_hashes.len(), 5);
    assert_eq!(manifest.summaries.len(), 1);
    assert_eq!(manifest.summaries[0].trials, 5);
}

#[test]
fn rerun_after_completion_adds_nothing_and_keeps_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[0, 1]");
    let out = dir.path().join("run");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let log_before = canonical_log(&out.join("trials.jsonl"));
    let mut manifest_before: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();

    let output = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("0 fresh, 2 resumed"), "stdout: {stdout}");

    let log_after = canonical_log(&out.join("trials.jsonl"));
    assert_eq!(log_before, log_after, "no new trial records");

    let mut manifest_after: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    // timestamps are the only permitted difference
    manifest_before.as_object_mut().unwrap().remove("written_unix");
    manifest_after.as_object_mut().unwrap().remove("written_unix");
    assert_eq!(manifest_before, manifest_after);
}

#[test]
fn identical_configs_produce_identical_logs_even_in_parallel() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[0, 1, 2]");
    for (out_name, jobs) in [("a", "1"), ("b", "2")] {
        assert!(bin()
            .args(["train", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join(out_name))
            .args(["--jobs", jobs])
            .status()
            .unwrap()
            .success());
    }
    let a = canonical_log(&dir.path().join("a").join("trials.jsonl"));
    let b = canonical_log(&dir.path().join("b").join("trials.jsonl"));
    assert_eq!(a, b, "trial logs must not depend on job count or run");
}

#[test]
fn interrupted_run_resumes_to_the_uninterrupted_count() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[0, 1, 2, 3, 4]");

    // uninterrupted reference
    let full = dir.path().join("full");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&full)
        .status()
        .unwrap()
        .success());
    let reference = read_trial_log(&full.join("trials.jsonl")).unwrap();

    // interrupted after 2 trials, then resumed
    let resumed = dir.path().join("resumed");
    let output = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&resumed)
        .args(["--max-trials", "2"])
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("interrupted"));
    assert_eq!(read_trial_log(&resumed.join("trials.jsonl")).unwrap().len(), 2);
    assert!(
        !resumed.join("manifest.json").exists(),
        "no manifest for a partial run"
    );

    assert!(bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&resumed)
        .status()
        .unwrap()
        .success());
    let records = read_trial_log(&resumed.join("trials.jsonl")).unwrap();
    assert_eq!(records.len(), reference.len(), "resume fills exactly the gap");
    let mut seen: Vec<&str> = records.iter().map(|r| r.trial_hash.as_str()).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), records.len(), "no duplicated trials");
    let mut expected: Vec<&str> = reference.iter().map(|r| r.trial_hash.as_str()).collect();
    expected.sort_unstable();
    assert_eq!(seen, expected);
}

#[test]
fn report_recomputation_matches_manifest_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[0, 1, 2]");
    let out = dir.path().join("run");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    assert!(bin().args(["report", "--out"]).arg(&out).status().unwrap().success());

    let manifest = read_manifest(&out).unwrap();
    let recomputed: Vec<gnnlab_core::train::SettingSummary> =
        serde_json::from_str(&fs::read_to_string(out.join("report/summary.json")).unwrap())
            .unwrap();
    assert_eq!(manifest.summaries.len(), recomputed.len());
    for (m, r) in manifest.summaries.iter().zip(&recomputed) {
        assert_eq!(m.test_accuracy_mean.to_bits(), r.test_accuracy_mean.to_bits());
        assert_eq!(m.test_accuracy_std.to_bits(), r.test_accuracy_std.to_bits());
        assert_eq!(m.val_accuracy_mean.to_bits(), r.val_accuracy_mean.to_bits());
        assert_eq!(m.trials, r.trials);
    }
}

#[test]
fn invalid_grid_value_fails_before_any_trial() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[0]");
    let text = fs::read_to_string(&config)
        .unwrap()
        .replace("hidden_dim = [16]", "hidden_dim = [40]");
    fs::write(&config, text).unwrap();
    let out = dir.path().join("run");
    let output = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2), "config errors exit 2");
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("grid.hidden_dim"), "stderr: {stderr}");
    assert!(!out.join("trials.jsonl").exists(), "no trial may start");
}

#[test]
fn missing_config_path_exits_2() {
    let output = bin()
        .args(["ingest", "--config", "/definitely/not/here.toml", "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(!output.stderr.is_empty());
}

#[test]
fn corrupt_trial_log_is_reported_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[0]");
    let out = dir.path().join("run");
    assert!(bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let log = out.join("trials.jsonl");
    let mut text = fs::read_to_string(&log).unwrap();
    text.push_str("{not json\n");
    fs::write(&log, text).unwrap();
    let output = bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn ingest_prints_dataset_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[0]");
    let out = dir.path().join("run");
    let output = bin()
        .args(["ingest", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("graphs: 40"), "{stdout}");
    assert!(stdout.contains("classes: 2"), "{stdout}");
    assert!(stdout.contains("avg nodes:"), "{stdout}");
    assert!(out.join("dataset.json").is_file());
}

#[test]
fn report_flags_incomplete_groups_as_partial() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "[0, 1, 2, 3, 4]");
    let out = dir.path().join("run");
    // stop after 3 of 5 trials, then force a manifest by rerunning report
    assert!(bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .args(["--max-trials", "3"])
        .status()
        .unwrap()
        .success());
    // partial runs have no manifest; report must refuse gracefully
    let no_manifest = bin().args(["report", "--out"]).arg(&out).output().unwrap();
    assert!(!no_manifest.status.success());

    // a differently seeded remainder completes the run; then drop two
    // records to simulate a foreign partial group
    assert!(bin()
        .args(["train", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let log = out.join("trials.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    let kept: Vec<&str> = text.lines().take(3).collect();
    fs::write(&log, kept.join("\n") + "\n").unwrap();
    let output = bin().args(["report", "--out"]).arg(&out).output().unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stdout.contains("[partial]"), "stdout: {stdout}");
    assert!(stderr.contains("3/5"), "stderr: {stderr}");
}
