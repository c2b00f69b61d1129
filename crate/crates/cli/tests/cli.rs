//! CLI contract tests: exit codes, overrides, and input immutability.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trajtree")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str], cwd: &Path) -> (Option<i32>, String) {
    let output = Command::new(bin()).args(args).current_dir(cwd).output().expect("binary runs");
    (output.status.code(), String::from_utf8_lossy(&output.stderr).into_owned())
}

#[test]
fn invalid_manifest_exits_2_with_field_messages() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("bad.json");
    // Missing seed, broken policy bounds.
    std::fs::write(
        &manifest,
        r#"{
            "schema": 1,
            "category": "hub",
            "sim_spec": "simapp.json",
            "policy": {"max_depth": 5, "phase_bounds": [4, 2], "phase_widths": [2, 2, 1]}
        }"#,
    )
    .unwrap();
    std::fs::copy(fixture("simapp.json"), dir.path().join("simapp.json")).unwrap();

    let (code, stderr) = run(
        &["explore", "--manifest", manifest.to_str().unwrap(), "--output", "out"],
        dir.path(),
    );
    assert_eq!(code, Some(2), "stderr: {stderr}");
    assert!(stderr.contains("seed: required"), "stderr: {stderr}");
    assert!(stderr.contains("policy:"), "stderr: {stderr}");
}

#[test]
fn unparsable_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("garbage.json");
    std::fs::write(&manifest, "{ not json").unwrap();
    let (code, _) = run(
        &["explore", "--manifest", manifest.to_str().unwrap(), "--output", "out"],
        dir.path(),
    );
    assert_eq!(code, Some(2));
}

#[test]
fn empty_forest_dir_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("forest")).unwrap();
    let (code, stderr) =
        run(&["postprocess", "--forest", "forest", "--output", "out"], dir.path());
    assert_eq!(code, Some(1), "stderr: {stderr}");
}

#[test]
fn corrupt_tree_files_are_skipped_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("manifest.json");
    let (code, _) = run(
        &["explore", "--manifest", manifest.to_str().unwrap(), "--trees", "1", "--output", "run"],
        dir.path(),
    );
    assert_eq!(code, Some(0));
    std::fs::write(dir.path().join("run/tree_zzz.json"), "{ broken").unwrap();

    let (code, stderr) =
        run(&["postprocess", "--forest", "run", "--output", "dataset"], dir.path());
    assert_eq!(code, Some(0), "stderr: {stderr}");
    assert!(stderr.contains("warning: skipping"), "stderr: {stderr}");

    // A directory with only corrupt files errors out.
    std::fs::create_dir(dir.path().join("allbad")).unwrap();
    std::fs::write(dir.path().join("allbad/tree_000.json"), "{ broken").unwrap();
    let (code, _) = run(&["postprocess", "--forest", "allbad", "--output", "d2"], dir.path());
    assert_eq!(code, Some(1));
}

#[test]
fn worker_override_preserves_the_node_set() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("manifest.json");
    let manifest = manifest.to_str().unwrap();
    let (code, _) = run(&["explore", "--manifest", manifest, "--output", "w1"], dir.path());
    assert_eq!(code, Some(0));
    let (code, _) = run(
        &["explore", "--manifest", manifest, "--workers", "4", "--output", "w4"],
        dir.path(),
    );
    assert_eq!(code, Some(0));

    for name in ["tree_000.json", "tree_001.json"] {
        let a = std::fs::read(dir.path().join("w1").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("w4").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between 1-worker and 4-worker runs");
    }
}

#[test]
fn impossible_quality_floor_empties_the_long_tier() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("manifest.json");
    let (code, _) = run(
        &["explore", "--manifest", manifest.to_str().unwrap(), "--trees", "1", "--output", "run"],
        dir.path(),
    );
    assert_eq!(code, Some(0));
    let (code, _) = run(
        &["postprocess", "--forest", "run", "--min-dim", "4", "--output", "dataset"],
        dir.path(),
    );
    assert_eq!(code, Some(0));
    let long = std::fs::read_to_string(dir.path().join("dataset/long_traj.jsonl")).unwrap();
    assert!(long.is_empty(), "min-dim 4 is unsatisfiable, the tier must be empty");
    let stats = std::fs::read_to_string(dir.path().join("dataset/stats.json")).unwrap();
    assert!(stats.contains("\"filtered\": 0"));
}

#[test]
fn chain_forest_yields_zero_pairs_with_exit_0() {
    let dir = tempfile::tempdir().unwrap();
    // A single-path manifest: widths of 1 produce a linear chain.
    let manifest = dir.path().join("chain.json");
    std::fs::write(
        &manifest,
        format!(
            r#"{{
                "schema": 1,
                "category": "hub",
                "sim_spec": "{}",
                "seed": 9,
                "trees": 1,
                "policy": {{"max_depth": 4, "phase_bounds": [1, 2], "phase_widths": [1, 1, 1]}}
            }}"#,
            fixture("simapp.json").display()
        ),
    )
    .unwrap();
    let (code, _) =
        run(&["explore", "--manifest", manifest.to_str().unwrap(), "--output", "run"], dir.path());
    assert_eq!(code, Some(0));
    let (code, stderr) = run(
        &["extract-dpo", "--forest", "run", "--output", "pairs.jsonl"],
        dir.path(),
    );
    assert_eq!(code, Some(0), "stderr: {stderr}");
    assert!(stderr.contains("notice"), "stderr should carry the empty-pool notice: {stderr}");
    let pairs = std::fs::read_to_string(dir.path().join("pairs.jsonl")).unwrap();
    assert!(pairs.is_empty());
}

#[test]
fn unreachable_remote_agents_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("manifest.json");
    let output = Command::new(bin())
        .args([
            "explore",
            "--manifest",
            manifest.to_str().unwrap(),
            "--trees",
            "1",
            "--output",
            "run",
        ])
        .env("REMOTE_AGENT_URL", "http://127.0.0.1:9")
        .current_dir(dir.path())
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("using remote agents"), "stderr: {stderr}");
    assert!(stderr.contains("no progress"), "stderr: {stderr}");
}

#[test]
fn commands_do_not_mutate_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture("manifest.json");
    let (code, _) = run(
        &["explore", "--manifest", manifest.to_str().unwrap(), "--trees", "1", "--output", "run"],
        dir.path(),
    );
    assert_eq!(code, Some(0));
    let before = std::fs::read(dir.path().join("run/tree_000.json")).unwrap();
    let (code, _) = run(&["postprocess", "--forest", "run", "--output", "dataset"], dir.path());
    assert_eq!(code, Some(0));
    let (code, _) = run(&["analyze", "depth-hist", "--forest", "run", "--output", "h.json"], dir.path());
    assert_eq!(code, Some(0));
    let after = std::fs::read(dir.path().join("run/tree_000.json")).unwrap();
    assert_eq!(before, after, "downstream commands must not mutate the forest");
}
