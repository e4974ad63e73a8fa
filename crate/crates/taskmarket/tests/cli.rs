//! End-to-end smoke test of the command-line binary.

use std::process::Command;

#[test]
fn cli_runs_a_sweep_and_writes_artifacts() {
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_taskmarket"))
        .args([
            "--devices",
            "40",
            "--horizon",
            "900000",
            "--matcher",
            "InstantGreedy",
            "--matcher",
            "InstantFIFO",
            "--seed",
            "1",
            "--seed",
            "2",
            "--out",
        ])
        .arg(out.path())
        .output()
        .expect("binary runs");
    assert!(status.status.success(), "{status:?}");

    for matcher in ["InstantGreedy", "InstantFIFO"] {
        for seed in ["seed_1", "seed_2"] {
            assert!(out.path().join(matcher).join(seed).join("summary.json").is_file());
        }
    }
    assert!(out.path().join("comparison.csv").is_file());
    let stdout = String::from_utf8_lossy(&status.stdout);
    assert!(stdout.contains("InstantGreedy"));
}

#[test]
fn cli_check_flag_validates_the_closed_forms() {
    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_taskmarket"))
        .args([
            "--check",
            "--devices",
            "5",
            "--horizon",
            "200000",
            "--matcher",
            "InstantGreedy",
            "--seed",
            "1",
            "--out",
        ])
        .arg(out.path())
        .output()
        .expect("binary runs");
    assert!(status.status.success(), "{status:?}");
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.contains("oracle: all checks passed"));
}

#[test]
fn cli_rejects_unknown_matchers() {
    let status = Command::new(env!("CARGO_BIN_EXE_taskmarket"))
        .args(["--matcher", "DoesNotExist"])
        .output()
        .expect("binary runs");
    assert!(!status.status.success());
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.contains("unknown matcher"));
}
