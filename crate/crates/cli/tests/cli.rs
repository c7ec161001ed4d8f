use std::fs;
use std::process::Command;

fn goral() -> Command {
    Command::new(env!("CARGO_BIN_EXE_goral"))
}

#[test]
fn run_subcommand_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{
            "dataset": { "kind": "gaussian_mixture", "n": 300, "dim": 2, "num_classes": 2, "separation": 1.0, "noise": 1.0, "seed": 0 },
            "split": { "n_init": 4, "n_test": 50 },
            "strategy": "uncertainty", "b": 2, "budget": 2
        }"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = goral()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--seeds", "0..2", "--snapshot-utilities"])
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let stdout = String::from_utf8(status.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 2);
    let curve = fs::read_to_string(out.join("learning_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 2 * 3);
    assert!(out.join("util_distrib_0.csv").exists());
}

#[test]
fn missing_output_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{ "dataset": { "kind": "synth2" } }"#).unwrap();
    let o = goral().args(["synth2", "--config"]).arg(&cfg).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("output directory"));
}

#[test]
fn help_lists_subcommands() {
    let o = goral().arg("--help").output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    for c in ["run", "approx-check", "util-hist", "synth2"] {
        assert!(text.contains(c), "{c}");
    }
}
