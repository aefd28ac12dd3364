//! Command-line behaviour: exit codes, error messages, determinism.

use std::path::Path;
use std::process::{Command, Output};

fn megkws(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_megkws"))
        .current_dir(dir)
        .env_remove("MEGKWS_DATA_ROOT")
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: &[&str] = &[
    "--set", "synth.n_sessions=3",
    "--set", "synth.session_minutes=0.5",
    "--set", "synth.n_channels=3",
    "--set", "synth.vocab_size=20",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn help_and_version_succeed() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(megkws(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(megkws(tmp.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(megkws(tmp.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(megkws(tmp.path(), &["synth", "--bogus"]).status.code(), Some(1));
}

#[test]
fn invalid_config_field_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{ "synth": { "n_sessions": "eight" } }"#).unwrap();
    let out = megkws(tmp.path(), &["synth", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth.n_sessions"));

    let out = megkws(tmp.path(), &["synth", "--set", "synth.snr=-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth.snr"));

    let out = megkws(tmp.path(), &["synth", "--set", "synth.no_such_field=1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    // no corpus yet: a user-fixable error
    let out = megkws(tmp.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth"));

    // corpus present but nothing trained: a runtime failure
    assert_eq!(megkws(tmp.path(), &with_small(&["synth"])).status.code(), Some(0));
    let out = megkws(tmp.path(), &with_small(&["evaluate"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train"));
}

#[test]
fn synth_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path| {
        let out = megkws(dir, &with_small(&["synth", "--data-root", "corpus"]));
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        summary["sessions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["checksum"].as_str().unwrap().to_string())
            .collect::<Vec<_>>()
    };
    let (ca, cb) = (run(a.path()), run(b.path()));
    assert_eq!(ca.len(), 3);
    assert_eq!(ca, cb);
    let mut names: Vec<_> =
        std::fs::read_dir(a.path().join("corpus")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() > 3);
    for name in names {
        let read = |d: &Path| std::fs::read(d.join("corpus").join(&name)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{name:?}");
    }
}
