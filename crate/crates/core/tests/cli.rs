use std::path::Path;
use std::process::{Command, Output};

fn unitflow(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_unitflow"))
        .arg("--workspace")
        .arg(ws)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn init_edit_validate_flow() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("w.json");
    assert_eq!(unitflow(&ws, &["init", "--name", "demo"]).status.code(), Some(0));
    assert_eq!(unitflow(&ws, &["edit", "new-session", "--name", "explore"]).status.code(), Some(0));
    assert_eq!(unitflow(&ws, &["edit", "create-unit", "--session", "s1", "--name", "main"]).status.code(), Some(0));

    let out = unitflow(
        &ws,
        &["--format", "json", "edit", "append", "--unit", "u1", "--type", "select-algorithm", "--params", r#"{"name":"kmeans"}"#],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["reports"][0]["status"], "broken");

    let out = unitflow(&ws, &["validate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("broken"));

    assert_eq!(unitflow(&ws, &["edit", "undo", "--unit", "u1"]).status.code(), Some(0));
    assert_eq!(unitflow(&ws, &["validate"]).status.code(), Some(0));
    assert_eq!(unitflow(&ws, &["verify"]).status.code(), Some(0));
}

#[test]
fn rejected_edits_exit_one_and_change_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("w.json");
    unitflow(&ws, &["init"]);
    let before = std::fs::read_to_string(&ws).unwrap();
    let out = unitflow(&ws, &["edit", "undo", "--unit", "u7"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("u7"));
    assert_eq!(std::fs::read_to_string(&ws).unwrap(), before);
}

#[test]
fn sankey_export_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("w.json");
    let out = unitflow(&ws, &["fixture", "branch-heavy", "--out", ws.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    for (level, ext) in [("session", "svg"), ("unit", "json")] {
        let a = dir.path().join(format!("a.{ext}"));
        let b = dir.path().join(format!("b.{ext}"));
        for p in [&a, &b] {
            let o = unitflow(&ws, &["export-sankey", "--level", level, "--out", p.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(0));
        }
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}

#[test]
fn fixture_listing_and_checks() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("unused.json");
    let list = stdout(&unitflow(&ws, &["fixture", "--list"]));
    for name in ["versioned-sessions", "broken-pipeline-demo", "clean-demo"] {
        assert!(list.contains(name), "{list}");
    }
    assert_eq!(unitflow(&ws, &["fixture", "broken-pipeline-demo"]).status.code(), Some(0));
    assert_eq!(unitflow(&ws, &["fixture", "missing"]).status.code(), Some(1));
}

#[test]
fn replay_and_recover_print_states() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("w.json");
    unitflow(&ws, &["fixture", "versioned-sessions", "--out", ws.to_str().unwrap()]);
    let out = unitflow(&ws, &["--format", "json", "replay", "u2"]);
    assert_eq!(out.status.code(), Some(0));
    let state: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(state.is_object());
    let out = unitflow(&ws, &["--format", "json", "recover", "s1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}
