use unitflow_core::command::{Command, Engine};
use unitflow_core::fixtures;
use unitflow_core::persist::{from_document, to_document, LogTail, Store};
use unitflow_core::Workspace;

fn hashes(ws: &Workspace) -> Vec<(String, String)> {
    ws.units
        .values()
        .filter(|u| !u.deleted)
        .map(|u| (u.id.to_string(), ws.state_hash(u.id).unwrap()))
        .collect()
}

#[test]
fn every_fixture_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    for name in fixtures::names() {
        let (engine, _) = fixtures::run_fixture(name).unwrap();
        let path = dir.path().join(format!("{name}.json"));
        let mut store = Store::new(&path);
        store.commit(&engine).unwrap();

        let loaded = Store::new(&path).open().unwrap();
        assert_eq!(loaded.workspace(), engine.workspace(), "{name}");
        assert_eq!(loaded.events(), engine.events(), "{name}");
        assert_eq!(hashes(loaded.workspace()), hashes(engine.workspace()), "{name}");

        let replayed = Engine::from_events(engine.events().to_vec()).unwrap();
        assert_eq!(replayed.workspace(), engine.workspace(), "{name}: log replay");
        let saved = engine.workspace().sessions.values().filter(|s| s.saved_snapshot.is_some()).count();
        assert_eq!(Store::new(&path).verify().unwrap(), saved, "{name}");
    }
}

#[test]
fn document_text_is_stable() {
    for name in fixtures::names() {
        let (engine, _) = fixtures::run_fixture(name).unwrap();
        let tail = LogTail::of(&engine);
        let text = to_document(engine.workspace(), &tail);
        let (back, back_tail) = from_document(&text, "mem".as_ref()).unwrap();
        assert_eq!(&back, engine.workspace());
        assert_eq!(back_tail, tail);
        let (again, _) = fixtures::run_fixture(name).unwrap();
        assert_eq!(to_document(again.workspace(), &LogTail::of(&again)), text, "{name}");
    }
}

#[test]
fn incremental_commits_append_only_new_events() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.json");
    let mut store = Store::new(&path);
    let mut engine = store.open().unwrap();
    engine
        .execute(Command::NewSession {
            base_name: "a".into(),
        })
        .unwrap();
    store.commit(&engine).unwrap();
    let first = std::fs::read_to_string(store.log_path()).unwrap();

    let mut store = Store::new(&path);
    let mut engine = store.open().unwrap();
    engine
        .execute(Command::NewSession {
            base_name: "b".into(),
        })
        .unwrap();
    store.commit(&engine).unwrap();
    let second = std::fs::read_to_string(store.log_path()).unwrap();
    assert!(second.starts_with(&first));
    assert_eq!(second.lines().count(), 2);
    assert_eq!(Store::new(&path).open().unwrap().workspace(), engine.workspace());
}
