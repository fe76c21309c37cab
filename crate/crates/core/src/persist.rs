//! Workspace files and event logs on disk.
//!
//! A workspace lives in two files next to each other: `<name>.json`, a
//! pretty-printed checkpoint, and `<name>.events.jsonl`, the append-only
//! event log with one entry per line. The log is authoritative; the
//! checkpoint records which log entry it reflects so the two can be
//! cross-checked on open.
//!
//! Both files are UTF-8 with LF newlines. Object keys appear in struct
//! declaration order, and map keys are sorted, so saving the same
//! workspace twice yields identical bytes.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::command::{Engine, EventLogEntry, GENESIS_CHECKSUM};
use crate::error::EngineError;
use crate::model::{Workspace, FORMAT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unsupported workspace format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u32 },
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl PersistError {
    pub fn kind(&self) -> &'static str {
        match self {
            PersistError::Io { .. } => "Io",
            PersistError::UnsupportedVersion { .. } => "UnsupportedVersion",
            PersistError::Parse { .. } => "Parse",
            PersistError::ChecksumMismatch(_) => "ChecksumMismatch",
            PersistError::Engine(e) => e.kind(),
        }
    }
}

pub type Result<T, E = PersistError> = std::result::Result<T, E>;

/// Position in the event log a checkpoint reflects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogTail {
    pub seq: u64,
    pub checksum: String,
}

impl Default for LogTail {
    fn default() -> Self {
        LogTail {
            seq: 0,
            checksum: GENESIS_CHECKSUM.to_string(),
        }
    }
}

impl LogTail {
    pub fn of(engine: &Engine) -> Self {
        LogTail {
            seq: engine.events().len() as u64,
            checksum: engine.tail_checksum().to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
struct FileOut<'a> {
    format_version: u32,
    log_tail: &'a LogTail,
    workspace: &'a Workspace,
}

#[derive(Debug, Deserialize)]
struct FileIn {
    format_version: u64,
    #[serde(default)]
    log_tail: LogTail,
    workspace: Workspace,
}

#[derive(Debug, Deserialize)]
struct Header {
    format_version: u64,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_error(path: &Path, line_offset: usize, e: serde_json::Error) -> PersistError {
    PersistError::Parse {
        path: path.to_path_buf(),
        line: e.line() + line_offset,
        column: e.column(),
        message: e.to_string(),
    }
}

/// The event log belonging to workspace file `path`.
pub fn log_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.events.jsonl"))
}

/// Serializes a checkpoint document.
pub fn to_document(ws: &Workspace, tail: &LogTail) -> String {
    let mut text = serde_json::to_string_pretty(&FileOut {
        format_version: FORMAT_VERSION,
        log_tail: tail,
        workspace: ws,
    })
    .expect("workspace serializes");
    text.push('\n');
    text
}

/// Parses a checkpoint document; `path` only labels errors.
pub fn from_document(text: &str, path: &Path) -> Result<(Workspace, LogTail)> {
    let header: Header = serde_json::from_str(text).map_err(|e| parse_error(path, 0, e))?;
    if header.format_version != FORMAT_VERSION as u64 {
        return Err(PersistError::UnsupportedVersion {
            found: header.format_version,
            supported: FORMAT_VERSION,
        });
    }
    let file: FileIn = serde_json::from_str(text).map_err(|e| parse_error(path, 0, e))?;
    debug_assert_eq!(file.format_version, FORMAT_VERSION as u64);
    Ok((file.workspace, file.log_tail))
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn save_workspace(path: &Path, ws: &Workspace, tail: &LogTail) -> Result<()> {
    write_atomically(path, to_document(ws, tail).as_bytes())
}

pub fn load_workspace(path: &Path) -> Result<(Workspace, LogTail)> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    from_document(&text, path)
}

/// Reads every entry of an event log; a missing file is an empty log.
pub fn read_log(path: &Path) -> Result<Vec<EventLogEntry>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path)(e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| serde_json::from_str(line).map_err(|e| parse_error(path, i, e)))
        .collect()
}

/// Checks the checksum chain of `entries` from genesis.
pub fn verify_chain(entries: &[EventLogEntry]) -> Result<()> {
    let mut prev = GENESIS_CHECKSUM.to_string();
    for (i, entry) in entries.iter().enumerate() {
        if entry.seq != i as u64 + 1 {
            return Err(PersistError::ChecksumMismatch(format!(
                "entry {} carries sequence number {}",
                i + 1,
                entry.seq
            )));
        }
        if entry.checksum != entry.expected_checksum(&prev) {
            return Err(PersistError::ChecksumMismatch(format!("event {} does not chain", entry.seq)));
        }
        prev = entry.checksum.clone();
    }
    Ok(())
}

pub fn append_log(path: &Path, entries: &[EventLogEntry]) -> Result<()> {
    if entries.is_empty() {
        return Ok(());
    }
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io(path))?;
    let mut buf = String::new();
    for e in entries {
        buf.push_str(&serde_json::to_string(e).expect("entries serialize"));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(io(path))?;
    file.sync_data().map_err(io(path))
}

/// A workspace file plus its event log.
#[derive(Debug, Clone)]
pub struct Store {
    path: PathBuf,
    persisted: u64,
}

impl Store {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Store {
            path: path.into(),
            persisted: 0,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn log_path(&self) -> PathBuf {
        log_path(&self.path)
    }

    pub fn exists(&self) -> bool {
        self.path.exists() || self.log_path().exists()
    }

    /// Rebuilds the engine from the event log and cross-checks the
    /// checkpoint against it. A checkpoint behind the log is fine (the log
    /// wins); one that disagrees with the log is an error.
    pub fn open(&mut self) -> Result<Engine> {
        let events = read_log(&self.log_path())?;
        verify_chain(&events)?;
        let checkpoint = if self.path.exists() {
            Some(load_workspace(&self.path)?)
        } else {
            None
        };
        let engine = Engine::from_events(events)?;
        if let Some((ws, tail)) = checkpoint {
            let known = engine.events().get(tail.seq.wrapping_sub(1) as usize);
            let matches = match known {
                Some(e) => e.checksum == tail.checksum,
                None => tail.seq == 0 && tail.checksum == GENESIS_CHECKSUM,
            };
            if !matches {
                return Err(PersistError::ChecksumMismatch(format!(
                    "checkpoint refers to event {} which the log does not contain",
                    tail.seq
                )));
            }
            if tail.seq == engine.events().len() as u64 && &ws != engine.workspace() {
                return Err(PersistError::ChecksumMismatch(
                    "checkpoint content differs from the replayed event log".into(),
                ));
            }
        }
        self.persisted = engine.events().len() as u64;
        Ok(engine)
    }

    /// Appends events not yet on disk, then rewrites the checkpoint.
    pub fn commit(&mut self, engine: &Engine) -> Result<()> {
        let fresh = &engine.events()[self.persisted as usize..];
        append_log(&self.log_path(), fresh)?;
        self.persisted = engine.events().len() as u64;
        save_workspace(&self.path, engine.workspace(), &LogTail::of(engine))
    }

    /// Replays the log from genesis and compares every saved session's
    /// snapshot hashes with freshly replayed states. Returns the sessions
    /// checked.
    pub fn verify(&self) -> Result<usize> {
        let events = read_log(&self.log_path())?;
        verify_chain(&events)?;
        let engine = Engine::from_events(events)?;
        let ws = engine.workspace();
        let mut checked = 0;
        for s in ws.sessions.values() {
            let Some(snapshot) = &s.saved_snapshot else {
                continue;
            };
            let fresh = ws.recover_session_uncached(s.id)?;
            if fresh.hashes != snapshot.hashes {
                return Err(PersistError::ChecksumMismatch(format!(
                    "session {} no longer replays to its saved states",
                    s.display_name()
                )));
            }
            checked += 1;
        }
        if self.path.exists() {
            let (saved, _) = load_workspace(&self.path)?;
            for (id, s) in &saved.sessions {
                let live = ws.sessions.get(id).and_then(|x| x.saved_snapshot.as_ref());
                if let (Some(a), Some(b)) = (&s.saved_snapshot, live) {
                    if a.hashes != b.hashes {
                        return Err(PersistError::ChecksumMismatch(format!(
                            "checkpoint snapshot of {} differs from the log",
                            s.display_name()
                        )));
                    }
                }
            }
        }
        Ok(checked)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::StepClock;
    use crate::command::Command;
    use serde_json::json;

    fn cmd(v: serde_json::Value) -> Command {
        serde_json::from_value(v).unwrap()
    }

    fn sample() -> Engine {
        let mut e = Engine::default().with_clock(StepClock::default());
        for c in [
            json!({"op": "new-session", "base_name": "a"}),
            json!({"op": "create-unit", "session": "s1", "name": "u"}),
            json!({"op": "append", "unit": "u1", "type": "load-data", "params": {"dataset": "cars"}}),
            json!({"op": "append", "unit": "u1", "type": "select-algorithm", "params": {"name": "kmeans"}}),
            json!({"op": "selective-undo", "unit": "u1", "record": "a2"}),
            json!({"op": "save-session", "session": "s1"}),
        ] {
            e.execute(cmd(c)).unwrap();
        }
        e
    }

    #[test]
    fn empty_project_round_trips() {
        let ws = Workspace::new("empty");
        let text = to_document(&ws, &LogTail::default());
        let (back, tail) = from_document(&text, Path::new("x.json")).unwrap();
        assert_eq!(back, ws);
        assert_eq!(tail, LogTail::default());
        assert!(text.ends_with("}\n") && !text.contains('\r'));
    }

    #[test]
    fn undone_records_survive() {
        let e = sample();
        let text = to_document(e.workspace(), &LogTail::of(&e));
        let (back, _) = from_document(&text, Path::new("x.json")).unwrap();
        assert_eq!(&back, e.workspace());
        assert_eq!(to_document(&back, &LogTail::of(&e)), text);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let text = to_document(&Workspace::new("v"), &LogTail::default()).replacen(
            "\"format_version\": 1",
            "\"format_version\": 99",
            1,
        );
        let err = from_document(&text, Path::new("x.json")).unwrap_err();
        assert!(matches!(err, PersistError::UnsupportedVersion { found: 99, .. }));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = from_document("{\n  \"format_version\": 1,\n  oops\n}", Path::new("x.json")).unwrap_err();
        match err {
            PersistError::Parse { line, column, .. } => assert_eq!((line, column), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn store_commit_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let mut store = Store::new(&path);
        let mut e = store.open().unwrap();
        assert_eq!(e.revision(), 0);
        let sample = sample();
        for entry in sample.events() {
            e.execute_as(entry.payload.clone(), entry.timestamp, &entry.author).unwrap();
        }
        store.commit(&e).unwrap();
        assert_eq!(read_log(&store.log_path()).unwrap().len(), 6);

        let mut again = Store::new(&path);
        let reopened = again.open().unwrap();
        assert_eq!(reopened.workspace(), e.workspace());
        assert_eq!(again.verify().unwrap(), 1);
    }

    #[test]
    fn tampered_log_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let mut store = Store::new(&path);
        let mut e = store.open().unwrap();
        e.execute(cmd(json!({"op": "new-session", "base_name": "a"}))).unwrap();
        store.commit(&e).unwrap();
        let log = store.log_path();
        let text = fs::read_to_string(&log).unwrap().replace("\"a\"", "\"b\"");
        fs::write(&log, text).unwrap();
        let err = Store::new(&path).open().unwrap_err();
        assert_eq!(err.kind(), "ChecksumMismatch");
    }

    #[test]
    fn checkpoint_behind_log_is_caught_up() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        let mut store = Store::new(&path);
        let mut e = store.open().unwrap();
        e.execute(cmd(json!({"op": "new-session", "base_name": "a"}))).unwrap();
        store.commit(&e).unwrap();
        e.execute(cmd(json!({"op": "create-unit", "session": "s1", "name": "u"}))).unwrap();
        append_log(&store.log_path(), &e.events()[1..]).unwrap();
        let reopened = Store::new(&path).open().unwrap();
        assert_eq!(reopened.workspace(), e.workspace());
    }
}
