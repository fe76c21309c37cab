//! The command layer shared by the CLI, the HTTP service and fixtures.
//!
//! Every mutation is a [`Command`]. The [`Engine`] applies commands
//! atomically (a failed command leaves the workspace untouched), bumps the
//! revision by one per success and records an [`EventLogEntry`]. Reads go
//! through [`Query`] so every surface answers them the same way.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::checker::{SuggestedFix, ValidationReport, ValidationStatus};
use crate::clock::{Clock, Millis, SystemClock};
use crate::edit::{EditOutcome, HistoryRange};
use crate::error::{EngineError, Result};
use crate::ids::{ActionId, AnnotationId, NodeRef, SessionId, UnitId};
use crate::model::{ActionRecord, Params, Workspace};
use crate::sankey::{build_graph, range_selection, GraphLevel};

/// One mutation of a workspace. The serialized form is the payload of the
/// event log and of `POST /api/commands`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case")]
pub enum Command {
    SetProject {
        name: String,
        #[serde(default)]
        analyst: String,
        #[serde(default)]
        notes: String,
    },
    ImportDataset {
        name: String,
        csv: String,
    },
    NewSession {
        base_name: String,
    },
    SaveSession {
        session: SessionId,
    },
    BranchSession {
        session: SessionId,
        base_name: String,
    },
    CreateUnit {
        session: SessionId,
        name: String,
    },
    BranchUnit {
        unit: UnitId,
        name: String,
    },
    DeleteUnit {
        unit: UnitId,
    },
    SetBookmark {
        unit: UnitId,
        bookmarked: bool,
    },
    Append {
        unit: UnitId,
        #[serde(rename = "type")]
        action_type: String,
        #[serde(default)]
        params: Params,
    },
    Annotate {
        target: NodeRef,
        text: String,
    },
    DeleteAnnotation {
        annotation: AnnotationId,
    },
    Undo {
        unit: UnitId,
    },
    Redo {
        unit: UnitId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record: Option<ActionId>,
    },
    SelectiveUndo {
        unit: UnitId,
        record: ActionId,
    },
    Skip {
        unit: UnitId,
        record: ActionId,
    },
    Unskip {
        unit: UnitId,
        record: ActionId,
    },
    DeleteAction {
        unit: UnitId,
        record: ActionId,
        #[serde(default)]
        confirmed: bool,
    },
    InsertAction {
        unit: UnitId,
        at: usize,
        #[serde(rename = "type")]
        action_type: String,
        #[serde(default)]
        params: Params,
    },
    CopyRange {
        src: UnitId,
        start: usize,
        end: usize,
        dst: UnitId,
        at: usize,
    },
    MoveRange {
        src: UnitId,
        start: usize,
        end: usize,
        dst: UnitId,
        at: usize,
        #[serde(default)]
        confirmed: bool,
    },
    CutRange {
        src: UnitId,
        start: usize,
        end: usize,
        #[serde(default)]
        confirmed: bool,
    },
    Paste {
        dst: UnitId,
        at: usize,
    },
    RevertEdit {
        unit: UnitId,
        edit: ActionId,
    },
    ApplyFix {
        unit: UnitId,
        fix: SuggestedFix,
    },
}

impl Command {
    /// The `op` tag.
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetProject { .. } => "set-project",
            Command::ImportDataset { .. } => "import-dataset",
            Command::NewSession { .. } => "new-session",
            Command::SaveSession { .. } => "save-session",
            Command::BranchSession { .. } => "branch-session",
            Command::CreateUnit { .. } => "create-unit",
            Command::BranchUnit { .. } => "branch-unit",
            Command::DeleteUnit { .. } => "delete-unit",
            Command::SetBookmark { .. } => "set-bookmark",
            Command::Append { .. } => "append",
            Command::Annotate { .. } => "annotate",
            Command::DeleteAnnotation { .. } => "delete-annotation",
            Command::Undo { .. } => "undo",
            Command::Redo { .. } => "redo",
            Command::SelectiveUndo { .. } => "selective-undo",
            Command::Skip { .. } => "skip",
            Command::Unskip { .. } => "unskip",
            Command::DeleteAction { .. } => "delete-action",
            Command::InsertAction { .. } => "insert-action",
            Command::CopyRange { .. } => "copy-range",
            Command::MoveRange { .. } => "move-range",
            Command::CutRange { .. } => "cut-range",
            Command::Paste { .. } => "paste",
            Command::RevertEdit { .. } => "revert-edit",
            Command::ApplyFix { .. } => "apply-fix",
        }
    }
}

/// What a committed command produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub revision: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<SessionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<UnitId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<AnnotationId>,
    /// Records created or changed by the command, ascending.
    pub records: Vec<ActionId>,
    /// Every validation report the command's cascade produced.
    pub reports: Vec<ValidationReport>,
}

impl Outcome {
    /// Ids the event log keeps to check replays against.
    pub fn result_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = Vec::new();
        ids.extend(self.session.map(|s| s.to_string()));
        ids.extend(self.unit.map(|u| u.to_string()));
        ids.extend(self.annotation.map(|a| a.to_string()));
        ids.extend(self.records.iter().map(|r| r.to_string()));
        ids
    }

    pub fn worst_status(&self) -> ValidationStatus {
        self.reports.iter().map(|r| r.status).max().unwrap_or_default()
    }
}

/// Applies `command` to `ws` in place at time `ts`. Not atomic on its own:
/// callers that need all-or-nothing go through [`Engine`].
pub fn apply(ws: &mut Workspace, command: &Command, ts: Millis, author: &str) -> Result<Outcome> {
    let first_new = ws.ids.action + 1;
    let mut out = Outcome::default();
    let edit = |out: &mut Outcome, e: EditOutcome| {
        out.records.extend(e.affected);
        out.records.push(e.record);
        out.reports = e.reports;
    };
    match command {
        Command::SetProject { name, analyst, notes } => {
            let name = name.trim();
            if name.is_empty() {
                return Err(EngineError::EmptyText);
            }
            ws.project.name = name.to_string();
            ws.project.metadata.analyst = analyst.clone();
            ws.project.metadata.notes = notes.clone();
            ws.project.metadata.created_at.get_or_insert(ts);
        }
        Command::ImportDataset { name, csv } => ws.import_dataset(name, csv)?,
        Command::NewSession { base_name } => out.session = Some(ws.new_session(base_name, ts)?),
        Command::SaveSession { session } => out.session = Some(ws.save_session_version(*session, ts, author)?),
        Command::BranchSession { session, base_name } => {
            out.session = Some(ws.branch_session(*session, base_name, ts, author)?)
        }
        Command::CreateUnit { session, name } => out.unit = Some(ws.create_unit(*session, name, ts, author)?),
        Command::BranchUnit { unit, name } => out.unit = Some(ws.branch_unit(*unit, name, ts, author)?),
        Command::DeleteUnit { unit } => ws.delete_unit(*unit, ts, author)?,
        Command::SetBookmark { unit, bookmarked } => ws.set_bookmark(*unit, *bookmarked, ts, author)?,
        Command::Append {
            unit,
            action_type,
            params,
        } => {
            let (_, report) = ws.append_action(*unit, action_type, params.clone(), ts, author)?;
            out.reports.push(report);
        }
        Command::Annotate { target, text } => out.annotation = Some(ws.annotate(*target, text, ts, author)?),
        Command::DeleteAnnotation { annotation } => ws.delete_annotation(*annotation, ts, author)?,
        Command::Undo { unit } => edit(&mut out, ws.undo(*unit, ts, author)?),
        Command::Redo { unit, record } => edit(&mut out, ws.redo(*unit, *record, ts, author)?),
        Command::SelectiveUndo { unit, record } => edit(&mut out, ws.selective_undo(*unit, *record, ts, author)?),
        Command::Skip { unit, record } => edit(&mut out, ws.skip(*unit, *record, ts, author)?),
        Command::Unskip { unit, record } => edit(&mut out, ws.unskip(*unit, *record, ts, author)?),
        Command::DeleteAction {
            unit,
            record,
            confirmed,
        } => edit(&mut out, ws.delete_action(*unit, *record, *confirmed, ts, author)?),
        Command::InsertAction {
            unit,
            at,
            action_type,
            params,
        } => edit(&mut out, ws.insert_action(*unit, *at, action_type, params.clone(), ts, author)?),
        Command::CopyRange {
            src,
            start,
            end,
            dst,
            at,
        } => edit(
            &mut out,
            ws.copy_range(*src, HistoryRange::new(*start, *end), *dst, *at, ts, author)?,
        ),
        Command::MoveRange {
            src,
            start,
            end,
            dst,
            at,
            confirmed,
        } => edit(
            &mut out,
            ws.move_range(*src, HistoryRange::new(*start, *end), *dst, *at, *confirmed, ts, author)?,
        ),
        Command::CutRange {
            src,
            start,
            end,
            confirmed,
        } => edit(
            &mut out,
            ws.cut_range(*src, HistoryRange::new(*start, *end), *confirmed, ts, author)?,
        ),
        Command::Paste { dst, at } => edit(&mut out, ws.paste(*dst, *at, ts, author)?),
        Command::RevertEdit { unit, edit: e } => edit(&mut out, ws.revert_edit(*unit, *e, ts, author)?),
        Command::ApplyFix { unit, fix } => edit(&mut out, ws.apply_fix(*unit, *fix, ts, author)?),
    }
    out.records.extend((first_new..=ws.ids.action).map(ActionId));
    out.records.sort();
    out.records.dedup();
    ws.revision += 1;
    ws.project.metadata.modified_at = Some(ts);
    out.revision = ws.revision;
    Ok(out)
}

/// One committed command. `checksum` chains every entry to the one before
/// it, so truncation or tampering is detectable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub seq: u64,
    pub timestamp: Millis,
    pub op: String,
    pub author: String,
    pub payload: Command,
    pub result: Vec<String>,
    pub checksum: String,
}

impl EventLogEntry {
    pub fn new(seq: u64, timestamp: Millis, author: &str, payload: Command, result: Vec<String>, prev: &str) -> Self {
        let mut entry = EventLogEntry {
            seq,
            timestamp,
            op: payload.name().to_string(),
            author: author.to_string(),
            payload,
            result,
            checksum: String::new(),
        };
        entry.checksum = entry.expected_checksum(prev);
        entry
    }

    /// sha256 over the previous checksum and this entry without its own
    /// checksum.
    pub fn expected_checksum(&self, prev: &str) -> String {
        let body = serde_json::json!({
            "seq": self.seq,
            "timestamp": self.timestamp,
            "op": self.op,
            "author": self.author,
            "payload": self.payload,
            "result": self.result,
        });
        let mut hasher = Sha256::new();
        hasher.update(prev.as_bytes());
        hasher.update(b"\n");
        hasher.update(body.to_string().as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Checksum preceding the first entry.
pub const GENESIS_CHECKSUM: &str = "genesis";

/// Owns a workspace and its event log.
pub struct Engine {
    workspace: Workspace,
    events: Vec<EventLogEntry>,
    clock: Box<dyn Clock>,
    author: String,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("revision", &self.workspace.revision)
            .field("events", &self.events.len())
            .field("author", &self.author)
            .finish()
    }
}

impl Default for Engine {
    fn default() -> Self {
        Engine::new(Workspace::default())
    }
}

impl Engine {
    pub fn new(workspace: Workspace) -> Self {
        Engine {
            workspace,
            events: Vec::new(),
            clock: Box::new(SystemClock),
            author: "analyst".to_string(),
        }
    }

    pub fn with_clock(mut self, clock: impl Clock + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn with_author(mut self, author: &str) -> Self {
        self.author = author.to_string();
        self
    }

    /// Rebuilds the workspace from genesis by re-executing `events`. Each
    /// entry's checksum and result ids must match.
    pub fn from_events(events: Vec<EventLogEntry>) -> Result<Self> {
        let mut engine = Engine::default();
        for entry in events {
            engine.replay_entry(entry)?;
        }
        Ok(engine)
    }

    fn replay_entry(&mut self, entry: EventLogEntry) -> Result<()> {
        let prev = self.tail_checksum().to_string();
        if entry.seq != self.events.len() as u64 + 1 || entry.checksum != entry.expected_checksum(&prev) {
            return Err(EngineError::Integrity(format!("event {} fails the checksum chain", entry.seq)));
        }
        let mut next = self.workspace.clone();
        let outcome = apply(&mut next, &entry.payload, entry.timestamp, &entry.author)?;
        if outcome.result_ids() != entry.result {
            return Err(EngineError::Integrity(format!(
                "event {} replayed to {:?}, log says {:?}",
                entry.seq,
                outcome.result_ids(),
                entry.result
            )));
        }
        self.workspace = next;
        self.events.push(entry);
        Ok(())
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn into_workspace(self) -> Workspace {
        self.workspace
    }

    pub fn events(&self) -> &[EventLogEntry] {
        &self.events
    }

    pub fn revision(&self) -> u64 {
        self.workspace.revision
    }

    pub fn tail_checksum(&self) -> &str {
        self.events.last().map_or(GENESIS_CHECKSUM, |e| e.checksum.as_str())
    }

    /// Applies `command` all-or-nothing and logs it.
    pub fn execute(&mut self, command: Command) -> Result<Outcome> {
        let ts = self.clock.now();
        let author = self.author.clone();
        self.execute_as(command, ts, &author)
    }

    pub fn execute_as(&mut self, command: Command, ts: Millis, author: &str) -> Result<Outcome> {
        let mut next = self.workspace.clone();
        let outcome = apply(&mut next, &command, ts, author)?;
        let entry = EventLogEntry::new(
            self.events.len() as u64 + 1,
            ts,
            author,
            command,
            outcome.result_ids(),
            self.tail_checksum(),
        );
        self.workspace = next;
        self.events.push(entry);
        Ok(outcome)
    }

    pub fn query(&self, query: &Query) -> Result<Value> {
        run_query(&self.workspace, query)
    }
}

/// Read-only requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "query", rename_all = "kebab-case")]
pub enum Query {
    Summary,
    Sessions,
    Units {
        #[serde(default)]
        session: Option<SessionId>,
    },
    History {
        unit: UnitId,
    },
    Replay {
        unit: UnitId,
        #[serde(default)]
        up_to: Option<ActionId>,
    },
    Recover {
        session: SessionId,
    },
    Validate {
        #[serde(default)]
        unit: Option<UnitId>,
    },
    Sankey {
        level: GraphLevel,
        #[serde(default)]
        focus: Option<SessionId>,
    },
    ActionsBetween {
        start: NodeRef,
        end: NodeRef,
    },
    Annotations {
        #[serde(default)]
        target: Option<NodeRef>,
    },
}

fn to_value<T: Serialize>(value: T) -> Value {
    serde_json::to_value(value).expect("engine types serialize")
}

#[derive(Serialize)]
struct SessionSummary<'a> {
    id: SessionId,
    name: String,
    parent: Option<SessionId>,
    frozen: bool,
    units: &'a [UnitId],
    created_at: Millis,
}

#[derive(Serialize)]
struct UnitSummary<'a> {
    id: UnitId,
    name: &'a str,
    session: SessionId,
    branch_parent: Option<UnitId>,
    status: ValidationStatus,
    broken: bool,
    bookmarked: bool,
    deleted: bool,
    history_len: usize,
}

fn session_summaries(ws: &Workspace) -> Vec<SessionSummary<'_>> {
    ws.sessions
        .values()
        .map(|s| SessionSummary {
            id: s.id,
            name: s.display_name(),
            parent: s.parent,
            frozen: ws.is_frozen(s.id),
            units: &s.units,
            created_at: s.created_at,
        })
        .collect()
}

fn unit_summaries(ws: &Workspace, session: Option<SessionId>) -> Result<Vec<UnitSummary<'_>>> {
    if let Some(s) = session {
        ws.session(s)?;
    }
    Ok(ws
        .units
        .values()
        .filter(|u| session.is_none_or(|s| u.session == s))
        .map(|u| UnitSummary {
            id: u.id,
            name: &u.name,
            session: u.session,
            branch_parent: u.branch_parent.map(|p| p.unit),
            status: u.status,
            broken: u.broken,
            bookmarked: u.bookmarked,
            deleted: u.deleted,
            history_len: ws.effective_history(u.id).map_or(0, |h| h.len()),
        })
        .collect())
}

/// Answers `query` against `ws`.
pub fn run_query(ws: &Workspace, query: &Query) -> Result<Value> {
    Ok(match query {
        Query::Summary => serde_json::json!({
            "project": ws.project,
            "revision": ws.revision,
            "sessions": session_summaries(ws),
            "units": unit_summaries(ws, None)?,
            "datasets": ws.datasets.keys().collect::<Vec<_>>(),
            "clipboard": ws.clipboard.as_ref().map(|c| c.entries.len()),
        }),
        Query::Sessions => to_value(session_summaries(ws)),
        Query::Units { session } => to_value(unit_summaries(ws, *session)?),
        Query::History { unit } => {
            let u = ws.unit(*unit)?;
            let inherited = ws.inherited_len(*unit);
            let records: Vec<&ActionRecord> = ws.effective_records(*unit)?;
            serde_json::json!({
                "unit": unit,
                "name": u.name,
                "inherited": inherited,
                "shared_local": ws.shared_local_len(*unit),
                "records": records,
                "status": u.status,
            })
        }
        Query::Replay { unit, up_to } => {
            let (state, failures) = ws.replay_lenient(*unit, *up_to)?;
            serde_json::json!({
                "unit": unit,
                "hash": state.hash(),
                "state": state,
                "failures": failures,
            })
        }
        Query::Recover { session } => to_value(ws.recover_session(*session)?),
        Query::Validate { unit } => {
            let units: Vec<UnitId> = match unit {
                Some(u) => vec![*u],
                None => ws.units.values().filter(|u| !u.deleted).map(|u| u.id).collect(),
            };
            let reports = units.into_iter().map(|u| ws.validate(u)).collect::<Result<Vec<_>>>()?;
            to_value(reports)
        }
        Query::Sankey { level, focus } => to_value(build_graph(ws, *level, *focus)?),
        Query::ActionsBetween { start, end } => {
            let level = match start {
                NodeRef::Session(_) => GraphLevel::Session,
                NodeRef::Unit(_) => GraphLevel::Unit,
            };
            let focus = match start {
                NodeRef::Unit(u) => Some(ws.unit(*u)?.session),
                NodeRef::Session(_) => None,
            };
            let graph = build_graph(ws, level, focus)?;
            to_value(range_selection(ws, &graph, *start, *end)?)
        }
        Query::Annotations { target } => {
            let list: Vec<_> = match target {
                Some(t) => ws.live_annotations(*t),
                None => ws.annotations.values().filter(|a| !a.deleted).collect(),
            };
            to_value(list)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::StepClock;
    use serde_json::json;

    fn cmd(v: Value) -> Command {
        serde_json::from_value(v).unwrap()
    }

    fn engine() -> Engine {
        Engine::default().with_clock(StepClock::default())
    }

    #[test]
    fn wire_form_is_tagged() {
        let c = cmd(json!({"op": "append", "unit": "u1", "type": "load-data", "params": {"dataset": "cars"}}));
        assert_eq!(c.name(), "append");
        let back = serde_json::to_value(&c).unwrap();
        assert_eq!(back["op"], "append");
        assert_eq!(back["type"], "load-data");
    }

    #[test]
    fn revision_moves_once_per_success() {
        let mut e = engine();
        let s = e.execute(cmd(json!({"op": "new-session", "base_name": "a"}))).unwrap();
        assert_eq!(s.revision, 1);
        let err = e.execute(cmd(json!({"op": "undo", "unit": "u9"}))).unwrap_err();
        assert_eq!(err.kind(), "UnknownUnit");
        assert_eq!(e.revision(), 1);
        let u = e.execute(cmd(json!({"op": "create-unit", "session": "s1", "name": "u"}))).unwrap();
        assert_eq!(u.revision, 2);
        assert_eq!(u.unit, Some(UnitId(1)));
        assert_eq!(e.events().len(), 2);
    }

    #[test]
    fn failed_command_leaves_no_trace() {
        let mut e = engine();
        e.execute(cmd(json!({"op": "new-session", "base_name": "a"}))).unwrap();
        e.execute(cmd(json!({"op": "create-unit", "session": "s1", "name": "u"}))).unwrap();
        let before = e.workspace().clone();
        assert!(e
            .execute(cmd(json!({"op": "append", "unit": "u1", "type": "load-data", "params": {"dataset": "missing"}})))
            .is_err());
        assert_eq!(e.workspace(), &before);
    }

    #[test]
    fn append_reports_and_records() {
        let mut e = engine();
        e.execute(cmd(json!({"op": "new-session", "base_name": "a"}))).unwrap();
        e.execute(cmd(json!({"op": "create-unit", "session": "s1", "name": "u"}))).unwrap();
        let out = e
            .execute(cmd(json!({"op": "append", "unit": "u1", "type": "select-algorithm", "params": {"name": "kmeans"}})))
            .unwrap();
        assert_eq!(out.reports.len(), 1);
        assert_eq!(out.worst_status(), ValidationStatus::Broken);
        assert_eq!(out.records, vec![ActionId(2)]);
    }

    #[test]
    fn replay_from_events_matches() {
        let mut e = engine();
        e.execute(cmd(json!({"op": "new-session", "base_name": "a"}))).unwrap();
        e.execute(cmd(json!({"op": "create-unit", "session": "s1", "name": "u"}))).unwrap();
        e.execute(cmd(json!({"op": "append", "unit": "u1", "type": "load-data", "params": {"dataset": "cars"}})))
            .unwrap();
        e.execute(cmd(json!({"op": "undo", "unit": "u1"}))).unwrap();
        let rebuilt = Engine::from_events(e.events().to_vec()).unwrap();
        assert_eq!(rebuilt.workspace(), e.workspace());

        let mut tampered = e.events().to_vec();
        tampered[1].author = "mallory".into();
        assert_eq!(Engine::from_events(tampered).unwrap_err().kind(), "Integrity");
    }

    #[test]
    fn queries_answer() {
        let mut e = engine();
        e.execute(cmd(json!({"op": "new-session", "base_name": "a"}))).unwrap();
        e.execute(cmd(json!({"op": "create-unit", "session": "s1", "name": "u"}))).unwrap();
        let v = e.query(&Query::Validate { unit: None }).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 1);
        let g = e
            .query(&Query::Sankey {
                level: GraphLevel::Session,
                focus: None,
            })
            .unwrap();
        assert_eq!(g["nodes"].as_array().unwrap().len(), 1);
        let r = e
            .query(&Query::ActionsBetween {
                start: "s1".parse().unwrap(),
                end: "s1".parse().unwrap(),
            })
            .unwrap();
        assert_eq!(r["actions"], json!([]));
    }
}
