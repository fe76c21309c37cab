//! The `unitflow` command line.
//!
//! Mutating subcommands open the workspace (replaying its event log),
//! execute one command through the shared command layer and commit it.
//! Exit codes: 0 success, 1 error, 2 when `validate` finds a broken unit
//! or a fixture assertion fails.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::checker::{ValidationReport, ValidationStatus};
use crate::command::{Command, Engine, Outcome, Query};
use crate::fixtures;
use crate::fuzz::{run_fuzz, FuzzConfig};
use crate::ids::{ActionId, AnnotationId, NodeRef, SessionId, UnitId};
use crate::model::{Params, Workspace};
use crate::persist::Store;
use crate::sankey::{build_graph, to_svg, GraphLevel};
use crate::service::{serve, ServeConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_BROKEN: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "unitflow", version, about = "Workflow provenance engine")]
pub struct Cli {
    /// Workspace file; its event log sits next to it as <stem>.events.jsonl.
    #[arg(long, short = 'w', global = true, default_value = "unitflow.json")]
    pub workspace: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Seed for randomized procedures.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Create an empty workspace.
    Init {
        #[arg(long, default_value = "untitled")]
        name: String,
        #[arg(long, default_value = "")]
        analyst: String,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: SocketAddr,
    },
    /// Print the session and unit tree.
    Inspect { workspace: Option<PathBuf> },
    /// Print a unit's replayed state.
    Replay {
        unit: UnitId,
        #[arg(long)]
        up_to: Option<ActionId>,
    },
    /// Print the recovered states of a session version.
    Recover { session: SessionId },
    /// Check pipelines; exits 2 if any unit is broken.
    Validate {
        #[arg(long)]
        unit: Option<UnitId>,
    },
    /// Apply one edit or structural command.
    Edit {
        #[command(subcommand)]
        edit: EditCmd,
    },
    /// Write the workflow sankey as SVG (or JSON for a .json path).
    ExportSankey {
        #[arg(long, value_enum, default_value_t = LevelArg::Session)]
        level: LevelArg,
        #[arg(long)]
        focus: Option<SessionId>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Actions between two nodes on one ancestor path.
    Between { start: NodeRef, end: NodeRef },
    /// Dump the event log.
    Log,
    /// Replay the log from genesis and check saved versions against it.
    Verify,
    /// Run a bundled fixture and report its assertions.
    Fixture {
        name: Option<String>,
        #[arg(long)]
        list: bool,
        /// Also write the resulting workspace and event log here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Import a CSV dataset into the workspace.
    Import {
        #[arg(long)]
        name: String,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Compare the checker with strict re-execution on random edit scripts.
    Fuzz {
        #[arg(long, default_value_t = 10_000)]
        scripts: usize,
        #[arg(long, default_value_t = 50)]
        max_len: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Session,
    Unit,
}

impl From<LevelArg> for GraphLevel {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Session => GraphLevel::Session,
            LevelArg::Unit => GraphLevel::Unit,
        }
    }
}

#[derive(Debug, Args)]
pub struct Range {
    #[arg(long)]
    pub src: UnitId,
    #[arg(long)]
    pub start: usize,
    #[arg(long)]
    pub end: usize,
}

#[derive(Debug, Subcommand)]
pub enum EditCmd {
    NewSession {
        #[arg(long)]
        name: String,
    },
    Save {
        #[arg(long)]
        session: SessionId,
    },
    BranchSession {
        #[arg(long)]
        session: SessionId,
        #[arg(long)]
        name: String,
    },
    CreateUnit {
        #[arg(long)]
        session: SessionId,
        #[arg(long)]
        name: String,
    },
    BranchUnit {
        #[arg(long)]
        unit: UnitId,
        #[arg(long)]
        name: String,
    },
    DeleteUnit {
        #[arg(long)]
        unit: UnitId,
    },
    Bookmark {
        #[arg(long)]
        unit: UnitId,
        #[arg(long)]
        off: bool,
    },
    Append {
        #[arg(long)]
        unit: UnitId,
        #[arg(long = "type")]
        action_type: String,
        #[arg(long, default_value = "{}")]
        params: String,
    },
    Annotate {
        #[arg(long)]
        target: NodeRef,
        #[arg(long)]
        text: String,
    },
    DeleteAnnotation {
        #[arg(long)]
        annotation: AnnotationId,
    },
    Undo {
        #[arg(long)]
        unit: UnitId,
    },
    Redo {
        #[arg(long)]
        unit: UnitId,
        #[arg(long)]
        record: Option<ActionId>,
    },
    SelectiveUndo {
        #[arg(long)]
        unit: UnitId,
        #[arg(long)]
        record: ActionId,
    },
    Skip {
        #[arg(long)]
        unit: UnitId,
        #[arg(long)]
        record: ActionId,
    },
    Unskip {
        #[arg(long)]
        unit: UnitId,
        #[arg(long)]
        record: ActionId,
    },
    Delete {
        #[arg(long)]
        unit: UnitId,
        #[arg(long)]
        record: ActionId,
        #[arg(long)]
        confirm: bool,
    },
    Insert {
        #[arg(long)]
        unit: UnitId,
        #[arg(long)]
        at: usize,
        #[arg(long = "type")]
        action_type: String,
        #[arg(long, default_value = "{}")]
        params: String,
    },
    Copy {
        #[command(flatten)]
        range: Range,
        #[arg(long)]
        dst: UnitId,
        #[arg(long)]
        at: usize,
    },
    Move {
        #[command(flatten)]
        range: Range,
        #[arg(long)]
        dst: UnitId,
        #[arg(long)]
        at: usize,
        #[arg(long)]
        confirm: bool,
    },
    Cut {
        #[command(flatten)]
        range: Range,
        #[arg(long)]
        confirm: bool,
    },
    Paste {
        #[arg(long)]
        dst: UnitId,
        #[arg(long)]
        at: usize,
    },
    Revert {
        #[arg(long)]
        unit: UnitId,
        #[arg(long)]
        edit: ActionId,
    },
    /// Apply the unit's suggested fix, or with --undo-last the reversal of
    /// its last edit.
    Fix {
        #[arg(long)]
        unit: UnitId,
        #[arg(long)]
        undo_last: bool,
    },
    /// Any command in its JSON wire form.
    Json { command: String },
}

fn parse_params(text: &str) -> Result<Params, String> {
    serde_json::from_str(text).map_err(|e| format!("--params must be a JSON object: {e}"))
}

fn to_command(edit: EditCmd, ws: &Workspace) -> Result<Command, String> {
    Ok(match edit {
        EditCmd::NewSession { name } => Command::NewSession { base_name: name },
        EditCmd::Save { session } => Command::SaveSession { session },
        EditCmd::BranchSession { session, name } => Command::BranchSession {
            session,
            base_name: name,
        },
        EditCmd::CreateUnit { session, name } => Command::CreateUnit { session, name },
        EditCmd::BranchUnit { unit, name } => Command::BranchUnit { unit, name },
        EditCmd::DeleteUnit { unit } => Command::DeleteUnit { unit },
        EditCmd::Bookmark { unit, off } => Command::SetBookmark { unit, bookmarked: !off },
        EditCmd::Append {
            unit,
            action_type,
            params,
        } => Command::Append {
            unit,
            action_type,
            params: parse_params(&params)?,
        },
        EditCmd::Annotate { target, text } => Command::Annotate { target, text },
        EditCmd::DeleteAnnotation { annotation } => Command::DeleteAnnotation { annotation },
        EditCmd::Undo { unit } => Command::Undo { unit },
        EditCmd::Redo { unit, record } => Command::Redo { unit, record },
        EditCmd::SelectiveUndo { unit, record } => Command::SelectiveUndo { unit, record },
        EditCmd::Skip { unit, record } => Command::Skip { unit, record },
        EditCmd::Unskip { unit, record } => Command::Unskip { unit, record },
        EditCmd::Delete { unit, record, confirm } => Command::DeleteAction {
            unit,
            record,
            confirmed: confirm,
        },
        EditCmd::Insert {
            unit,
            at,
            action_type,
            params,
        } => Command::InsertAction {
            unit,
            at,
            action_type,
            params: parse_params(&params)?,
        },
        EditCmd::Copy { range, dst, at } => Command::CopyRange {
            src: range.src,
            start: range.start,
            end: range.end,
            dst,
            at,
        },
        EditCmd::Move {
            range,
            dst,
            at,
            confirm,
        } => Command::MoveRange {
            src: range.src,
            start: range.start,
            end: range.end,
            dst,
            at,
            confirmed: confirm,
        },
        EditCmd::Cut { range, confirm } => Command::CutRange {
            src: range.src,
            start: range.start,
            end: range.end,
            confirmed: confirm,
        },
        EditCmd::Paste { dst, at } => Command::Paste { dst, at },
        EditCmd::Revert { unit, edit } => Command::RevertEdit { unit, edit },
        EditCmd::Fix { unit, undo_last } => {
            let report = ws.validate(unit).map_err(|e| e.to_string())?;
            let fix = if undo_last {
                report.undo_last_edit
            } else {
                report.suggestion
            };
            let fix = fix.ok_or_else(|| format!("unit {unit} has no such fix to apply"))?;
            Command::ApplyFix { unit, fix }
        }
        EditCmd::Json { command } => serde_json::from_str(&command).map_err(|e| format!("invalid command: {e}"))?,
    })
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
    format: Format,
}

impl Io<'_> {
    fn json(&mut self, value: &impl serde::Serialize) {
        let _ = writeln!(self.out, "{}", serde_json::to_string_pretty(value).expect("serializes"));
    }

    fn fail(&mut self, message: impl std::fmt::Display) -> i32 {
        let _ = writeln!(self.err, "error: {message}");
        EXIT_ERROR
    }
}

fn report_line(r: &ValidationReport) -> String {
    let mut line = format!("{} {}", r.unit, status_word(r.status));
    if let Some(f) = r.failures.first() {
        line.push_str(&format!(": {} at index {} lacks `{}`", f.record, f.index, f.missing.as_str()));
    }
    if let Some(s) = r.suggestion {
        line.push_str(&format!("; suggestion: {} {}", fix_word(s.kind), s.target));
    }
    if let Some(s) = r.undo_last_edit {
        line.push_str(&format!("; or undo last edit {}", s.target));
    }
    line
}

fn status_word(s: ValidationStatus) -> &'static str {
    match s {
        ValidationStatus::Ok => "ok",
        ValidationStatus::Warn => "warn",
        ValidationStatus::Broken => "broken",
    }
}

fn fix_word(k: crate::checker::FixKind) -> &'static str {
    match k {
        crate::checker::FixKind::RedoRecord => "redo",
        crate::checker::FixKind::UnskipRecord => "unskip",
        crate::checker::FixKind::UndoLastEdit => "revert",
    }
}

fn print_outcome(io: &mut Io<'_>, outcome: &Outcome) {
    if io.format == Format::Json {
        io.json(outcome);
        return;
    }
    let mut parts = vec![format!("revision {}", outcome.revision)];
    parts.extend(outcome.session.map(|s| format!("session {s}")));
    parts.extend(outcome.unit.map(|u| format!("unit {u}")));
    parts.extend(outcome.annotation.map(|a| format!("annotation {a}")));
    if !outcome.records.is_empty() {
        let ids: Vec<String> = outcome.records.iter().map(|r| r.to_string()).collect();
        parts.push(format!("records {}", ids.join(" ")));
    }
    let _ = writeln!(io.out, "{}", parts.join(", "));
    for r in &outcome.reports {
        let _ = writeln!(io.out, "  {}", report_line(r));
    }
}

fn print_tree(io: &mut Io<'_>, ws: &Workspace) {
    let _ = writeln!(io.out, "project {} (revision {})", ws.project.name, ws.revision);
    fn session(io: &mut Io<'_>, ws: &Workspace, s: SessionId, depth: usize) {
        let sess = &ws.sessions[&s];
        let pad = "  ".repeat(depth + 1);
        let frozen = if ws.is_frozen(s) { " [saved]" } else { "" };
        let star = if ws.is_starred(NodeRef::Session(s)) { " *" } else { "" };
        let _ = writeln!(io.out, "{pad}{} {}{frozen}{star}", s, sess.display_name());
        for u in &sess.units {
            let unit = &ws.units[u];
            if unit.deleted {
                continue;
            }
            let len = ws.effective_history(*u).map_or(0, |h| h.len());
            let parent = unit.branch_parent.map(|p| format!(" <- {}", p.unit)).unwrap_or_default();
            let star = if ws.is_starred(NodeRef::Unit(*u)) { " *" } else { "" };
            let _ = writeln!(
                io.out,
                "{pad}  {u} {}{parent}: {len} actions, {}{star}",
                unit.name,
                status_word(unit.status)
            );
        }
        for c in ws.child_sessions(s) {
            session(io, ws, c, depth + 1);
        }
    }
    for root in ws.root_sessions() {
        session(io, ws, root, 0);
    }
}

fn open(io: &mut Io<'_>, path: &PathBuf) -> Result<(Store, Engine), i32> {
    let mut store = Store::new(path);
    if !store.exists() {
        return Err(io.fail(format!(
            "no workspace at {} (create one with `unitflow init`)",
            path.display()
        )));
    }
    match store.open() {
        Ok(engine) => Ok((store, engine)),
        Err(e) => Err(io.fail(e)),
    }
}

fn query(io: &mut Io<'_>, engine: &Engine, q: Query) -> Result<Value, i32> {
    engine.query(&q).map_err(|e| io.fail(format!("{} ({})", e, e.kind())))
}

/// Runs the CLI on `args` (including the program name).
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{e}") } else { write!(out, "{e}") };
            return code;
        }
    };
    let mut io = Io {
        out,
        err,
        format: cli.format,
    };
    match execute(cli, &mut io) {
        Ok(code) | Err(code) => code,
    }
}

fn execute(cli: Cli, io: &mut Io<'_>) -> Result<i32, i32> {
    let path = cli.workspace.clone();
    match cli.command {
        Cmd::Init { name, analyst } => {
            let mut store = Store::new(&path);
            if store.exists() {
                return Err(io.fail(format!("{} already exists", path.display())));
            }
            let mut engine = Engine::default();
            let outcome = engine
                .execute(Command::SetProject {
                    name,
                    analyst,
                    notes: String::new(),
                })
                .map_err(|e| io.fail(e))?;
            store.commit(&engine).map_err(|e| io.fail(e))?;
            print_outcome(io, &outcome);
            Ok(EXIT_OK)
        }
        Cmd::Serve { addr } => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| io.fail(e))?;
            let workspace = Some(path);
            runtime
                .block_on(serve(ServeConfig { addr, workspace }))
                .map_err(|e| io.fail(e))?;
            Ok(EXIT_OK)
        }
        Cmd::Inspect { workspace } => {
            let (_, engine) = open(io, &workspace.unwrap_or(path))?;
            if io.format == Format::Json {
                let v = query(io, &engine, Query::Summary)?;
                io.json(&v);
            } else {
                print_tree(io, engine.workspace());
            }
            Ok(EXIT_OK)
        }
        Cmd::Replay { unit, up_to } => {
            let (_, engine) = open(io, &path)?;
            let v = query(io, &engine, Query::Replay { unit, up_to })?;
            io.json(&v);
            Ok(EXIT_OK)
        }
        Cmd::Recover { session } => {
            let (_, engine) = open(io, &path)?;
            let v = query(io, &engine, Query::Recover { session })?;
            if io.format == Format::Json {
                io.json(&v);
            } else {
                let _ = writeln!(io.out, "{}", v["label"].as_str().unwrap_or_default());
                if let Some(hashes) = v["hashes"].as_object() {
                    for (u, h) in hashes {
                        let _ = writeln!(io.out, "  {u} {}", h.as_str().unwrap_or_default());
                    }
                }
            }
            Ok(EXIT_OK)
        }
        Cmd::Validate { unit } => {
            let (_, engine) = open(io, &path)?;
            let v = query(io, &engine, Query::Validate { unit })?;
            let reports: Vec<ValidationReport> = serde_json::from_value(v).expect("reports round-trip");
            if io.format == Format::Json {
                io.json(&reports);
            } else {
                for r in &reports {
                    let _ = writeln!(io.out, "{}", report_line(r));
                }
            }
            let broken = reports.iter().any(|r| r.status == ValidationStatus::Broken);
            Ok(if broken { EXIT_BROKEN } else { EXIT_OK })
        }
        Cmd::Edit { edit } => {
            let (mut store, mut engine) = open(io, &path)?;
            let command = to_command(edit, engine.workspace()).map_err(|e| io.fail(e))?;
            let outcome = engine
                .execute(command)
                .map_err(|e| io.fail(format!("{} ({})", e, e.kind())))?;
            store.commit(&engine).map_err(|e| io.fail(e))?;
            print_outcome(io, &outcome);
            Ok(EXIT_OK)
        }
        Cmd::ExportSankey { level, focus, out } => {
            let (_, engine) = open(io, &path)?;
            let graph = build_graph(engine.workspace(), level.into(), focus).map_err(|e| io.fail(e))?;
            let bytes = if out.extension().is_some_and(|e| e == "json") {
                let mut s = serde_json::to_string_pretty(&graph).expect("graph serializes");
                s.push('\n');
                s
            } else {
                to_svg(&graph)
            };
            std::fs::write(&out, bytes).map_err(|e| io.fail(format!("{}: {e}", out.display())))?;
            let _ = writeln!(
                io.out,
                "wrote {} ({} nodes, {} links)",
                out.display(),
                graph.nodes.len(),
                graph.links.len()
            );
            Ok(EXIT_OK)
        }
        Cmd::Between { start, end } => {
            let (_, engine) = open(io, &path)?;
            let v = query(io, &engine, Query::ActionsBetween { start, end })?;
            io.json(&v);
            Ok(EXIT_OK)
        }
        Cmd::Log => {
            let (_, engine) = open(io, &path)?;
            if io.format == Format::Json {
                io.json(&engine.events());
            } else {
                for e in engine.events() {
                    let _ = writeln!(
                        io.out,
                        "{:>5} {} {:<16} {} -> [{}]",
                        e.seq,
                        e.timestamp,
                        e.op,
                        serde_json::to_string(&e.payload).expect("serializes"),
                        e.result.join(" ")
                    );
                }
            }
            Ok(EXIT_OK)
        }
        Cmd::Verify => {
            let store = Store::new(&path);
            let checked = store.verify().map_err(|e| io.fail(e))?;
            let _ = writeln!(io.out, "event log replays cleanly; {checked} saved versions match");
            Ok(EXIT_OK)
        }
        Cmd::Fixture { name, list, out } => {
            if list || name.is_none() {
                for n in fixtures::names() {
                    let _ = writeln!(io.out, "{n}");
                }
                return Ok(EXIT_OK);
            }
            let name = name.expect("checked");
            let (engine, report) = fixtures::run_fixture(&name).map_err(|e| io.fail(e))?;
            if let Some(out) = out {
                let mut store = Store::new(&out);
                if store.exists() {
                    return Err(io.fail(format!("{} already exists", out.display())));
                }
                store.commit(&engine).map_err(|e| io.fail(e))?;
            }
            if io.format == Format::Json {
                io.json(&report);
            } else {
                for r in &report.results {
                    let mark = if r.passed { "pass" } else { "FAIL" };
                    let check = serde_json::to_value(&r.assertion).expect("serializes");
                    let _ = writeln!(io.out, "{mark} {} ({})", check["check"].as_str().unwrap_or("?"), r.detail);
                }
                for (u, h) in &report.state_hashes {
                    let _ = writeln!(io.out, "hash {u} {h}");
                }
            }
            Ok(if report.passed() { EXIT_OK } else { EXIT_BROKEN })
        }
        Cmd::Import { name, csv } => {
            let (mut store, mut engine) = open(io, &path)?;
            let text = std::fs::read_to_string(&csv).map_err(|e| io.fail(format!("{}: {e}", csv.display())))?;
            let outcome = engine
                .execute(Command::ImportDataset { name, csv: text })
                .map_err(|e| io.fail(e))?;
            store.commit(&engine).map_err(|e| io.fail(e))?;
            print_outcome(io, &outcome);
            Ok(EXIT_OK)
        }
        Cmd::Fuzz { scripts, max_len } => {
            let config = FuzzConfig {
                seed: cli.seed,
                scripts,
                max_len,
                ..FuzzConfig::default()
            };
            let started = std::time::Instant::now();
            let stats = run_fuzz(&config);
            if io.format == Format::Json {
                io.json(&stats);
            } else {
                let _ = writeln!(
                    io.out,
                    "{} scripts, {} steps ({} committed, {} rejected) in {:.1?}",
                    stats.scripts,
                    stats.steps,
                    stats.committed,
                    stats.rejected,
                    started.elapsed()
                );
                let _ = writeln!(
                    io.out,
                    "verdicts {} (non-ok {}), disagreements {}, stale flags {}",
                    stats.verdicts,
                    stats.non_ok_verdicts,
                    stats.disagreements.len(),
                    stats.stale_flags
                );
                let _ = writeln!(
                    io.out,
                    "fixes checked {}, failed {}; saved versions {}, recover mismatches {}; unresolvable records {}",
                    stats.fixes_checked,
                    stats.fix_failures.len(),
                    stats.saved_versions,
                    stats.recover_mismatches,
                    stats.unresolvable_records
                );
                for (op, n) in &stats.ops {
                    let _ = writeln!(io.out, "  {op:<16} {n}");
                }
            }
            Ok(if stats.clean() { EXIT_OK } else { EXIT_BROKEN })
        }
    }
}
