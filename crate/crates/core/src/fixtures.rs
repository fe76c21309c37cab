//! Scripted demo workspaces with checkable expectations.
//!
//! A fixture is a JSON document listing commands (the same wire form the
//! service accepts) and assertions about the resulting workspace. Fixtures
//! run on a fresh engine with a step clock, so two runs are identical.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::checker::{FixKind, ValidationStatus};
use crate::clock::StepClock;
use crate::command::{Command, Engine};
use crate::error::EngineError;
use crate::ids::{ActionId, SessionId, UnitId};
use crate::model::Workspace;
use crate::sankey::{build_graph, GraphLevel};

const BUNDLED: &[(&str, &str)] = &[
    ("versioned-sessions", include_str!("../fixtures/versioned-sessions.json")),
    ("save-heavy", include_str!("../fixtures/save-heavy.json")),
    ("branch-heavy", include_str!("../fixtures/branch-heavy.json")),
    ("broken-pipeline-demo", include_str!("../fixtures/broken-pipeline-demo.json")),
    ("clean-demo", include_str!("../fixtures/clean-demo.json")),
];

pub const FIXTURE_AUTHOR: &str = "fixture";

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("unknown fixture `{0}`")]
    Unknown(String),
    #[error("fixture `{name}` is malformed: {source}")]
    Malformed { name: String, source: serde_json::Error },
    #[error("fixture `{name}` step {step} ({op}) failed: {source}")]
    Step {
        name: String,
        step: usize,
        op: &'static str,
        source: EngineError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreeLevel {
    Session,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case")]
pub enum Assertion {
    SessionNames { names: Vec<String> },
    SankeyCounts {
        level: GraphLevel,
        #[serde(default)]
        focus: Option<SessionId>,
        nodes: usize,
        links: usize,
    },
    TreeDepthAtLeast { level: TreeLevel, depth: usize },
    FanOutAtMost { level: TreeLevel, fan_out: usize },
    FanOutAtLeast { level: TreeLevel, fan_out: usize },
    BrokenUnits { units: Vec<UnitId> },
    UnitStatus { unit: UnitId, status: ValidationStatus },
    Suggestion { unit: UnitId, kind: FixKind, target: ActionId },
    StateHash { unit: UnitId, hash: String },
    SnapshotsRecover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureScript {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub commands: Vec<Command>,
    pub assertions: Vec<Assertion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub assertion: Assertion,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureReport {
    pub name: String,
    pub results: Vec<AssertionResult>,
    /// Replayed state hash of every live unit.
    pub state_hashes: BTreeMap<UnitId, String>,
}

impl FixtureReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

pub fn names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn script(name: &str) -> Result<FixtureScript, FixtureError> {
    let (_, text) = BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| FixtureError::Unknown(name.to_string()))?;
    serde_json::from_str(text).map_err(|source| FixtureError::Malformed {
        name: name.to_string(),
        source,
    })
}

/// Executes `script` on a fresh engine.
pub fn build(script: &FixtureScript) -> Result<Engine, FixtureError> {
    let mut engine = Engine::default()
        .with_clock(StepClock::default())
        .with_author(FIXTURE_AUTHOR);
    for (step, command) in script.commands.iter().enumerate() {
        let op = command.name();
        engine.execute(command.clone()).map_err(|source| FixtureError::Step {
            name: script.name.clone(),
            step: step + 1,
            op,
            source,
        })?;
    }
    Ok(engine)
}

/// Runs bundled fixture `name` and checks its assertions.
pub fn run_fixture(name: &str) -> Result<(Engine, FixtureReport), FixtureError> {
    let script = script(name)?;
    let engine = build(&script)?;
    let report = check(&script, engine.workspace());
    Ok((engine, report))
}

fn edges(ws: &Workspace, level: TreeLevel) -> Vec<(u64, u64)> {
    match level {
        TreeLevel::Session => ws
            .sessions
            .values()
            .filter_map(|s| s.parent.map(|p| (p.0, s.id.0)))
            .collect(),
        TreeLevel::Unit => ws
            .units
            .values()
            .filter(|u| !u.deleted)
            .filter_map(|u| u.branch_parent.map(|p| (p.unit.0, u.id.0)))
            .collect(),
    }
}

fn max_fan_out(ws: &Workspace, level: TreeLevel) -> usize {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for (p, _) in edges(ws, level) {
        *counts.entry(p).or_default() += 1;
    }
    counts.values().copied().max().unwrap_or(0)
}

/// Longest root-to-leaf path, in edges.
fn tree_depth(ws: &Workspace, level: TreeLevel) -> usize {
    let parent: BTreeMap<u64, u64> = edges(ws, level).into_iter().map(|(p, c)| (c, p)).collect();
    parent
        .keys()
        .map(|&c| {
            let mut d = 0;
            let mut at = c;
            while let Some(&p) = parent.get(&at) {
                d += 1;
                at = p;
            }
            d
        })
        .max()
        .unwrap_or(0)
}

fn json_word<T: Serialize>(value: &T) -> String {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn evaluate(ws: &Workspace, assertion: &Assertion) -> (bool, String) {
    match assertion {
        Assertion::SessionNames { names } => {
            let mut actual: Vec<String> = ws.sessions.values().map(|s| s.display_name()).collect();
            let mut expected = names.clone();
            actual.sort();
            expected.sort();
            (actual == expected, format!("sessions {actual:?}"))
        }
        Assertion::SankeyCounts {
            level,
            focus,
            nodes,
            links,
        } => match build_graph(ws, *level, *focus) {
            Ok(g) => (
                g.nodes.len() == *nodes && g.links.len() == *links,
                format!("{} nodes, {} links", g.nodes.len(), g.links.len()),
            ),
            Err(e) => (false, e.to_string()),
        },
        Assertion::TreeDepthAtLeast { level, depth } => {
            let d = tree_depth(ws, *level);
            (d >= *depth, format!("depth {d}"))
        }
        Assertion::FanOutAtMost { level, fan_out } => {
            let f = max_fan_out(ws, *level);
            (f <= *fan_out, format!("max fan-out {f}"))
        }
        Assertion::FanOutAtLeast { level, fan_out } => {
            let f = max_fan_out(ws, *level);
            (f >= *fan_out, format!("max fan-out {f}"))
        }
        Assertion::BrokenUnits { units } => {
            let actual: Vec<UnitId> = ws.units.values().filter(|u| u.broken && !u.deleted).map(|u| u.id).collect();
            let mut expected = units.clone();
            expected.sort();
            let shown: Vec<String> = actual.iter().map(|u| u.to_string()).collect();
            (actual == expected, format!("broken [{}]", shown.join(", ")))
        }
        Assertion::UnitStatus { unit, status } => match ws.validate(*unit) {
            Ok(r) => (r.status == *status, format!("status {}", json_word(&r.status))),
            Err(e) => (false, e.to_string()),
        },
        Assertion::Suggestion { unit, kind, target } => match ws.validate(*unit) {
            Ok(r) => {
                let ok = r.suggestion.is_some_and(|s| s.kind == *kind && s.target == *target);
                let shown = r
                    .suggestion
                    .map_or("none".to_string(), |s| format!("{} {}", json_word(&s.kind), s.target));
                (ok, format!("suggestion {shown}"))
            }
            Err(e) => (false, e.to_string()),
        },
        Assertion::StateHash { unit, hash } => match ws.state_hash(*unit) {
            Ok(h) => (&h == hash, format!("hash {h}")),
            Err(e) => (false, e.to_string()),
        },
        Assertion::SnapshotsRecover => {
            for s in ws.sessions.values() {
                let Some(saved) = &s.saved_snapshot else {
                    continue;
                };
                match ws.recover_session_uncached(s.id) {
                    Ok(fresh) if fresh.hashes == saved.hashes => {}
                    Ok(_) => return (false, format!("{} drifted", s.display_name())),
                    Err(e) => return (false, e.to_string()),
                }
            }
            (true, "all saved versions recover".into())
        }
    }
}

pub fn check(script: &FixtureScript, ws: &Workspace) -> FixtureReport {
    let results = script
        .assertions
        .iter()
        .map(|a| {
            let (passed, detail) = evaluate(ws, a);
            AssertionResult {
                assertion: a.clone(),
                passed,
                detail,
            }
        })
        .collect();
    let state_hashes = ws
        .units
        .values()
        .filter(|u| !u.deleted)
        .filter_map(|u| ws.state_hash(u.id).ok().map(|h| (u.id, h)))
        .collect();
    FixtureReport {
        name: script.name.clone(),
        results,
        state_hashes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_bundled_fixture_passes() {
        for name in names() {
            let (_, report) = run_fixture(name).unwrap();
            for r in &report.results {
                assert!(r.passed, "{name}: {:?} -> {}", r.assertion, r.detail);
            }
        }
    }

    #[test]
    fn fixtures_are_deterministic() {
        for name in names() {
            let (a, ra) = run_fixture(name).unwrap();
            let (b, rb) = run_fixture(name).unwrap();
            assert_eq!(ra, rb);
            assert_eq!(a.workspace(), b.workspace());
        }
    }

    #[test]
    fn unknown_fixture() {
        assert!(matches!(run_fixture("nope"), Err(FixtureError::Unknown(_))));
    }
}
