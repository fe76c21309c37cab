//! Deterministic replay of unit histories into visual states.
//!
//! A [`UnitState`] is the fold of a unit's active effective-history records
//! through the owning domain plugins, followed by each plugin's `finalize`
//! step. Because every setter simply overwrites its field, the last active
//! record of an override key is the only one that shows in the final state.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::clock::Millis;
use crate::domain::{DomainContext, DEFAULT_COLOR_SCHEME};
use crate::error::{EngineError, Result};
use crate::ids::{ActionId, NodeRef, SessionId, UnitId};
use crate::model::{ActionRecord, ProvenanceKind, Workspace};
use crate::registry::{Capability, Registry};

const HASH_QUANTUM: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetHandle {
    pub name: String,
    /// Content checksum, filled in once the dataset is resolved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

/// Half-open row and column ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterOp {
    Gt,
    Ge,
    Lt,
    Le,
}

impl FilterOp {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gt" => Some(FilterOp::Gt),
            "ge" => Some(FilterOp::Ge),
            "lt" => Some(FilterOp::Lt),
            "le" => Some(FilterOp::Le),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowFilter {
    pub column: usize,
    pub op: FilterOp,
    pub value: f64,
}

impl RowFilter {
    pub fn accepts(&self, row: &[f64]) -> bool {
        let Some(&x) = row.get(self.column) else {
            return false;
        };
        match self.op {
            FilterOp::Gt => x > self.value,
            FilterOp::Ge => x >= self.value,
            FilterOp::Lt => x < self.value,
            FilterOp::Le => x <= self.value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clusters {
    /// Dataset rows that were clustered.
    pub rows: Vec<usize>,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub wcss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DerivedResult {
    Clusters(Clusters),
    Unavailable { reason: String },
}

/// Widget settings plus application content of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitState {
    pub dataset: Option<DatasetHandle>,
    pub selection: Option<Region>,
    #[serde(default)]
    pub filters: Vec<RowFilter>,
    pub algorithm: Option<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, Value>,
    pub color_scheme: String,
    #[serde(default)]
    pub clustering_requested: bool,
    pub derived_result: Option<DerivedResult>,
    #[serde(default)]
    pub widget_settings: BTreeMap<String, Value>,
}

impl Default for UnitState {
    fn default() -> Self {
        UnitState {
            dataset: None,
            selection: None,
            filters: Vec::new(),
            algorithm: None,
            parameters: BTreeMap::new(),
            color_scheme: DEFAULT_COLOR_SCHEME.to_string(),
            clustering_requested: false,
            derived_result: None,
            widget_settings: BTreeMap::new(),
        }
    }
}

fn quantize(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or_default();
            let q = (x * HASH_QUANTUM).round() / HASH_QUANTUM;
            // -0.0 and 0.0 must hash alike
            let q = if q == 0.0 { 0.0 } else { q };
            serde_json::Number::from_f64(q).map_or(Value::Null, Value::Number)
        }
        Value::Array(items) => Value::Array(items.into_iter().map(quantize).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, quantize(v))).collect()),
        other => other,
    }
}

impl UnitState {
    /// JSON form with sorted keys and floats rounded to 1e-9.
    pub fn canonical(&self) -> Value {
        quantize(serde_json::to_value(self).expect("state serializes"))
    }

    /// Hex sha256 of the canonical form.
    pub fn hash(&self) -> String {
        let text = self.canonical().to_string();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

/// A record whose requirement was unmet when the fold reached it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayFailure {
    pub index: usize,
    pub record: ActionId,
    pub missing: Capability,
}

/// Folds `records` (all of them, any status) keeping only active domain
/// records. Unmet preconditions are collected but the effect still
/// applies, so the result is a total function of the history.
pub fn fold(registry: &Registry, ctx: DomainContext<'_>, records: &[&ActionRecord]) -> (UnitState, Vec<ReplayFailure>) {
    let mut state = UnitState::default();
    let mut failures = Vec::new();
    for (index, record) in records.iter().enumerate() {
        if !record.is_active() {
            continue;
        }
        let Some(plugin) = registry.plugin_for(&record.action_type) else {
            continue;
        };
        if let Err(missing) = plugin.precondition(&state, record) {
            failures.push(ReplayFailure {
                index,
                record: record.id,
                missing: missing.0,
            });
        }
        plugin.apply(&mut state, record);
    }
    for plugin in registry.plugins() {
        plugin.finalize(&mut state, ctx);
    }
    (state, failures)
}

/// Strict re-execution: stops at the first record whose precondition the
/// interpreter rejects. This is the reference verdict for the checker.
pub fn first_interpreter_failure(registry: &Registry, records: &[&ActionRecord]) -> Option<ReplayFailure> {
    let mut state = UnitState::default();
    for (index, record) in records.iter().enumerate() {
        if !record.is_active() {
            continue;
        }
        let Some(plugin) = registry.plugin_for(&record.action_type) else {
            continue;
        };
        match plugin.interpret(&state, record) {
            Ok(next) => state = next,
            Err(missing) => {
                return Some(ReplayFailure {
                    index,
                    record: record.id,
                    missing: missing.0,
                })
            }
        }
    }
    None
}

/// Recovered states of every unit of one session version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session: SessionId,
    pub states: BTreeMap<UnitId, UnitState>,
    pub hashes: BTreeMap<UnitId, String>,
    pub created_at: Millis,
    pub label: String,
}

impl Snapshot {
    /// Every stored state still hashes to its recorded hash.
    pub fn is_consistent(&self) -> bool {
        self.states.len() == self.hashes.len()
            && self
                .states
                .iter()
                .all(|(u, s)| self.hashes.get(u).is_some_and(|h| *h == s.hash()))
    }
}

/// One changed field with its old and new values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldChange {
    pub before: Value,
    pub after: Value,
}

/// Field-level differences between two states, keyed by dotted path.
/// Map-valued fields (`parameters`, `widget_settings`) are compared per
/// key; everything else as a whole.
pub fn diff_states(a: &UnitState, b: &UnitState) -> BTreeMap<String, FieldChange> {
    let (raw_a, raw_b) = (
        serde_json::to_value(a).expect("state serializes"),
        serde_json::to_value(b).expect("state serializes"),
    );
    let (can_a, can_b) = (a.canonical(), b.canonical());
    let mut out = BTreeMap::new();
    let fields = raw_a.as_object().expect("state is an object");
    for key in fields.keys() {
        let nested = matches!(key.as_str(), "parameters" | "widget_settings");
        if nested {
            let empty = serde_json::Map::new();
            let (ma, mb) = (
                raw_a[key].as_object().unwrap_or(&empty),
                raw_b[key].as_object().unwrap_or(&empty),
            );
            let mut names: Vec<&String> = ma.keys().chain(mb.keys()).collect();
            names.sort();
            names.dedup();
            for name in names {
                let before = ma.get(name).cloned().unwrap_or(Value::Null);
                let after = mb.get(name).cloned().unwrap_or(Value::Null);
                if quantize(before.clone()) != quantize(after.clone()) {
                    out.insert(format!("{key}.{name}"), FieldChange { before, after });
                }
            }
        } else if can_a[key] != can_b[key] {
            out.insert(
                key.clone(),
                FieldChange {
                    before: raw_a[key].clone(),
                    after: raw_b[key].clone(),
                },
            );
        }
    }
    out
}

impl Workspace {
    fn history_upto(&self, unit: UnitId, up_to: Option<ActionId>) -> Result<Vec<&ActionRecord>> {
        let mut records = self.effective_records(unit)?;
        if let Some(last) = up_to {
            let pos = records
                .iter()
                .position(|r| r.id == last)
                .ok_or(EngineError::NotInHistory { unit, record: last })?;
            records.truncate(pos + 1);
        }
        Ok(records)
    }

    /// State of `unit` after its active records up to and including
    /// `up_to`. Fails with `BrokenPipeline` at the first unmet requirement.
    pub fn replay(&self, unit: UnitId, up_to: Option<ActionId>) -> Result<UnitState> {
        let records = self.history_upto(unit, up_to)?;
        if let Some(f) = first_interpreter_failure(&self.registry, &records) {
            return Err(EngineError::BrokenPipeline {
                unit,
                index: f.index,
                record: f.record,
                missing: f.missing.0,
            });
        }
        Ok(fold(&self.registry, self.domain_context(), &records).0)
    }

    /// Like [`replay`](Self::replay) but never fails: unmet requirements
    /// are reported next to the state.
    pub fn replay_lenient(&self, unit: UnitId, up_to: Option<ActionId>) -> Result<(UnitState, Vec<ReplayFailure>)> {
        let records = self.history_upto(unit, up_to)?;
        Ok(fold(&self.registry, self.domain_context(), &records))
    }

    /// The state shown for a unit, broken or not.
    pub fn unit_state(&self, unit: UnitId) -> Result<UnitState> {
        Ok(self.replay_lenient(unit, None)?.0)
    }

    pub fn state_hash(&self, unit: UnitId) -> Result<String> {
        Ok(self.unit_state(unit)?.hash())
    }

    pub(crate) fn take_snapshot(&self, session: SessionId, ts: Millis, label: &str) -> Result<Snapshot> {
        let mut states = BTreeMap::new();
        let mut hashes = BTreeMap::new();
        for &u in &self.session(session)?.units {
            let state = self.unit_state(u)?;
            hashes.insert(u, state.hash());
            states.insert(u, state);
        }
        Ok(Snapshot {
            session,
            states,
            hashes,
            created_at: ts,
            label: label.to_string(),
        })
    }

    /// States of every unit of a session version, from the saved snapshot
    /// when it is present and consistent, otherwise by replay.
    pub fn recover_session(&self, session: SessionId) -> Result<Snapshot> {
        let s = self.session(session)?;
        if let Some(snapshot) = &s.saved_snapshot {
            let same_units = snapshot.states.keys().copied().eq(s.units.iter().copied().collect::<std::collections::BTreeSet<_>>());
            if same_units && snapshot.is_consistent() {
                return Ok(snapshot.clone());
            }
        }
        self.recover_session_uncached(session)
    }

    pub fn recover_session_uncached(&self, session: SessionId) -> Result<Snapshot> {
        let s = self.session(session)?;
        self.take_snapshot(session, s.created_at, &s.display_name())
    }

    /// Records introduced by a session version itself: its session-scope
    /// records plus unit records not inherited from the parent version.
    pub fn session_delta(&self, session: SessionId) -> Result<Vec<ActionId>> {
        let s = self.session(session)?;
        let mut out: Vec<ActionId> = s.actions.clone();
        let mut unit_ids: Vec<UnitId> = s.units.clone();
        // deleted units still contributed their records to this version
        unit_ids.extend(self.units.values().filter(|u| u.deleted && u.session == session).map(|u| u.id));
        for u in unit_ids {
            out.extend(
                self.units[&u]
                    .local_actions
                    .iter()
                    .filter(|r| {
                        !self.records[*r]
                            .provenance
                            .is_some_and(|p| p.kind == ProvenanceKind::Inherited)
                    })
                    .copied(),
            );
        }
        out.sort();
        Ok(out)
    }

    /// Actions performed after `a` up to and including `b`, where one node
    /// is an ancestor of the other (order of the arguments is free).
    pub fn actions_between(&self, a: NodeRef, b: NodeRef) -> Result<Vec<ActionId>> {
        let off_path = || EngineError::NotOnOnePath(a.to_string(), b.to_string());
        match (a, b) {
            (NodeRef::Unit(x), NodeRef::Unit(y)) => {
                self.unit(x)?;
                self.unit(y)?;
                let (top, bottom) = if self.is_unit_ancestor(x, y) {
                    (x, y)
                } else if self.is_unit_ancestor(y, x) {
                    (y, x)
                } else {
                    return Err(off_path());
                };
                if top == bottom {
                    return Ok(Vec::new());
                }
                let mut cursor = bottom;
                let start = loop {
                    let parent = self.units[&cursor].branch_parent.expect("ancestor path");
                    if parent.unit == top {
                        break parent.prefix_length;
                    }
                    cursor = parent.unit;
                };
                Ok(self.effective_history(bottom)?.split_off(start))
            }
            (NodeRef::Session(x), NodeRef::Session(y)) => {
                self.session(x)?;
                self.session(y)?;
                let (top, bottom) = if self.is_session_ancestor(x, y) {
                    (x, y)
                } else if self.is_session_ancestor(y, x) {
                    (y, x)
                } else {
                    return Err(off_path());
                };
                let mut out = Vec::new();
                let mut cursor = bottom;
                while cursor != top {
                    out.extend(self.session_delta(cursor)?);
                    cursor = self.sessions[&cursor].parent.expect("ancestor path");
                }
                out.sort();
                Ok(out)
            }
            _ => Err(off_path()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Params;
    use serde_json::json;

    fn p(v: Value) -> Params {
        serde_json::from_value(v).unwrap()
    }

    fn setup() -> (Workspace, SessionId, UnitId) {
        let mut ws = Workspace::new("t");
        let s = ws.new_session("sessionA", 0).unwrap();
        let u = ws.create_unit(s, "u1", 1, "t").unwrap();
        (ws, s, u)
    }

    fn add(ws: &mut Workspace, u: UnitId, ty: &str, v: Value) -> ActionId {
        ws.append_action(u, ty, p(v), 10, "t").unwrap().0
    }

    #[test]
    fn empty_history_is_default() {
        let (ws, _, u) = setup();
        let state = ws.replay(u, None).unwrap();
        assert_eq!(state, UnitState::default());
        assert_eq!(state.color_scheme, "viridis");
        assert!(state.dataset.is_none());
    }

    #[test]
    fn last_color_wins() {
        let (mut ws, _, u) = setup();
        add(&mut ws, u, "load-data", json!({"dataset": "cars"}));
        add(&mut ws, u, "set-color-scheme", json!({"scheme": "red"}));
        add(&mut ws, u, "set-color-scheme", json!({"scheme": "blue"}));
        assert_eq!(ws.replay(u, None).unwrap().color_scheme, "blue");
    }

    #[test]
    fn later_parameter_overrides() {
        let (mut ws, _, u) = setup();
        add(&mut ws, u, "load-data", json!({"dataset": "cars"}));
        add(&mut ws, u, "select-algorithm", json!({"name": "kmeans"}));
        add(&mut ws, u, "set-parameter", json!({"name": "k", "value": 3}));
        add(&mut ws, u, "set-parameter", json!({"name": "k", "value": 5}));
        assert_eq!(ws.replay(u, None).unwrap().parameters["k"], json!(5));
    }

    #[test]
    fn up_to_equals_truncated_history() {
        let (mut ws, s, u) = setup();
        let ids = [
            add(&mut ws, u, "load-data", json!({"dataset": "cars"})),
            add(&mut ws, u, "select-algorithm", json!({"name": "kmeans"})),
            add(&mut ws, u, "set-parameter", json!({"name": "k", "value": 3})),
            add(&mut ws, u, "run-clustering", json!({})),
            add(&mut ws, u, "set-color-scheme", json!({"scheme": "magma"})),
        ];
        let partial = ws.replay(u, Some(ids[1])).unwrap();
        let v = ws.create_unit(s, "copy", 11, "t").unwrap();
        add(&mut ws, v, "load-data", json!({"dataset": "cars"}));
        add(&mut ws, v, "select-algorithm", json!({"name": "kmeans"}));
        assert_eq!(partial.hash(), ws.replay(v, None).unwrap().hash());
        assert!(matches!(
            ws.replay(v, Some(ids[4])),
            Err(EngineError::NotInHistory { .. })
        ));
    }

    #[test]
    fn broken_pipeline_is_reported_by_strict_replay() {
        let (mut ws, _, u) = setup();
        let algo = add(&mut ws, u, "select-algorithm", json!({"name": "kmeans"}));
        match ws.replay(u, None) {
            Err(EngineError::BrokenPipeline { index, record, missing, .. }) => {
                assert_eq!((index, record, missing.as_str()), (0, algo, "data-loaded"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let (_, failures) = ws.replay_lenient(u, None).unwrap();
        assert_eq!(failures.len(), 1);
    }

    #[test]
    fn hash_is_stable_and_quantized() {
        let mut a = UnitState::default();
        a.parameters.insert("eps".into(), json!(0.1 + 0.2));
        let mut b = UnitState::default();
        b.parameters.insert("eps".into(), json!(0.3));
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
        assert!(diff_states(&a, &b).is_empty());
    }

    #[test]
    fn diff_reports_changed_fields() {
        let (mut ws, _, u) = setup();
        add(&mut ws, u, "load-data", json!({"dataset": "cars"}));
        add(&mut ws, u, "select-algorithm", json!({"name": "kmeans"}));
        let k3 = add(&mut ws, u, "set-parameter", json!({"name": "k", "value": 3}));
        add(&mut ws, u, "set-parameter", json!({"name": "k", "value": 5}));
        let before = ws.replay(u, Some(k3)).unwrap();
        let after = ws.replay(u, None).unwrap();
        let diff = diff_states(&before, &after);
        assert_eq!(diff.len(), 1);
        assert_eq!(diff["parameters.k"], FieldChange { before: json!(3), after: json!(5) });
        assert!(diff_states(&after, &after).is_empty());
    }

    #[test]
    fn diff_after_dataset_change() {
        let (mut ws, _, u) = setup();
        ws.import_dataset("tiny", "x,y\n0,0\n0,1\n10,10\n10,11\n").unwrap();
        add(&mut ws, u, "load-data", json!({"dataset": "cars"}));
        add(&mut ws, u, "select-algorithm", json!({"name": "kmeans"}));
        let run = add(&mut ws, u, "run-clustering", json!({}));
        add(&mut ws, u, "load-data", json!({"dataset": "tiny"}));
        let before = ws.replay(u, Some(run)).unwrap();
        let after = ws.replay(u, None).unwrap();
        let keys: Vec<_> = diff_states(&before, &after).into_keys().collect();
        assert_eq!(keys, vec!["dataset", "derived_result"]);
    }

    #[test]
    fn recover_frozen_version_ignores_later_work() {
        let (mut ws, s0, u) = setup();
        add(&mut ws, u, "load-data", json!({"dataset": "cars"}));
        let before = ws.recover_session(s0).unwrap();
        let s1 = ws.save_session_version(s0, 20, "t").unwrap();
        let nu = ws.session(s1).unwrap().units[0];
        add(&mut ws, nu, "select-algorithm", json!({"name": "kmeans"}));
        let after = ws.recover_session(s0).unwrap();
        assert_eq!(before.hashes, after.hashes);
        assert_eq!(after, ws.session(s0).unwrap().saved_snapshot.clone().unwrap());
        assert_eq!(
            ws.recover_session_uncached(s0).unwrap().states,
            after.states
        );
        assert_ne!(ws.recover_session(s1).unwrap().hashes[&nu], before.hashes[&u]);
    }

    #[test]
    fn between_units_and_sessions() {
        let (mut ws, s0, u) = setup();
        add(&mut ws, u, "load-data", json!({"dataset": "cars"}));
        let b = ws.branch_unit(u, "b", 2, "t").unwrap();
        let ids: Vec<_> = (0..4)
            .map(|i| add(&mut ws, b, "set-color-scheme", json!({"scheme": COLOR[i]})))
            .collect();
        assert_eq!(ws.actions_between(NodeRef::Unit(u), NodeRef::Unit(b)).unwrap(), ids);
        assert!(ws.actions_between(NodeRef::Unit(b), NodeRef::Unit(b)).unwrap().is_empty());
        let c = ws.branch_unit(u, "c", 3, "t").unwrap();
        assert!(matches!(
            ws.actions_between(NodeRef::Unit(b), NodeRef::Unit(c)),
            Err(EngineError::NotOnOnePath(..))
        ));
        let s1 = ws.save_session_version(s0, 4, "t").unwrap();
        let s2 = ws.branch_session(s0, "sessionB", 5, "t").unwrap();
        assert!(matches!(
            ws.actions_between(NodeRef::Session(s1), NodeRef::Session(s2)),
            Err(EngineError::NotOnOnePath(..))
        ));
        let nu = ws.session(s1).unwrap().units[0];
        let new = add(&mut ws, nu, "set-color-scheme", json!({"scheme": "red"}));
        assert_eq!(
            ws.actions_between(NodeRef::Session(s0), NodeRef::Session(s1)).unwrap(),
            vec![new]
        );
    }

    const COLOR: [&str; 4] = ["red", "blue", "magma", "greys"];
}
