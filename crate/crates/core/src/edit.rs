//! History editing: undo/redo, selective undo, skip, delete, insert, and
//! copy/move/cut/paste of action series between units.
//!
//! Every successful edit logs exactly one history-category record in the
//! acting unit's local history. The record carries an [`EditTrace`] of the
//! status flips, insertions and removals it performed, and the edit returns
//! validation reports for every unit whose history it touched.

use serde::{Deserialize, Serialize};

use crate::checker::{FixKind, SuggestedFix, ValidationReport, ValidationStatus};
use crate::clock::Millis;
use crate::error::{EngineError, Result};
use crate::ids::{ActionId, NodeRef, UnitId};
use crate::model::{
    ActionRecord, ActionStatus, Annotation, ClipEntry, Clipboard, EditTrace, Params, Provenance,
    ProvenanceKind, StatusFlip, Tombstone, Workspace,
};
use crate::registry::{builtin, ActionCategory};

/// Result of one committed edit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditOutcome {
    /// The history record logged for the edit.
    pub record: ActionId,
    /// Records the edit changed or created.
    pub affected: Vec<ActionId>,
    pub reports: Vec<ValidationReport>,
}

/// Contiguous positions `start..end` of a unit's effective history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRange {
    pub start: usize,
    pub end: usize,
}

impl HistoryRange {
    pub fn new(start: usize, end: usize) -> Self {
        HistoryRange { start, end }
    }
}

fn id_params(key: &str, ids: &[ActionId]) -> Params {
    let mut params = Params::new();
    let value = match ids {
        [one] => one.to_string().into(),
        many => many.iter().map(|i| serde_json::Value::from(i.to_string())).collect(),
    };
    params.insert(key.into(), value);
    params
}

impl Workspace {
    fn ensure_in_history(&self, unit: UnitId, record: ActionId) -> Result<&ActionRecord> {
        self.record(record)?;
        if !self.effective_history(unit)?.contains(&record) {
            return Err(EngineError::NotInHistory { unit, record });
        }
        let r = &self.records[&record];
        if r.is_history() {
            return Err(EngineError::NotEditable(record));
        }
        Ok(r)
    }

    fn expect_status(&self, record: ActionId, expected: ActionStatus) -> Result<()> {
        let found = self.record(record)?.status;
        if found != expected {
            return Err(EngineError::WrongStatus {
                record,
                expected,
                found,
            });
        }
        Ok(())
    }

    /// Appends the history record for an edit to `unit`'s local history.
    fn log_edit(
        &mut self,
        unit: UnitId,
        action_type: &str,
        params: Params,
        trace: EditTrace,
        ts: Millis,
        author: &str,
    ) -> ActionId {
        let id = self
            .new_record(action_type, params, ts, author)
            .expect("history types are built in");
        self.records.get_mut(&id).expect("just created").edit = Some(trace);
        self.units.get_mut(&unit).expect("checked").local_actions.push(id);
        id
    }

    fn set_status(&mut self, record: ActionId, to: ActionStatus) -> StatusFlip {
        let r = self.records.get_mut(&record).expect("checked");
        let flip = StatusFlip {
            record,
            from: r.status,
            to,
        };
        r.status = to;
        flip
    }

    /// Whether deactivating `record` in `unit` could change any verdict:
    /// it cannot when the record is the unit's last domain record and no
    /// other unit inherits it.
    fn deactivation_needs_check(&self, unit: UnitId, record: ActionId) -> bool {
        let ty = &self.records[&record].action_type;
        if !self.classify(ty).unwrap_or(true) {
            return false;
        }
        let history = self.effective_history(unit).expect("checked");
        let pos = history.iter().position(|r| *r == record).expect("checked");
        let nothing_after = history[pos + 1..]
            .iter()
            .all(|r| self.registry.plugin_for(&self.records[r].action_type).is_none());
        !(nothing_after && self.units_containing(record) == vec![unit])
    }

    #[allow(clippy::too_many_arguments)]
    fn flip_one(
        &mut self,
        unit: UnitId,
        record: ActionId,
        from: ActionStatus,
        to: ActionStatus,
        action_type: &str,
        ts: Millis,
        author: &str,
    ) -> Result<EditOutcome> {
        self.ensure_unit_mutable(unit)?;
        self.ensure_in_history(unit, record)?;
        self.expect_status(record, from)?;
        let needs_check = if to == ActionStatus::Active {
            self.classify(&self.records[&record].action_type).unwrap_or(true)
        } else {
            self.deactivation_needs_check(unit, record)
        };
        let flip = self.set_status(record, to);
        let trace = EditTrace {
            flips: vec![flip],
            ..EditTrace::default()
        };
        let h = self.log_edit(unit, action_type, id_params("target", &[record]), trace, ts, author);
        let reports = self.cascade_validate(record, Some(unit), Some(h), needs_check);
        Ok(EditOutcome {
            record: h,
            affected: vec![record],
            reports,
        })
    }

    /// The unit's most recently activated local record: appended, or
    /// reactivated by a redo, whichever happened last. Usually the tail.
    pub fn undo_candidate(&self, unit: UnitId) -> Result<Option<ActionId>> {
        let local = &self.unit(unit)?.local_actions;
        let live = |id: ActionId| {
            let r = &self.records[&id];
            r.is_active() && !r.is_history() && local.contains(&id)
        };
        for id in local.iter().rev() {
            let r = &self.records[id];
            if !r.is_history() {
                if r.is_active() {
                    return Ok(Some(*id));
                }
                continue;
            }
            if r.action_type != builtin::REDO {
                continue;
            }
            let redone = r.edit.iter().flat_map(|t| &t.flips).find(|f| f.to == ActionStatus::Active);
            if let Some(f) = redone.filter(|f| live(f.record)) {
                return Ok(Some(f.record));
            }
        }
        Ok(None)
    }

    /// Undoes the unit's most recently activated record, so that undo and
    /// redo invert each other even after selective edits.
    pub fn undo(&mut self, unit: UnitId, ts: Millis, author: &str) -> Result<EditOutcome> {
        self.ensure_unit_mutable(unit)?;
        let target = self.undo_candidate(unit)?.ok_or(EngineError::EmptyUndoStack(unit))?;
        self.flip_one(unit, target, ActionStatus::Active, ActionStatus::Undone, builtin::UNDO, ts, author)
    }

    /// Most recent undo target of this unit that is still undone.
    pub fn redo_candidate(&self, unit: UnitId) -> Result<Option<ActionId>> {
        let history = self.effective_history(unit)?;
        for id in self.unit(unit)?.local_actions.iter().rev() {
            let r = &self.records[id];
            if r.action_type != builtin::UNDO && r.action_type != builtin::SELECTIVE_UNDO {
                continue;
            }
            let Some(trace) = &r.edit else { continue };
            for flip in &trace.flips {
                if flip.to == ActionStatus::Undone
                    && self.records[&flip.record].status == ActionStatus::Undone
                    && history.contains(&flip.record)
                {
                    return Ok(Some(flip.record));
                }
            }
        }
        Ok(None)
    }

    /// Reactivates `record`, or the most recently undone record when none
    /// is given. Skipped records are only reachable through `unskip`.
    pub fn redo(&mut self, unit: UnitId, record: Option<ActionId>, ts: Millis, author: &str) -> Result<EditOutcome> {
        self.ensure_unit_mutable(unit)?;
        let target = match record {
            Some(r) => r,
            None => self.redo_candidate(unit)?.ok_or(EngineError::NothingToRedo(unit))?,
        };
        self.flip_one(unit, target, ActionStatus::Undone, ActionStatus::Active, builtin::REDO, ts, author)
    }

    pub fn selective_undo(&mut self, unit: UnitId, record: ActionId, ts: Millis, author: &str) -> Result<EditOutcome> {
        self.flip_one(unit, record, ActionStatus::Active, ActionStatus::Undone, builtin::SELECTIVE_UNDO, ts, author)
    }

    pub fn skip(&mut self, unit: UnitId, record: ActionId, ts: Millis, author: &str) -> Result<EditOutcome> {
        self.flip_one(unit, record, ActionStatus::Active, ActionStatus::Skipped, builtin::SKIP, ts, author)
    }

    pub fn unskip(&mut self, unit: UnitId, record: ActionId, ts: Millis, author: &str) -> Result<EditOutcome> {
        self.flip_one(unit, record, ActionStatus::Skipped, ActionStatus::Active, builtin::UNSKIP, ts, author)
    }

    /// Physically removes a local, unshared record. When the result would
    /// be Broken the call fails unless `confirmed`.
    pub fn delete_action(
        &mut self,
        unit: UnitId,
        record: ActionId,
        confirmed: bool,
        ts: Millis,
        author: &str,
    ) -> Result<EditOutcome> {
        self.ensure_unit_mutable(unit)?;
        self.ensure_in_history(unit, record)?;
        let local_pos = self.units[&unit].local_actions.iter().position(|r| *r == record);
        let shared = self.shared_local_len(unit);
        let local_pos = match local_pos {
            Some(pos) if pos >= shared => pos,
            _ => return Err(EngineError::SharedPrefixDelete { unit, record }),
        };
        if !confirmed {
            let mut trial = self.clone();
            trial.units.get_mut(&unit).expect("checked").local_actions.remove(local_pos);
            let report = trial.validate(unit)?;
            if report.status == ValidationStatus::Broken {
                return Err(EngineError::UnconfirmedDestructive(Box::new(report)));
            }
        }
        let needs_check = self.deactivation_needs_check(unit, record);
        self.units.get_mut(&unit).expect("checked").local_actions.remove(local_pos);
        let trace = EditTrace {
            removed: vec![record],
            ..EditTrace::default()
        };
        let h = self.log_edit(unit, builtin::DELETE_ACTION, id_params("target", &[record]), trace, ts, author);
        self.records.get_mut(&record).expect("checked").removed = Some(Tombstone { at: ts, by: h });
        let reports = self.refresh_units(&[unit], Some(h), needs_check);
        Ok(EditOutcome {
            record: h,
            affected: vec![record],
            reports,
        })
    }

    fn check_insert_position(&self, unit: UnitId, at: usize) -> Result<()> {
        let len = self.unit(unit)?.local_actions.len();
        if at > len {
            return Err(EngineError::IndexOutOfBounds { index: at, len });
        }
        if at < self.shared_local_len(unit) {
            return Err(EngineError::SharedPrefixInsert { unit, index: at });
        }
        Ok(())
    }

    /// Inserts a new active record at local position `at`.
    pub fn insert_action(
        &mut self,
        unit: UnitId,
        at: usize,
        action_type: &str,
        params: Params,
        ts: Millis,
        author: &str,
    ) -> Result<EditOutcome> {
        self.ensure_unit_mutable(unit)?;
        self.check_insert_position(unit, at)?;
        self.check_append_type(action_type, &params)?;
        let id = self.new_record(action_type, params, ts, author)?;
        self.units.get_mut(&unit).expect("checked").local_actions.insert(at, id);
        let trace = EditTrace {
            inserted: vec![id],
            ..EditTrace::default()
        };
        let mut params = id_params("record", &[id]);
        params.insert("index".into(), at.into());
        let h = self.log_edit(unit, builtin::INSERT_ACTION, params, trace, ts, author);
        let needs_check = self.classify(action_type).unwrap_or(true);
        let reports = self.refresh_units(&[unit], Some(h), needs_check);
        Ok(EditOutcome {
            record: h,
            affected: vec![id],
            reports,
        })
    }

    fn is_transferable(&self, record: &ActionRecord) -> bool {
        record.action_type == builtin::CREATE_ANNOTATION || self.registry.plugin_for(&record.action_type).is_some()
    }

    /// Transferable records of a range; history bookkeeping is left out.
    fn range_records(&self, unit: UnitId, range: HistoryRange) -> Result<Vec<ActionId>> {
        let history = self.effective_history(unit)?;
        if range.start > range.end || range.end > history.len() {
            return Err(EngineError::InvalidRange {
                start: range.start,
                end: range.end,
                len: history.len(),
            });
        }
        let ids: Vec<ActionId> = history[range.start..range.end]
            .iter()
            .copied()
            .filter(|r| self.is_transferable(&self.records[r]))
            .collect();
        if ids.is_empty() {
            return Err(EngineError::EmptyRange);
        }
        Ok(ids)
    }

    fn check_overlap(&self, src: UnitId, range: HistoryRange, dst: UnitId, at: usize) -> Result<()> {
        if src == dst {
            let position = self.inherited_len(dst) + at;
            if range.start < position && position < range.end {
                return Err(EngineError::OverlappingRange);
            }
        }
        Ok(())
    }

    fn clip_entry(&self, id: ActionId) -> ClipEntry {
        let r = &self.records[&id];
        ClipEntry {
            action_type: r.action_type.clone(),
            category: r.category,
            params: r.params.clone(),
            status: r.status,
            timestamp: r.timestamp,
            author: r.author.clone(),
            source: id,
        }
    }

    /// Creates records for `entries` at local position `at` of `dst`.
    fn materialize(&mut self, dst: UnitId, at: usize, entries: &[ClipEntry], kind: ProvenanceKind) -> Vec<ActionId> {
        let mut created = Vec::with_capacity(entries.len());
        for entry in entries {
            let id = self.ids.next_action();
            let mut params = entry.params.clone();
            if entry.action_type == builtin::CREATE_ANNOTATION {
                let annotation = self.ids.next_annotation();
                params.insert("annotation".into(), annotation.to_string().into());
                let text = params.get("text").and_then(|t| t.as_str()).unwrap_or_default().to_string();
                self.annotations.insert(
                    annotation,
                    Annotation {
                        id: annotation,
                        text,
                        author: entry.author.clone(),
                        timestamp: entry.timestamp,
                        attached_to: NodeRef::Unit(dst),
                        record: id,
                        deleted: false,
                    },
                );
                self.units.get_mut(&dst).expect("checked").annotations.push(annotation);
            }
            let mut record = ActionRecord::new(id, &entry.action_type, entry.category, params, entry.timestamp, &entry.author);
            record.status = entry.status;
            record.provenance = Some(Provenance {
                kind,
                source: entry.source,
            });
            self.records.insert(id, record);
            created.push(id);
        }
        let local = &mut self.units.get_mut(&dst).expect("checked").local_actions;
        for (offset, id) in created.iter().enumerate() {
            local.insert(at + offset, *id);
        }
        created
    }

    /// Takes records out of `src`: local unshared ones are removed, the
    /// rest are flipped to Undone. Returns the trace parts and a position
    /// correction for insertions into `src` at `before`.
    fn extract(&mut self, src: UnitId, ids: &[ActionId], before: Option<usize>) -> (Vec<StatusFlip>, Vec<ActionId>, usize) {
        let shared = self.shared_local_len(src);
        let local = self.units[&src].local_actions.clone();
        let mut flips = Vec::new();
        let mut removed = Vec::new();
        let mut shift = 0;
        for id in ids {
            match local.iter().position(|r| r == id) {
                Some(pos) if pos >= shared => {
                    removed.push(*id);
                    if before.is_some_and(|b| pos < b) {
                        shift += 1;
                    }
                }
                _ => {
                    if self.records[id].is_active() {
                        flips.push(self.set_status(*id, ActionStatus::Undone));
                    }
                }
            }
        }
        self.units
            .get_mut(&src)
            .expect("checked")
            .local_actions
            .retain(|r| !removed.contains(r));
        (flips, removed, shift)
    }

    fn tombstone(&mut self, ids: &[ActionId], by: ActionId, ts: Millis) {
        for id in ids {
            self.records.get_mut(id).expect("exists").removed = Some(Tombstone { at: ts, by });
        }
    }

    fn range_params(src: UnitId, range: HistoryRange, dst: Option<(UnitId, usize)>) -> Params {
        let mut params = Params::new();
        params.insert("source".into(), src.to_string().into());
        params.insert("start".into(), range.start.into());
        params.insert("end".into(), range.end.into());
        if let Some((dst, at)) = dst {
            params.insert("destination".into(), dst.to_string().into());
            params.insert("index".into(), at.into());
        }
        params
    }

    /// Duplicates a range of `src` into `dst` at local position `at` as
    /// fresh active records.
    pub fn copy_range(
        &mut self,
        src: UnitId,
        range: HistoryRange,
        dst: UnitId,
        at: usize,
        ts: Millis,
        author: &str,
    ) -> Result<EditOutcome> {
        self.unit(src)?;
        self.ensure_unit_mutable(dst)?;
        let ids = self.range_records(src, range)?;
        self.check_insert_position(dst, at)?;
        self.check_overlap(src, range, dst, at)?;
        let entries: Vec<ClipEntry> = ids
            .iter()
            .map(|id| ClipEntry {
                status: ActionStatus::Active,
                timestamp: ts,
                author: author.to_string(),
                ..self.clip_entry(*id)
            })
            .collect();
        let created = self.materialize(dst, at, &entries, ProvenanceKind::Copied);
        let trace = EditTrace {
            inserted: created.clone(),
            ..EditTrace::default()
        };
        let h = self.log_edit(dst, builtin::COPY_RANGE, Self::range_params(src, range, Some((dst, at))), trace, ts, author);
        let reports = self.refresh_units(&[dst], Some(h), true);
        Ok(EditOutcome {
            record: h,
            affected: created,
            reports,
        })
    }

    /// Moves a range of `src` to `dst` at local position `at`, keeping
    /// statuses and timestamps.
    #[allow(clippy::too_many_arguments)]
    pub fn move_range(
        &mut self,
        src: UnitId,
        range: HistoryRange,
        dst: UnitId,
        at: usize,
        confirmed: bool,
        ts: Millis,
        author: &str,
    ) -> Result<EditOutcome> {
        self.ensure_unit_mutable(src)?;
        self.ensure_unit_mutable(dst)?;
        let ids = self.range_records(src, range)?;
        self.check_insert_position(dst, at)?;
        self.check_overlap(src, range, dst, at)?;
        if !confirmed {
            let mut trial = self.clone();
            let outcome = trial.move_range(src, range, dst, at, true, ts, author)?;
            if let Some(report) = outcome.reports.into_iter().find(|r| r.status == ValidationStatus::Broken) {
                return Err(EngineError::UnconfirmedDestructive(Box::new(report)));
            }
        }
        let entries: Vec<ClipEntry> = ids.iter().map(|id| self.clip_entry(*id)).collect();
        let before = (src == dst).then_some(at);
        let (flips, removed, shift) = self.extract(src, &ids, before);
        let created = self.materialize(dst, at - shift, &entries, ProvenanceKind::Moved);
        let touched: Vec<ActionId> = flips.iter().map(|f| f.record).collect();
        let trace = EditTrace {
            flips,
            inserted: created.clone(),
            removed: removed.clone(),
        };
        let h = self.log_edit(dst, builtin::MOVE_RANGE, Self::range_params(src, range, Some((dst, at))), trace, ts, author);
        self.tombstone(&removed, h, ts);
        let mut units = vec![src, dst];
        for id in &touched {
            units.extend(self.units_containing(*id));
        }
        let reports = self.refresh_units(&units, Some(h), true);
        let mut affected = ids;
        affected.extend(created);
        Ok(EditOutcome {
            record: h,
            affected,
            reports,
        })
    }

    /// Takes a range out of `src` into the workspace clipboard.
    pub fn cut_range(
        &mut self,
        src: UnitId,
        range: HistoryRange,
        confirmed: bool,
        ts: Millis,
        author: &str,
    ) -> Result<EditOutcome> {
        self.ensure_unit_mutable(src)?;
        let ids = self.range_records(src, range)?;
        if !confirmed {
            let mut trial = self.clone();
            let outcome = trial.cut_range(src, range, true, ts, author)?;
            if let Some(report) = outcome.reports.into_iter().find(|r| r.status == ValidationStatus::Broken) {
                return Err(EngineError::UnconfirmedDestructive(Box::new(report)));
            }
        }
        let entries: Vec<ClipEntry> = ids.iter().map(|id| self.clip_entry(*id)).collect();
        let (flips, removed, _) = self.extract(src, &ids, None);
        let touched: Vec<ActionId> = flips.iter().map(|f| f.record).collect();
        let trace = EditTrace {
            flips,
            removed: removed.clone(),
            ..EditTrace::default()
        };
        let h = self.log_edit(src, builtin::CUT_RANGE, Self::range_params(src, range, None), trace, ts, author);
        self.tombstone(&removed, h, ts);
        self.clipboard = Some(Clipboard { source: src, entries });
        let mut units = vec![src];
        for id in &touched {
            units.extend(self.units_containing(*id));
        }
        let reports = self.refresh_units(&units, Some(h), true);
        Ok(EditOutcome {
            record: h,
            affected: ids,
            reports,
        })
    }

    /// Inserts the clipboard contents into `dst` at local position `at`.
    /// The clipboard is kept, so it can be pasted again.
    pub fn paste(&mut self, dst: UnitId, at: usize, ts: Millis, author: &str) -> Result<EditOutcome> {
        self.ensure_unit_mutable(dst)?;
        let clipboard = self.clipboard.clone().ok_or(EngineError::EmptyClipboard)?;
        if clipboard.entries.is_empty() {
            return Err(EngineError::EmptyClipboard);
        }
        self.check_insert_position(dst, at)?;
        let created = self.materialize(dst, at, &clipboard.entries, ProvenanceKind::Pasted);
        let trace = EditTrace {
            inserted: created.clone(),
            ..EditTrace::default()
        };
        let mut params = Params::new();
        params.insert("index".into(), at.into());
        let h = self.log_edit(dst, builtin::PASTE, params, trace, ts, author);
        let reports = self.refresh_units(&[dst], Some(h), true);
        Ok(EditOutcome {
            record: h,
            affected: created,
            reports,
        })
    }

    /// Reverts an earlier edit by status flips: an appended record is
    /// deactivated; a history record has its flips inverted and its
    /// inserted records deactivated.
    pub fn revert_edit(&mut self, unit: UnitId, edit: ActionId, ts: Millis, author: &str) -> Result<EditOutcome> {
        self.ensure_unit_mutable(unit)?;
        self.record(edit)?;
        let overrides = self.reversal_of(edit).ok_or(EngineError::NotEditable(edit))?;
        let mut flips = Vec::new();
        let mut units = vec![unit];
        for (&record, &to) in &overrides {
            if self.records[&record].status != to {
                flips.push(self.set_status(record, to));
                units.extend(self.units_containing(record));
            }
        }
        let affected: Vec<ActionId> = flips.iter().map(|f| f.record).collect();
        let trace = EditTrace {
            flips,
            ..EditTrace::default()
        };
        let h = self.log_edit(unit, builtin::REVERT_EDIT, id_params("target", &[edit]), trace, ts, author);
        let reports = self.refresh_units(&units, Some(h), true);
        Ok(EditOutcome {
            record: h,
            affected,
            reports,
        })
    }

    pub fn apply_fix(&mut self, unit: UnitId, fix: SuggestedFix, ts: Millis, author: &str) -> Result<EditOutcome> {
        match fix.kind {
            FixKind::RedoRecord => self.redo(unit, Some(fix.target), ts, author),
            FixKind::UnskipRecord => self.unskip(unit, fix.target, ts, author),
            FixKind::UndoLastEdit => self.revert_edit(unit, fix.target, ts, author),
        }
    }

    /// Number of history-category records in the workspace.
    pub fn history_record_count(&self) -> usize {
        self.records.values().filter(|r| r.category == ActionCategory::History).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::SessionId;
    use serde_json::json;

    fn p(v: serde_json::Value) -> Params {
        serde_json::from_value(v).unwrap()
    }

    fn setup() -> (Workspace, SessionId, UnitId) {
        let mut ws = Workspace::new("t");
        let s = ws.new_session("s", 0).unwrap();
        let u = ws.create_unit(s, "u1", 0, "t").unwrap();
        (ws, s, u)
    }

    fn add(ws: &mut Workspace, u: UnitId, ty: &str, v: serde_json::Value) -> ActionId {
        ws.append_action(u, ty, p(v), 1, "t").unwrap().0
    }

    fn pipeline(ws: &mut Workspace, u: UnitId) -> [ActionId; 3] {
        [
            add(ws, u, "load-data", json!({"dataset": "cars"})),
            add(ws, u, "select-algorithm", json!({"name": "kmeans"})),
            add(ws, u, "set-parameter", json!({"name": "k", "value": 3})),
        ]
    }

    #[test]
    fn undo_tail_then_redo() {
        let (mut ws, _, u) = setup();
        let load = add(&mut ws, u, "load-data", json!({"dataset": "cars"}));
        let algo = add(&mut ws, u, "select-algorithm", json!({"name": "kmeans"}));
        let before = ws.state_hash(u).unwrap();
        let out = ws.undo(u, 2, "t").unwrap();
        assert_eq!(out.affected, vec![algo]);
        assert_eq!(ws.record(algo).unwrap().status, ActionStatus::Undone);
        let state = ws.replay(u, None).unwrap();
        assert!(state.dataset.is_some() && state.algorithm.is_none());
        ws.redo(u, None, 3, "t").unwrap();
        assert_eq!(ws.state_hash(u).unwrap(), before);
        assert!(ws.record(load).unwrap().is_active());
    }

    #[test]
    fn undo_on_empty_unit() {
        let (mut ws, _, u) = setup();
        assert_eq!(ws.undo(u, 1, "t").unwrap_err(), EngineError::EmptyUndoStack(u));
        assert_eq!(ws.redo(u, None, 1, "t").unwrap_err(), EngineError::NothingToRedo(u));
    }

    #[test]
    fn selective_undo_of_algorithm_breaks_parameter() {
        let (mut ws, _, u) = setup();
        let [_, algo, param] = pipeline(&mut ws, u);
        let out = ws.selective_undo(u, algo, 2, "t").unwrap();
        let report = &out.reports[0];
        assert_ne!(report.status, ValidationStatus::Ok);
        assert_eq!(report.failures[0].record, param);
        assert_eq!(report.failures[0].missing.as_str(), "algorithm-selected");
        // the undone algorithm was touched by this very edit
        assert_eq!(report.status, ValidationStatus::Broken);
        assert_eq!(report.undo_last_edit.unwrap().target, out.record);
    }

    #[test]
    fn selective_undo_falls_back_to_earlier_parameter() {
        let (mut ws, _, u) = setup();
        add(&mut ws, u, "load-data", json!({"dataset": "cars"}));
        add(&mut ws, u, "select-algorithm", json!({"name": "kmeans"}));
        add(&mut ws, u, "set-parameter", json!({"name": "k", "value": 3}));
        let k5 = add(&mut ws, u, "set-parameter", json!({"name": "k", "value": 5}));
        ws.selective_undo(u, k5, 2, "t").unwrap();
        assert_eq!(ws.replay(u, None).unwrap().parameters["k"], json!(3));
    }

    #[test]
    fn annotation_undo_is_harmless() {
        let (mut ws, _, u) = setup();
        pipeline(&mut ws, u);
        let n = ws.annotate(NodeRef::Unit(u), "note", 2, "t").unwrap();
        let record = ws.annotation(n).unwrap().record;
        let out = ws.selective_undo(u, record, 3, "t").unwrap();
        assert!(out.reports.iter().all(|r| r.status == ValidationStatus::Ok && !r.walked));
        assert!(!ws.is_starred(NodeRef::Unit(u)));
    }

    #[test]
    fn redo_errors() {
        let (mut ws, _, u) = setup();
        let [load, ..] = pipeline(&mut ws, u);
        assert!(matches!(
            ws.redo(u, Some(load), 1, "t"),
            Err(EngineError::WrongStatus { expected: ActionStatus::Undone, .. })
        ));
        ws.skip(u, load, 2, "t").unwrap();
        assert_eq!(ws.redo(u, None, 3, "t").unwrap_err(), EngineError::NothingToRedo(u));
        assert!(matches!(ws.skip(u, load, 4, "t"), Err(EngineError::WrongStatus { .. })));
    }

    #[test]
    fn redo_mid_history() {
        let (mut ws, _, u) = setup();
        let [load, algo, _] = pipeline(&mut ws, u);
        let full = ws.state_hash(u).unwrap();
        ws.selective_undo(u, algo, 2, "t").unwrap();
        ws.selective_undo(u, load, 3, "t").unwrap();
        ws.redo(u, Some(algo), 4, "t").unwrap();
        ws.redo(u, None, 5, "t").unwrap();
        assert_eq!(ws.state_hash(u).unwrap(), full);
    }

    #[test]
    fn skip_matches_selective_undo() {
        let (mut ws, s, u) = setup();
        let [_, _, param] = pipeline(&mut ws, u);
        let v = ws.create_unit(s, "v", 1, "t").unwrap();
        let [_, _, param_v] = pipeline(&mut ws, v);
        let before = ws.state_hash(u).unwrap();
        ws.skip(u, param, 2, "t").unwrap();
        ws.selective_undo(v, param_v, 2, "t").unwrap();
        assert_eq!(ws.state_hash(u).unwrap(), ws.state_hash(v).unwrap());
        ws.unskip(u, param, 3, "t").unwrap();
        assert_eq!(ws.state_hash(u).unwrap(), before);
    }

    #[test]
    fn delete_load_needs_confirmation() {
        let (mut ws, _, u) = setup();
        let [load, ..] = pipeline(&mut ws, u);
        let err = ws.delete_action(u, load, false, 2, "t").unwrap_err();
        assert_eq!(err.kind(), "UnconfirmedDestructive");
        assert!(ws.record(load).unwrap().removed.is_none());
        let out = ws.delete_action(u, load, true, 2, "t").unwrap();
        assert_eq!(out.reports[0].status, ValidationStatus::Broken);
        assert!(ws.unit(u).unwrap().broken);
        assert!(!ws.effective_history(u).unwrap().contains(&load));
        assert!(ws.record(load).unwrap().removed.is_some());
    }

    #[test]
    fn delete_annotation_record_and_inherited() {
        let (mut ws, _, u) = setup();
        pipeline(&mut ws, u);
        let n = ws.annotate(NodeRef::Unit(u), "x", 2, "t").unwrap();
        let record = ws.annotation(n).unwrap().record;
        let b = ws.branch_unit(u, "b", 3, "t").unwrap();
        assert!(matches!(
            ws.delete_action(b, record, true, 4, "t"),
            Err(EngineError::SharedPrefixDelete { .. })
        ));
        assert!(matches!(
            ws.delete_action(u, record, true, 4, "t"),
            Err(EngineError::SharedPrefixDelete { .. })
        ));
        let local = add(&mut ws, b, "set-color-scheme", json!({"scheme": "red"}));
        let out = ws.delete_action(b, local, false, 5, "t").unwrap();
        assert_eq!(out.reports[0].status, ValidationStatus::Ok);
    }

    #[test]
    fn copy_full_pipeline_replays_identically() {
        let (mut ws, s, u) = setup();
        pipeline(&mut ws, u);
        add(&mut ws, u, "run-clustering", json!({}));
        let v = ws.create_unit(s, "v", 1, "t").unwrap();
        let src_before = ws.effective_history(u).unwrap();
        let out = ws.copy_range(u, HistoryRange::new(0, 4), v, 0, 2, "t").unwrap();
        assert_eq!(out.affected.len(), 4);
        assert_eq!(ws.state_hash(u).unwrap(), ws.state_hash(v).unwrap());
        assert_eq!(ws.effective_history(u).unwrap(), src_before);
    }

    #[test]
    fn copy_without_load_is_not_ok() {
        let (mut ws, s, u) = setup();
        pipeline(&mut ws, u);
        let v = ws.create_unit(s, "v", 1, "t").unwrap();
        let out = ws.copy_range(u, HistoryRange::new(1, 3), v, 0, 2, "t").unwrap();
        let report = out.reports.iter().find(|r| r.unit == v).unwrap();
        assert_ne!(report.status, ValidationStatus::Ok);
        assert_eq!(report.failures[0].missing.as_str(), "data-loaded");
    }

    #[test]
    fn cut_then_paste_back() {
        let (mut ws, _, u) = setup();
        pipeline(&mut ws, u);
        add(&mut ws, u, "set-color-scheme", json!({"scheme": "red"}));
        let before = ws.state_hash(u).unwrap();
        ws.cut_range(u, HistoryRange::new(3, 4), false, 2, "t").unwrap();
        assert_ne!(ws.state_hash(u).unwrap(), before);
        ws.paste(u, 3, 3, "t").unwrap();
        assert_eq!(ws.state_hash(u).unwrap(), before);
    }

    #[test]
    fn range_errors() {
        let (mut ws, s, u) = setup();
        pipeline(&mut ws, u);
        let v = ws.create_unit(s, "v", 1, "t").unwrap();
        assert!(matches!(
            ws.copy_range(u, HistoryRange::new(2, 9), v, 0, 2, "t"),
            Err(EngineError::InvalidRange { .. })
        ));
        assert_eq!(ws.copy_range(u, HistoryRange::new(1, 1), v, 0, 2, "t").unwrap_err(), EngineError::EmptyRange);
        assert_eq!(
            ws.copy_range(u, HistoryRange::new(0, 3), u, 1, 2, "t").unwrap_err(),
            EngineError::OverlappingRange
        );
        assert_eq!(ws.paste(v, 0, 2, "t").unwrap_err(), EngineError::EmptyClipboard);
        ws.undo(u, 3, "t").unwrap();
        // only the undo record: nothing to transfer
        assert_eq!(ws.copy_range(u, HistoryRange::new(3, 4), v, 0, 4, "t").unwrap_err(), EngineError::EmptyRange);
    }

    #[test]
    fn move_from_shared_prefix_flips() {
        let (mut ws, s, u) = setup();
        let [load, algo, param] = pipeline(&mut ws, u);
        let b = ws.branch_unit(u, "b", 2, "t").unwrap();
        let v = ws.create_unit(s, "v", 3, "t").unwrap();
        let out = ws.move_range(u, HistoryRange::new(0, 3), v, 0, true, 4, "t").unwrap();
        for id in [load, algo, param] {
            assert_eq!(ws.record(id).unwrap().status, ActionStatus::Undone);
            assert!(ws.record(id).unwrap().removed.is_none());
        }
        assert!(out.reports.iter().any(|r| r.unit == b));
        assert_eq!(ws.effective_records(v).unwrap().iter().filter(|r| !r.is_history()).count(), 3);
        let moved = ws.record(ws.effective_history(v).unwrap()[0]).unwrap();
        assert_eq!(moved.timestamp, 1);
        assert_eq!(moved.provenance.unwrap().kind, ProvenanceKind::Moved);
        assert_eq!(ws.state_hash(v).unwrap(), {
            let w = ws.create_unit(s, "w", 5, "t").unwrap();
            pipeline(&mut ws, w);
            ws.state_hash(w).unwrap()
        });
    }

    #[test]
    fn move_within_unit_reorders_locally() {
        let (mut ws, _, u) = setup();
        pipeline(&mut ws, u);
        let red = add(&mut ws, u, "set-color-scheme", json!({"scheme": "red"}));
        let blue = add(&mut ws, u, "set-color-scheme", json!({"scheme": "blue"}));
        ws.move_range(u, HistoryRange::new(4, 5), u, 3, false, 2, "t").unwrap();
        assert_eq!(ws.replay(u, None).unwrap().color_scheme, "red");
        assert!(ws.record(blue).unwrap().removed.is_some());
        assert!(ws.record(red).unwrap().is_active());
    }

    #[test]
    fn fix_application() {
        let (mut ws, _, u) = setup();
        let load = add(&mut ws, u, "load-data", json!({"dataset": "cars"}));
        ws.selective_undo(u, load, 1, "t").unwrap();
        let (_, report) = ws.append_action(u, "select-algorithm", p(json!({"name": "kmeans"})), 2, "t").unwrap();
        assert_eq!(report.status, ValidationStatus::Warn);
        let fix = report.suggestion.unwrap();
        assert_eq!((fix.kind, fix.target), (FixKind::RedoRecord, load));
        let out = ws.apply_fix(u, fix, 3, "t").unwrap();
        assert_eq!(out.reports[0].status, ValidationStatus::Ok);

        let (algo, report) = ws.append_action(u, "set-parameter", p(json!({"name": "k", "value": 2})), 4, "t").unwrap();
        assert_eq!(report.status, ValidationStatus::Ok);
        let _ = algo;
    }

    #[test]
    fn undo_last_edit_reverts_a_history_record() {
        let (mut ws, _, u) = setup();
        let [_, algo, _] = pipeline(&mut ws, u);
        let out = ws.selective_undo(u, algo, 2, "t").unwrap();
        let fix = out.reports[0].undo_last_edit.unwrap();
        let after = ws.apply_fix(u, fix, 3, "t").unwrap();
        assert_eq!(after.reports[0].status, ValidationStatus::Ok);
        assert!(ws.record(algo).unwrap().is_active());
    }

    #[test]
    fn every_edit_logs_one_history_record() {
        let (mut ws, s, u) = setup();
        let [load, algo, _] = pipeline(&mut ws, u);
        let v = ws.create_unit(s, "v", 1, "t").unwrap();
        let mut expected = ws.history_record_count();
        let mut check = |ws: &Workspace| {
            expected += 1;
            assert_eq!(ws.history_record_count(), expected);
        };
        ws.undo(u, 2, "t").unwrap();
        check(&ws);
        ws.redo(u, None, 2, "t").unwrap();
        check(&ws);
        ws.skip(u, algo, 2, "t").unwrap();
        check(&ws);
        ws.unskip(u, algo, 2, "t").unwrap();
        check(&ws);
        ws.copy_range(u, HistoryRange::new(0, 3), v, 0, 2, "t").unwrap();
        check(&ws);
        ws.insert_action(v, 1, "set-color-scheme", p(json!({"scheme": "red"})), 2, "t").unwrap();
        check(&ws);
        ws.cut_range(v, HistoryRange::new(1, 2), true, 2, "t").unwrap();
        check(&ws);
        ws.paste(v, 0, 2, "t").unwrap();
        check(&ws);
        ws.selective_undo(u, load, 2, "t").unwrap();
        check(&ws);
        assert!(ws.flags_coherent());
    }
}
