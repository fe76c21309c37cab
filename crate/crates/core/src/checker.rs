//! Pipeline dependency checking.
//!
//! The checker walks a unit's active effective-history records in order,
//! keeping the set of capabilities provided so far. A record whose
//! `requires` are not all present is a failure and provides nothing. When a
//! unit fails, the checker looks for an undone or skipped record whose
//! reactivation repairs the whole walk, and separately for whether
//! reverting the unit's most recent edit would.
//!
//! Only declared requires/provides rules are consulted here; the domain
//! interpreter is never called.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ids::{ActionId, UnitId};
use crate::model::{ActionRecord, ActionStatus, Workspace};
use crate::registry::{Capability, Registry};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationStatus {
    #[default]
    Ok,
    Warn,
    Broken,
}

/// An active record whose requirement is unmet at its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    /// Position in the unit's effective history.
    pub index: usize,
    pub record: ActionId,
    pub missing: Capability,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixKind {
    RedoRecord,
    UnskipRecord,
    UndoLastEdit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuggestedFix {
    pub kind: FixKind,
    pub target: ActionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub unit: UnitId,
    pub status: ValidationStatus,
    pub failures: Vec<Failure>,
    /// Reactivating an earlier record; present exactly when status is Warn.
    pub suggestion: Option<SuggestedFix>,
    /// Reverting the unit's most recent edit, when that alone repairs it.
    pub undo_last_edit: Option<SuggestedFix>,
    /// The appended record or history record that caused this check.
    pub trigger: Option<ActionId>,
    /// False when the check was skipped because the change could not break
    /// the pipeline.
    pub walked: bool,
}

impl ValidationReport {
    fn skipped(unit: UnitId, trigger: Option<ActionId>) -> Self {
        ValidationReport {
            unit,
            status: ValidationStatus::Ok,
            failures: Vec::new(),
            suggestion: None,
            undo_last_edit: None,
            trigger,
            walked: false,
        }
    }
}

/// Capability walk over `records` with optional status overrides, used to
/// simulate fixes without touching the workspace.
pub fn capability_walk(
    registry: &Registry,
    records: &[&ActionRecord],
    overrides: &BTreeMap<ActionId, ActionStatus>,
) -> Vec<Failure> {
    let mut have: BTreeSet<&Capability> = BTreeSet::new();
    let mut failures = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let status = overrides.get(&record.id).copied().unwrap_or(record.status);
        if status != ActionStatus::Active {
            continue;
        }
        let Some(ty) = registry.get(&record.action_type) else {
            continue;
        };
        if let Some(missing) = ty.requires.iter().find(|c| !have.contains(c)) {
            failures.push(Failure {
                index,
                record: record.id,
                missing: missing.clone(),
            });
            continue;
        }
        have.extend(ty.provides.iter());
    }
    failures
}

impl Workspace {
    /// Whether appending or editing a record of this type can break a
    /// pipeline. `None` for unregistered types.
    pub fn classify(&self, action_type: &str) -> Option<bool> {
        self.registry.get(action_type).map(|t| t.needs_dependency_check)
    }

    fn is_checked_domain_record(&self, record: &ActionRecord) -> bool {
        self.registry.plugin_for(&record.action_type).is_some()
            && self.classify(&record.action_type).unwrap_or(false)
    }

    /// The most recent change that affected the unit's checked records:
    /// either a checked domain record in its history or a history record
    /// (possibly logged by another unit of the session) touching one.
    pub fn last_edit(&self, unit: UnitId) -> Result<Option<ActionId>> {
        let records = self.effective_records(unit)?;
        let checked: BTreeSet<ActionId> = records
            .iter()
            .filter(|r| self.is_checked_domain_record(r))
            .map(|r| r.id)
            .collect();
        let mut last = checked.iter().next_back().copied();
        let session = self.unit(unit)?.session;
        for u in self.units.values().filter(|u| u.session == session) {
            for id in &u.local_actions {
                let r = &self.records[id];
                let touches = r
                    .edit
                    .as_ref()
                    .is_some_and(|e| e.touched().any(|t| checked.contains(&t)));
                if touches && last.is_none_or(|l| *id > l) {
                    last = Some(*id);
                }
            }
        }
        Ok(last)
    }

    /// Status changes that would undo `edit`, or `None` when it cannot be
    /// reverted by status flips alone.
    pub(crate) fn reversal_of(&self, edit: ActionId) -> Option<BTreeMap<ActionId, ActionStatus>> {
        let record = self.records.get(&edit)?;
        let mut out = BTreeMap::new();
        match &record.edit {
            None => {
                if !record.is_active() || record.removed.is_some() {
                    return None;
                }
                out.insert(edit, ActionStatus::Undone);
            }
            Some(trace) => {
                if !trace.removed.is_empty() {
                    return None;
                }
                for flip in &trace.flips {
                    let current = self.records.get(&flip.record)?;
                    if current.status != flip.to || current.removed.is_some() {
                        return None;
                    }
                    out.insert(flip.record, flip.from);
                }
                for id in &trace.inserted {
                    let current = self.records.get(id)?;
                    if current.removed.is_some() {
                        return None;
                    }
                    if current.is_active() {
                        out.insert(*id, ActionStatus::Undone);
                    }
                }
            }
        }
        Some(out)
    }

    /// Most recent undone or skipped record before the first failure that
    /// provides the missing capability and whose reactivation leaves no
    /// failure at all. Records changed by `exclude` are not considered.
    fn search_alternative(
        &self,
        records: &[&ActionRecord],
        first: &Failure,
        exclude: &BTreeSet<ActionId>,
    ) -> Option<SuggestedFix> {
        for record in records[..first.index].iter().rev() {
            let kind = match record.status {
                ActionStatus::Undone => crate::checker::FixKind::RedoRecord,
                ActionStatus::Skipped => crate::checker::FixKind::UnskipRecord,
                ActionStatus::Active => continue,
            };
            if exclude.contains(&record.id) {
                continue;
            }
            let provides = self
                .registry
                .get(&record.action_type)
                .is_some_and(|t| t.provides.contains(&first.missing));
            if !provides {
                continue;
            }
            let overrides = BTreeMap::from([(record.id, ActionStatus::Active)]);
            if capability_walk(&self.registry, records, &overrides).is_empty() {
                return Some(SuggestedFix {
                    kind,
                    target: record.id,
                });
            }
        }
        None
    }

    /// Public form of the alternative search for one unmet requirement.
    pub fn suggest_alternative(&self, unit: UnitId, missing: &Capability, at_index: usize) -> Result<Option<SuggestedFix>> {
        let records = self.effective_records(unit)?;
        let at_index = at_index.min(records.len());
        let record = records.get(at_index).map_or(ActionId(0), |r| r.id);
        let failure = Failure {
            index: at_index,
            record,
            missing: missing.clone(),
        };
        let exclude = self.last_edit_touched(unit)?;
        Ok(self.search_alternative(&records, &failure, &exclude))
    }

    fn last_edit_touched(&self, unit: UnitId) -> Result<BTreeSet<ActionId>> {
        Ok(self
            .last_edit(unit)?
            .and_then(|e| self.records[&e].edit.as_ref())
            .map(|t| t.touched().collect())
            .unwrap_or_default())
    }

    /// Full check of one unit; does not write any flag.
    pub fn validate(&self, unit: UnitId) -> Result<ValidationReport> {
        self.validate_with(unit, None)
    }

    pub(crate) fn validate_with(&self, unit: UnitId, trigger: Option<ActionId>) -> Result<ValidationReport> {
        let records = self.effective_records(unit)?;
        let failures = capability_walk(&self.registry, &records, &BTreeMap::new());
        let mut report = ValidationReport {
            unit,
            status: ValidationStatus::Ok,
            failures,
            suggestion: None,
            undo_last_edit: None,
            trigger,
            walked: true,
        };
        let Some(first) = report.failures.first().cloned() else {
            return Ok(report);
        };
        let last = self.last_edit(unit)?;
        let exclude = self.last_edit_touched(unit)?;
        report.suggestion = self.search_alternative(&records, &first, &exclude);
        report.status = if report.suggestion.is_some() {
            ValidationStatus::Warn
        } else {
            ValidationStatus::Broken
        };
        if let Some(last) = last {
            if let Some(overrides) = self.reversal_of(last) {
                if capability_walk(&self.registry, &records, &overrides).is_empty() {
                    report.undo_last_edit = Some(SuggestedFix {
                        kind: FixKind::UndoLastEdit,
                        target: last,
                    });
                }
            }
        }
        Ok(report)
    }

    /// Re-checks `units` and stores their flags. With `needs_check` false a
    /// unit that was Ok keeps its status without a walk.
    pub(crate) fn refresh_units(&mut self, units: &[UnitId], trigger: Option<ActionId>, needs_check: bool) -> Vec<ValidationReport> {
        let mut ids: Vec<UnitId> = units.to_vec();
        ids.sort();
        ids.dedup();
        let mut reports = Vec::with_capacity(ids.len());
        for u in ids {
            let Some(current) = self.units.get(&u).map(|x| x.status) else {
                continue;
            };
            let report = if !needs_check && current == ValidationStatus::Ok {
                ValidationReport::skipped(u, trigger)
            } else {
                self.validate_with(u, trigger).expect("unit exists")
            };
            let unit = self.units.get_mut(&u).expect("unit exists");
            unit.status = report.status;
            unit.broken = report.status == ValidationStatus::Broken;
            reports.push(report);
        }
        reports
    }

    /// Validates every unit whose effective history contains `record`, plus
    /// `acting` when given, and stores their flags.
    pub fn cascade_validate(
        &mut self,
        record: ActionId,
        acting: Option<UnitId>,
        trigger: Option<ActionId>,
        needs_check: bool,
    ) -> Vec<ValidationReport> {
        let mut units = self.units_containing(record);
        units.extend(acting);
        self.refresh_units(&units, trigger, needs_check)
    }

    /// Every unit's stored flags agree with a fresh check.
    pub fn flags_coherent(&self) -> bool {
        self.units.keys().all(|&u| {
            let report = self.validate(u).expect("unit exists");
            let unit = &self.units[&u];
            unit.status == report.status && unit.broken == (report.status == ValidationStatus::Broken)
        })
    }
}
