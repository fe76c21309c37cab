//! Hierarchical provenance model: projects own a tree of version-controlled
//! sessions, sessions own units, and units own linear local action
//! histories.
//!
//! A branched unit stores only a reference to its origin plus the number of
//! origin records it inherits (`prefix_length`). Its effective history is
//! the origin's effective history cut at that length followed by its own
//! local records, so status changes on shared records are seen by every
//! unit that inherits them. Records are never dropped from the arena: a
//! physically deleted record keeps a tombstone and stays resolvable.
//!
//! Saving or branching a session deep-copies its unit graph (fresh ids,
//! [`ProvenanceKind::Inherited`] links) and freezes the parent version.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::checker::ValidationStatus;
use crate::clock::Millis;
use crate::domain::{DatasetError, DomainContext, TabularDataset, BUNDLED_CARS};
use crate::error::{EngineError, Result};
use crate::ids::{ActionId, AnnotationId, IdCounters, NodeRef, SessionId, UnitId};
use crate::registry::{builtin, ActionCategory, Registry};
use crate::state::Snapshot;

/// Action parameters, interpreted by the owning domain.
pub type Params = BTreeMap<String, serde_json::Value>;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionStatus {
    Active,
    Undone,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProvenanceKind {
    /// Carried over when a session version was saved or branched.
    Inherited,
    Copied,
    Moved,
    Pasted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: ProvenanceKind,
    pub source: ActionId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusFlip {
    pub record: ActionId,
    pub from: ActionStatus,
    pub to: ActionStatus,
}

/// What a history record did. Only history-category records carry one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditTrace {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flips: Vec<StatusFlip>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inserted: Vec<ActionId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed: Vec<ActionId>,
}

impl EditTrace {
    pub fn touched(&self) -> impl Iterator<Item = ActionId> + '_ {
        self.flips
            .iter()
            .map(|f| f.record)
            .chain(self.inserted.iter().copied())
            .chain(self.removed.iter().copied())
    }

    fn remap(&mut self, map: &BTreeMap<ActionId, ActionId>) {
        let m = |id: &mut ActionId| {
            if let Some(new) = map.get(id) {
                *id = *new;
            }
        };
        self.flips.iter_mut().for_each(|f| m(&mut f.record));
        self.inserted.iter_mut().for_each(m);
        self.removed.iter_mut().for_each(m);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tombstone {
    pub at: Millis,
    /// The history record that removed it.
    pub by: ActionId,
}

/// One captured user action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub id: ActionId,
    #[serde(rename = "type")]
    pub action_type: String,
    pub category: ActionCategory,
    #[serde(default)]
    pub params: Params,
    pub timestamp: Millis,
    pub author: String,
    pub status: ActionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub removed: Option<Tombstone>,
}

impl ActionRecord {
    pub fn new(
        id: ActionId,
        action_type: &str,
        category: ActionCategory,
        params: Params,
        timestamp: Millis,
        author: &str,
    ) -> Self {
        ActionRecord {
            id,
            action_type: action_type.to_string(),
            category,
            params,
            timestamp,
            author: author.to_string(),
            status: ActionStatus::Active,
            provenance: None,
            edit: None,
            removed: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == ActionStatus::Active
    }

    pub fn is_history(&self) -> bool {
        self.category == ActionCategory::History
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchParent {
    pub unit: UnitId,
    /// Effective-history length of the origin when the branch was made.
    pub prefix_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: UnitId,
    pub name: String,
    pub session: SessionId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_parent: Option<BranchParent>,
    pub local_actions: Vec<ActionId>,
    #[serde(default)]
    pub annotations: Vec<AnnotationId>,
    #[serde(default)]
    pub bookmarked: bool,
    /// Owned by the dependency checker.
    #[serde(default)]
    pub broken: bool,
    #[serde(default)]
    pub status: ValidationStatus,
    #[serde(default)]
    pub deleted: bool,
    pub created_at: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: AnnotationId,
    pub text: String,
    pub author: String,
    pub timestamp: Millis,
    pub attached_to: NodeRef,
    /// The annotation-category record that created it.
    pub record: ActionId,
    #[serde(default)]
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub base_name: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<SessionId>,
    pub units: Vec<UnitId>,
    /// Session-scope records (unit management, saves, session annotations).
    #[serde(default)]
    pub actions: Vec<ActionId>,
    #[serde(default)]
    pub annotations: Vec<AnnotationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub saved_snapshot: Option<Snapshot>,
    pub created_at: Millis,
}

impl Session {
    pub fn display_name(&self) -> String {
        format!("{}_v{}", self.base_name, self.version)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProjectMetadata {
    #[serde(default)]
    pub analyst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<Millis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modified_at: Option<Millis>,
    #[serde(default)]
    pub notes: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub name: String,
    #[serde(default)]
    pub metadata: ProjectMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    #[serde(rename = "type")]
    pub action_type: String,
    pub category: ActionCategory,
    pub params: Params,
    pub status: ActionStatus,
    pub timestamp: Millis,
    pub author: String,
    pub source: ActionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clipboard {
    pub source: UnitId,
    pub entries: Vec<ClipEntry>,
}

/// A project plus everything recorded in it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub project: Project,
    pub sessions: BTreeMap<SessionId, Session>,
    pub units: BTreeMap<UnitId, Unit>,
    pub records: BTreeMap<ActionId, ActionRecord>,
    pub annotations: BTreeMap<AnnotationId, Annotation>,
    #[serde(default)]
    pub datasets: BTreeMap<String, TabularDataset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clipboard: Option<Clipboard>,
    pub revision: u64,
    pub ids: IdCounters,
    #[serde(skip)]
    pub registry: Registry,
}

impl Default for Workspace {
    fn default() -> Self {
        Workspace::new("untitled")
    }
}

impl Workspace {
    pub fn new(name: &str) -> Self {
        Self::with_registry(name, Registry::default())
    }

    pub fn with_registry(name: &str, registry: Registry) -> Self {
        Workspace {
            project: Project {
                name: name.to_string(),
                metadata: ProjectMetadata::default(),
            },
            sessions: BTreeMap::new(),
            units: BTreeMap::new(),
            records: BTreeMap::new(),
            annotations: BTreeMap::new(),
            datasets: BTreeMap::new(),
            clipboard: None,
            revision: 0,
            ids: IdCounters::default(),
            registry,
        }
    }

    pub fn domain_context(&self) -> DomainContext<'_> {
        DomainContext {
            datasets: &self.datasets,
        }
    }

    // ---- lookups -------------------------------------------------------

    pub fn session(&self, id: SessionId) -> Result<&Session> {
        self.sessions.get(&id).ok_or(EngineError::UnknownSession(id))
    }

    pub fn unit(&self, id: UnitId) -> Result<&Unit> {
        self.units.get(&id).ok_or(EngineError::UnknownUnit(id))
    }

    pub fn record(&self, id: ActionId) -> Result<&ActionRecord> {
        self.records.get(&id).ok_or(EngineError::UnknownRecord(id))
    }

    pub fn annotation(&self, id: AnnotationId) -> Result<&Annotation> {
        self.annotations.get(&id).ok_or(EngineError::UnknownAnnotation(id))
    }

    pub fn session_by_name(&self, display_name: &str) -> Option<&Session> {
        self.sessions.values().find(|s| s.display_name() == display_name)
    }

    pub fn child_sessions(&self, id: SessionId) -> Vec<SessionId> {
        self.sessions
            .values()
            .filter(|s| s.parent == Some(id))
            .map(|s| s.id)
            .collect()
    }

    pub fn root_sessions(&self) -> Vec<SessionId> {
        self.sessions
            .values()
            .filter(|s| s.parent.is_none())
            .map(|s| s.id)
            .collect()
    }

    /// A session with any child version is frozen.
    pub fn is_frozen(&self, id: SessionId) -> bool {
        self.sessions.values().any(|s| s.parent == Some(id))
    }

    /// Live (non-deleted) units of a session, in creation order.
    pub fn session_units(&self, id: SessionId) -> Result<Vec<UnitId>> {
        Ok(self.session(id)?.units.clone())
    }

    pub fn unit_children(&self, id: UnitId) -> Vec<UnitId> {
        self.units
            .values()
            .filter(|u| !u.deleted && u.branch_parent.map(|b| b.unit) == Some(id))
            .map(|u| u.id)
            .collect()
    }

    /// Number of effective-history records inherited from the origin.
    pub fn inherited_len(&self, id: UnitId) -> usize {
        self.units
            .get(&id)
            .and_then(|u| u.branch_parent)
            .map_or(0, |b| b.prefix_length)
    }

    /// Number of leading local records that some branch inherits.
    pub fn shared_local_len(&self, id: UnitId) -> usize {
        let inherited = self.inherited_len(id);
        self.unit_children(id)
            .into_iter()
            .filter_map(|c| self.units[&c].branch_parent)
            .map(|b| b.prefix_length.saturating_sub(inherited))
            .max()
            .unwrap_or(0)
    }

    pub(crate) fn ensure_session_mutable(&self, id: SessionId) -> Result<()> {
        self.session(id)?;
        if self.is_frozen(id) {
            return Err(EngineError::FrozenVersion(id));
        }
        Ok(())
    }

    /// The unit exists, is not deleted and its session is not frozen.
    pub(crate) fn ensure_unit_mutable(&self, id: UnitId) -> Result<()> {
        let unit = self.unit(id)?;
        if unit.deleted {
            return Err(EngineError::DeletedUnit(id));
        }
        self.ensure_session_mutable(unit.session)
    }

    fn collect_history(&self, id: UnitId, limit: Option<usize>, out: &mut Vec<ActionId>) {
        let unit = &self.units[&id];
        if let Some(parent) = unit.branch_parent {
            self.collect_history(parent.unit, Some(parent.prefix_length), out);
        }
        out.extend_from_slice(&unit.local_actions);
        if let Some(limit) = limit {
            assert!(
                out.len() >= limit,
                "integrity: unit {id} is shorter than a branch prefix"
            );
            out.truncate(limit);
        }
    }

    /// Inherited prefixes followed by local records, including undone and
    /// skipped ones.
    pub fn effective_history(&self, id: UnitId) -> Result<Vec<ActionId>> {
        self.unit(id)?;
        let mut out = Vec::new();
        self.collect_history(id, None, &mut out);
        Ok(out)
    }

    pub fn effective_records(&self, id: UnitId) -> Result<Vec<&ActionRecord>> {
        Ok(self
            .effective_history(id)?
            .into_iter()
            .map(|r| &self.records[&r])
            .collect())
    }

    /// Owning unit of a live record and its position in that unit's
    /// effective history.
    pub fn record_owner(&self, record: ActionId) -> Option<(UnitId, usize)> {
        self.units.values().find_map(|u| {
            u.local_actions
                .iter()
                .position(|&r| r == record)
                .map(|i| (u.id, self.inherited_len(u.id) + i))
        })
    }

    /// Every unit whose effective history contains `record`.
    pub fn units_containing(&self, record: ActionId) -> Vec<UnitId> {
        let Some((owner, position)) = self.record_owner(record) else {
            return Vec::new();
        };
        let mut found = vec![owner];
        let mut frontier = vec![owner];
        while let Some(u) = frontier.pop() {
            for child in self.unit_children(u) {
                if self.units[&child]
                    .branch_parent
                    .is_some_and(|b| b.prefix_length > position)
                {
                    found.push(child);
                    frontier.push(child);
                }
            }
        }
        found.sort();
        found
    }

    /// Whether `ancestor` is `unit` or one of its branch origins.
    pub fn is_unit_ancestor(&self, ancestor: UnitId, unit: UnitId) -> bool {
        let mut cursor = Some(unit);
        while let Some(u) = cursor {
            if u == ancestor {
                return true;
            }
            cursor = self.units.get(&u).and_then(|u| u.branch_parent).map(|b| b.unit);
        }
        false
    }

    pub fn is_session_ancestor(&self, ancestor: SessionId, session: SessionId) -> bool {
        let mut cursor = Some(session);
        while let Some(s) = cursor {
            if s == ancestor {
                return true;
            }
            cursor = self.sessions.get(&s).and_then(|s| s.parent);
        }
        false
    }

    /// Annotations still shown on a node: not deleted and created by an
    /// active record.
    pub fn live_annotations(&self, node: NodeRef) -> Vec<&Annotation> {
        let ids: &[AnnotationId] = match node {
            NodeRef::Unit(u) => self.units.get(&u).map_or(&[], |u| &u.annotations),
            NodeRef::Session(s) => self.sessions.get(&s).map_or(&[], |s| &s.annotations),
        };
        ids.iter()
            .filter_map(|a| self.annotations.get(a))
            .filter(|a| !a.deleted && self.records.get(&a.record).is_some_and(|r| r.is_active()))
            .collect()
    }

    pub fn is_starred(&self, node: NodeRef) -> bool {
        !self.live_annotations(node).is_empty()
    }

    // ---- record allocation ----------------------------------------------

    pub(crate) fn new_record(
        &mut self,
        action_type: &str,
        params: Params,
        ts: Millis,
        author: &str,
    ) -> Result<ActionId> {
        let category = self
            .registry
            .get(action_type)
            .ok_or_else(|| EngineError::UnregisteredType(action_type.to_string()))?
            .category;
        let id = self.ids.next_action();
        self.records.insert(
            id,
            ActionRecord::new(id, action_type, category, params, ts, author),
        );
        Ok(id)
    }

    fn log_session_action(
        &mut self,
        session: SessionId,
        action_type: &str,
        params: Params,
        ts: Millis,
        author: &str,
    ) -> Result<ActionId> {
        let id = self.new_record(action_type, params, ts, author)?;
        self.sessions
            .get_mut(&session)
            .ok_or(EngineError::UnknownSession(session))?
            .actions
            .push(id);
        Ok(id)
    }

    pub(crate) fn check_append_type(&self, action_type: &str, params: &Params) -> Result<()> {
        if self.registry.get(action_type).is_none() {
            return Err(EngineError::UnregisteredType(action_type.to_string()));
        }
        let plugin = self
            .registry
            .plugin_for(action_type)
            .ok_or_else(|| EngineError::ReservedType(action_type.to_string()))?;
        plugin.validate_params(action_type, params, self.domain_context())?;
        Ok(())
    }

    // ---- structural operations -----------------------------------------

    /// Starts a new root session lineage `<base_name>_v0`.
    pub fn new_session(&mut self, base_name: &str, ts: Millis) -> Result<SessionId> {
        let base_name = base_name.trim();
        if base_name.is_empty() {
            return Err(EngineError::EmptyText);
        }
        if self.sessions.values().any(|s| s.base_name == base_name) {
            return Err(EngineError::DuplicateBaseName(base_name.to_string()));
        }
        let id = self.ids.next_session();
        self.sessions.insert(
            id,
            Session {
                id,
                base_name: base_name.to_string(),
                version: 0,
                parent: None,
                units: Vec::new(),
                actions: Vec::new(),
                annotations: Vec::new(),
                saved_snapshot: None,
                created_at: ts,
            },
        );
        self.project.metadata.created_at.get_or_insert(ts);
        Ok(id)
    }

    pub fn create_unit(&mut self, session: SessionId, name: &str, ts: Millis, author: &str) -> Result<UnitId> {
        self.ensure_session_mutable(session)?;
        let id = self.ids.next_unit();
        self.units.insert(
            id,
            Unit {
                id,
                name: name.to_string(),
                session,
                branch_parent: None,
                local_actions: Vec::new(),
                annotations: Vec::new(),
                bookmarked: false,
                broken: false,
                status: ValidationStatus::Ok,
                deleted: false,
                created_at: ts,
            },
        );
        self.sessions.get_mut(&session).expect("checked").units.push(id);
        self.log_session_action(session, builtin::CREATE_UNIT, unit_params(id, name), ts, author)?;
        Ok(id)
    }

    /// New unit whose effective history equals the origin's right now.
    pub fn branch_unit(&mut self, origin: UnitId, name: &str, ts: Millis, author: &str) -> Result<UnitId> {
        self.ensure_unit_mutable(origin)?;
        let origin_unit = self.unit(origin)?;
        let session = origin_unit.session;
        let (broken, status) = (origin_unit.broken, origin_unit.status);
        let prefix_length = self.effective_history(origin)?.len();
        let id = self.ids.next_unit();
        self.units.insert(
            id,
            Unit {
                id,
                name: name.to_string(),
                session,
                branch_parent: Some(BranchParent {
                    unit: origin,
                    prefix_length,
                }),
                local_actions: Vec::new(),
                annotations: Vec::new(),
                bookmarked: false,
                broken,
                status,
                deleted: false,
                created_at: ts,
            },
        );
        self.sessions.get_mut(&session).expect("checked").units.push(id);
        let mut params = unit_params(id, name);
        params.insert("origin".into(), origin.to_string().into());
        self.log_session_action(session, builtin::BRANCH_UNIT, params, ts, author)?;
        // The branch sees the same records but its own last edit.
        self.refresh_units(&[id], None, true);
        Ok(id)
    }

    pub fn delete_unit(&mut self, unit: UnitId, ts: Millis, author: &str) -> Result<()> {
        self.ensure_unit_mutable(unit)?;
        if !self.unit_children(unit).is_empty() {
            return Err(EngineError::UnitHasBranches(unit));
        }
        let session = self.units[&unit].session;
        self.units.get_mut(&unit).expect("checked").deleted = true;
        self.sessions
            .get_mut(&session)
            .expect("checked")
            .units
            .retain(|&u| u != unit);
        let name = self.units[&unit].name.clone();
        self.log_session_action(session, builtin::DELETE_UNIT, unit_params(unit, &name), ts, author)?;
        Ok(())
    }

    pub fn set_bookmark(&mut self, unit: UnitId, bookmarked: bool, ts: Millis, author: &str) -> Result<()> {
        self.ensure_unit_mutable(unit)?;
        let session = self.units[&unit].session;
        self.units.get_mut(&unit).expect("checked").bookmarked = bookmarked;
        let mut params = Params::new();
        params.insert("unit".into(), unit.to_string().into());
        params.insert("bookmarked".into(), bookmarked.into());
        self.log_session_action(session, builtin::BOOKMARK_UNIT, params, ts, author)?;
        Ok(())
    }

    pub fn import_dataset(&mut self, name: &str, csv: &str) -> Result<()> {
        let name = name.trim();
        if name.is_empty() || name == BUNDLED_CARS {
            return Err(EngineError::Dataset {
                name: name.to_string(),
                source: DatasetError::ReservedName(name.to_string()),
            });
        }
        if self.datasets.contains_key(name) {
            return Err(EngineError::DuplicateDataset(name.to_string()));
        }
        let data = TabularDataset::from_csv_str(csv).map_err(|source| EngineError::Dataset {
            name: name.to_string(),
            source,
        })?;
        self.datasets.insert(name.to_string(), data);
        Ok(())
    }

    /// Appends an active record to the unit's local history and re-checks
    /// the unit's pipeline.
    pub fn append_action(
        &mut self,
        unit: UnitId,
        action_type: &str,
        params: Params,
        ts: Millis,
        author: &str,
    ) -> Result<(ActionId, crate::checker::ValidationReport)> {
        self.ensure_unit_mutable(unit)?;
        self.check_append_type(action_type, &params)?;
        let id = self.new_record(action_type, params, ts, author)?;
        self.units.get_mut(&unit).expect("checked").local_actions.push(id);
        let needs_check = self.classify(action_type).unwrap_or(true);
        let report = self
            .refresh_units(&[unit], Some(id), needs_check)
            .pop()
            .expect("one report per unit");
        Ok((id, report))
    }

    pub fn annotate(&mut self, target: NodeRef, text: &str, ts: Millis, author: &str) -> Result<AnnotationId> {
        let text = text.trim();
        if text.is_empty() {
            return Err(EngineError::EmptyText);
        }
        match target {
            NodeRef::Unit(u) => self.ensure_unit_mutable(u)?,
            NodeRef::Session(s) => {
                self.session(s)?;
            }
        }
        let id = self.ids.next_annotation();
        let mut params = Params::new();
        params.insert("annotation".into(), id.to_string().into());
        params.insert("text".into(), text.into());
        let record = self.new_record(builtin::CREATE_ANNOTATION, params, ts, author)?;
        self.annotations.insert(
            id,
            Annotation {
                id,
                text: text.to_string(),
                author: author.to_string(),
                timestamp: ts,
                attached_to: target,
                record,
            deleted: false,
            },
        );
        match target {
            NodeRef::Unit(u) => {
                let unit = self.units.get_mut(&u).expect("checked");
                unit.local_actions.push(record);
                unit.annotations.push(id);
                self.refresh_units(&[u], Some(record), false);
            }
            NodeRef::Session(s) => {
                let session = self.sessions.get_mut(&s).expect("checked");
                session.actions.push(record);
                session.annotations.push(id);
            }
        }
        Ok(id)
    }

    pub fn delete_annotation(&mut self, annotation: AnnotationId, ts: Millis, author: &str) -> Result<()> {
        let target = self.annotation(annotation)?.attached_to;
        if let NodeRef::Unit(u) = target {
            self.ensure_unit_mutable(u)?;
        }
        let mut params = Params::new();
        params.insert("annotation".into(), annotation.to_string().into());
        let record = self.new_record(builtin::DELETE_ANNOTATION, params, ts, author)?;
        self.annotations.get_mut(&annotation).expect("checked").deleted = true;
        match target {
            NodeRef::Unit(u) => {
                self.units.get_mut(&u).expect("checked").local_actions.push(record);
                self.refresh_units(&[u], Some(record), false);
            }
            NodeRef::Session(s) => self.sessions.get_mut(&s).expect("exists").actions.push(record),
        }
        Ok(())
    }

    /// Saves `session` as `<base>_v<n+1>`; the saved version is frozen and
    /// keeps a snapshot of its unit states.
    pub fn save_session_version(&mut self, session: SessionId, ts: Millis, author: &str) -> Result<SessionId> {
        let parent = self.session(session)?;
        let base = parent.base_name.clone();
        let version = parent.version + 1;
        if self
            .child_sessions(session)
            .iter()
            .any(|c| self.sessions[c].base_name == base)
        {
            return Err(EngineError::NonLeafSave(session));
        }
        self.freeze_with_snapshot(session, builtin::SAVE_SESSION, &base, ts, author)?;
        Ok(self.copy_session(session, &base, version, ts))
    }

    /// Starts lineage `<new_base_name>_v0` from `session`.
    pub fn branch_session(
        &mut self,
        session: SessionId,
        new_base_name: &str,
        ts: Millis,
        author: &str,
    ) -> Result<SessionId> {
        self.session(session)?;
        let base = new_base_name.trim();
        if base.is_empty() {
            return Err(EngineError::EmptyText);
        }
        if self.sessions.values().any(|s| s.base_name == base) {
            return Err(EngineError::DuplicateBaseName(base.to_string()));
        }
        self.freeze_with_snapshot(session, builtin::BRANCH_SESSION, base, ts, author)?;
        Ok(self.copy_session(session, base, 0, ts))
    }

    fn freeze_with_snapshot(
        &mut self,
        session: SessionId,
        action_type: &str,
        child_base: &str,
        ts: Millis,
        author: &str,
    ) -> Result<()> {
        let mut params = Params::new();
        params.insert("child".into(), child_base.into());
        self.log_session_action(session, action_type, params, ts, author)?;
        if self.sessions[&session].saved_snapshot.is_none() {
            let label = self.sessions[&session].display_name();
            let snapshot = self.take_snapshot(session, ts, &label)?;
            self.sessions.get_mut(&session).expect("checked").saved_snapshot = Some(snapshot);
        }
        Ok(())
    }

    fn copy_session(&mut self, from: SessionId, base: &str, version: u32, ts: Millis) -> SessionId {
        let id = self.ids.next_session();
        let old_units = self.sessions[&from].units.clone();

        let mut unit_map = BTreeMap::new();
        let mut record_map = BTreeMap::new();
        let mut annotation_map = BTreeMap::new();
        for u in &old_units {
            unit_map.insert(*u, self.ids.next_unit());
        }
        // Fresh ids follow the original order so recency comparisons by id
        // give the same answers in the copy.
        let mut old_records: Vec<ActionId> = old_units
            .iter()
            .flat_map(|u| self.units[u].local_actions.iter().copied())
            .collect();
        old_records.sort();
        for r in old_records {
            record_map.insert(r, self.ids.next_action());
        }
        for u in &old_units {
            for a in &self.units[u].annotations {
                annotation_map.insert(*a, self.ids.next_annotation());
            }
        }

        for old_id in &old_units {
            let old = self.units[old_id].clone();
            for r in &old.local_actions {
                let mut copy = self.records[r].clone();
                copy.id = record_map[r];
                copy.provenance = Some(Provenance {
                    kind: ProvenanceKind::Inherited,
                    source: *r,
                });
                if let Some(edit) = copy.edit.as_mut() {
                    edit.remap(&record_map);
                }
                self.records.insert(copy.id, copy);
            }
            for a in &old.annotations {
                let mut copy = self.annotations[a].clone();
                copy.id = annotation_map[a];
                copy.attached_to = NodeRef::Unit(unit_map[old_id]);
                copy.record = record_map.get(&copy.record).copied().unwrap_or(copy.record);
                self.annotations.insert(copy.id, copy);
            }
            let unit = Unit {
                id: unit_map[old_id],
                session: id,
                branch_parent: old.branch_parent.map(|b| BranchParent {
                    unit: unit_map[&b.unit],
                    prefix_length: b.prefix_length,
                }),
                local_actions: old.local_actions.iter().map(|r| record_map[r]).collect(),
                annotations: old.annotations.iter().map(|a| annotation_map[a]).collect(),
                created_at: ts,
                ..old
            };
            self.units.insert(unit.id, unit);
        }

        self.sessions.insert(
            id,
            Session {
                id,
                base_name: base.to_string(),
                version,
                parent: Some(from),
                units: old_units.iter().map(|u| unit_map[u]).collect(),
                actions: Vec::new(),
                annotations: Vec::new(),
                saved_snapshot: None,
                created_at: ts,
            },
        );
        id
    }

    /// Ids of every record, live or tombstoned.
    pub fn all_record_ids(&self) -> BTreeSet<ActionId> {
        self.records.keys().copied().collect()
    }
}

fn unit_params(unit: UnitId, name: &str) -> Params {
    let mut params = Params::new();
    params.insert("unit".into(), unit.to_string().into());
    params.insert("name".into(), name.into());
    params
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    pub(crate) fn p(v: serde_json::Value) -> Params {
        serde_json::from_value(v).unwrap()
    }

    fn ws_with_unit() -> (Workspace, SessionId, UnitId) {
        let mut ws = Workspace::new("t");
        let s = ws.new_session("sessionA", 0).unwrap();
        let u = ws.create_unit(s, "u1", 1, "t").unwrap();
        (ws, s, u)
    }

    #[test]
    fn create_unit_starts_empty() {
        let (mut ws, s, u) = ws_with_unit();
        assert!(ws.effective_history(u).unwrap().is_empty());
        let u2 = ws.create_unit(s, "u2", 2, "t").unwrap();
        assert_ne!(u, u2);
        assert_eq!(ws.session(s).unwrap().units.len(), 2);
        let logged = &ws.session(s).unwrap().actions;
        assert_eq!(logged.len(), 2);
        let rec = ws.record(logged[0]).unwrap();
        assert_eq!(rec.action_type, builtin::CREATE_UNIT);
        assert_eq!(rec.category, ActionCategory::Management);
    }

    #[test]
    fn frozen_session_rejects_create_unit() {
        let (mut ws, s, _) = ws_with_unit();
        let v1 = ws.save_session_version(s, 5, "t").unwrap();
        assert_eq!(ws.session(v1).unwrap().display_name(), "sessionA_v1");
        assert_eq!(ws.create_unit(s, "late", 6, "t"), Err(EngineError::FrozenVersion(s)));
        assert!(ws.create_unit(v1, "ok", 6, "t").is_ok());
    }

    #[test]
    fn branch_inherits_history_and_stays_isolated() {
        let (mut ws, _, u) = ws_with_unit();
        ws.append_action(u, "load-data", p(json!({"dataset": "cars"})), 2, "t").unwrap();
        ws.append_action(u, "select-algorithm", p(json!({"name": "kmeans"})), 3, "t").unwrap();
        ws.append_action(u, "set-parameter", p(json!({"name": "k", "value": 3})), 4, "t").unwrap();
        let b = ws.branch_unit(u, "b", 5, "t").unwrap();
        assert_eq!(ws.effective_history(b).unwrap(), ws.effective_history(u).unwrap());
        let before = ws.effective_history(b).unwrap();
        ws.append_action(u, "run-clustering", Params::new(), 6, "t").unwrap();
        assert_eq!(ws.effective_history(b).unwrap(), before);
        let (local, _) = ws.append_action(b, "run-clustering", Params::new(), 7, "t").unwrap();
        assert_eq!(ws.unit(b).unwrap().local_actions, vec![local]);
        assert_eq!(ws.effective_history(u).unwrap().len(), 4);
    }

    #[test]
    fn branch_at_prefix_two_plus_one_local() {
        let (mut ws, _, u) = ws_with_unit();
        ws.append_action(u, "load-data", p(json!({"dataset": "cars"})), 2, "t").unwrap();
        ws.append_action(u, "select-algorithm", p(json!({"name": "kmeans"})), 3, "t").unwrap();
        let b = ws.branch_unit(u, "b", 4, "t").unwrap();
        ws.append_action(u, "run-clustering", Params::new(), 5, "t").unwrap();
        ws.append_action(u, "set-color-scheme", p(json!({"scheme": "red"})), 6, "t").unwrap();
        ws.append_action(b, "run-clustering", Params::new(), 7, "t").unwrap();
        assert_eq!(ws.effective_history(u).unwrap().len(), 4);
        assert_eq!(ws.effective_history(b).unwrap().len(), 3);
        // branch of a branch concatenates both prefixes
        let bb = ws.branch_unit(b, "bb", 8, "t").unwrap();
        ws.append_action(bb, "set-color-scheme", p(json!({"scheme": "blue"})), 9, "t").unwrap();
        let h = ws.effective_history(bb).unwrap();
        assert_eq!(h.len(), 4);
        assert_eq!(&h[..2], &ws.effective_history(u).unwrap()[..2]);
        assert_eq!(h[2], ws.unit(b).unwrap().local_actions[0]);
    }

    #[test]
    fn append_rejects_bad_input() {
        let (mut ws, _, u) = ws_with_unit();
        assert!(matches!(
            ws.append_action(u, "teleport", Params::new(), 2, "t"),
            Err(EngineError::UnregisteredType(_))
        ));
        assert!(matches!(
            ws.append_action(u, "undo", Params::new(), 2, "t"),
            Err(EngineError::ReservedType(_))
        ));
        assert!(matches!(
            ws.append_action(u, "load-data", Params::new(), 2, "t"),
            Err(EngineError::Schema(_))
        ));
        assert!(ws.effective_history(u).unwrap().is_empty());
    }

    #[test]
    fn annotations_drive_the_star() {
        let (mut ws, _, u) = ws_with_unit();
        assert_eq!(ws.annotate(NodeRef::Unit(u), "   ", 2, "t"), Err(EngineError::EmptyText));
        let a = ws.annotate(NodeRef::Unit(u), "high fold-change", 2, "t").unwrap();
        assert!(ws.is_starred(NodeRef::Unit(u)));
        ws.annotate(NodeRef::Unit(u), "second", 3, "t").unwrap();
        assert_eq!(ws.live_annotations(NodeRef::Unit(u)).len(), 2);
        ws.delete_annotation(a, 4, "t").unwrap();
        assert_eq!(ws.live_annotations(NodeRef::Unit(u)).len(), 1);
        let record = ws.record(*ws.unit(u).unwrap().local_actions.last().unwrap()).unwrap();
        assert_eq!(record.category, ActionCategory::Annotation);
    }

    #[test]
    fn annotate_then_delete_clears_star() {
        let (mut ws, _, u) = ws_with_unit();
        let a = ws.annotate(NodeRef::Unit(u), "note", 2, "t").unwrap();
        ws.delete_annotation(a, 3, "t").unwrap();
        assert!(!ws.is_starred(NodeRef::Unit(u)));
    }

    #[test]
    fn save_and_branch_names() {
        let (mut ws, s0, _) = ws_with_unit();
        let s1 = ws.save_session_version(s0, 2, "t").unwrap();
        let b = ws.branch_session(s1, "sessionB", 3, "t").unwrap();
        assert_eq!(ws.session(b).unwrap().display_name(), "sessionB_v0");
        assert_eq!(ws.session(b).unwrap().parent, Some(s1));
        assert_eq!(ws.save_session_version(s0, 4, "t"), Err(EngineError::NonLeafSave(s0)));
        assert_eq!(
            ws.branch_session(s1, "sessionB", 4, "t"),
            Err(EngineError::DuplicateBaseName("sessionB".into()))
        );
        // frozen parent may still be saved along its own lineage
        let s2 = ws.save_session_version(s1, 5, "t").unwrap();
        assert_eq!(ws.session(s2).unwrap().display_name(), "sessionA_v2");
    }

    #[test]
    fn saved_copy_has_fresh_ids_and_same_shape() {
        let (mut ws, s0, u) = ws_with_unit();
        ws.append_action(u, "load-data", p(json!({"dataset": "cars"})), 2, "t").unwrap();
        let b = ws.branch_unit(u, "b", 3, "t").unwrap();
        ws.append_action(b, "select-algorithm", p(json!({"name": "kmeans"})), 4, "t").unwrap();
        let s1 = ws.save_session_version(s0, 5, "t").unwrap();
        let units = ws.session(s1).unwrap().units.clone();
        assert_eq!(units.len(), 2);
        let (nu, nb) = (units[0], units[1]);
        assert_eq!(ws.unit(nb).unwrap().branch_parent.unwrap().unit, nu);
        let old: Vec<_> = ws.effective_records(b).unwrap().iter().map(|r| r.action_type.clone()).collect();
        let new: Vec<_> = ws.effective_records(nb).unwrap().iter().map(|r| r.action_type.clone()).collect();
        assert_eq!(old, new);
        let old_ids: BTreeSet<_> = ws.effective_history(b).unwrap().into_iter().collect();
        assert!(ws.effective_history(nb).unwrap().iter().all(|r| !old_ids.contains(r)));
        assert!(ws.session(s0).unwrap().saved_snapshot.is_some());
    }

    #[test]
    fn units_containing_follows_prefixes() {
        let (mut ws, _, u) = ws_with_unit();
        let (load, _) = ws.append_action(u, "load-data", p(json!({"dataset": "cars"})), 2, "t").unwrap();
        let b1 = ws.branch_unit(u, "b1", 3, "t").unwrap();
        let (late, _) = ws.append_action(u, "select-algorithm", p(json!({"name": "kmeans"})), 4, "t").unwrap();
        let b2 = ws.branch_unit(u, "b2", 5, "t").unwrap();
        assert_eq!(ws.units_containing(load), vec![u, b1, b2]);
        assert_eq!(ws.units_containing(late), vec![u, b2]);
        assert_eq!(ws.shared_local_len(u), 2);
    }

    #[test]
    fn delete_unit_requires_no_branches() {
        let (mut ws, s, u) = ws_with_unit();
        let b = ws.branch_unit(u, "b", 2, "t").unwrap();
        assert_eq!(ws.delete_unit(u, 3, "t"), Err(EngineError::UnitHasBranches(u)));
        ws.delete_unit(b, 3, "t").unwrap();
        assert_eq!(ws.session(s).unwrap().units, vec![u]);
        assert!(ws.unit(b).unwrap().deleted);
        ws.delete_unit(u, 4, "t").unwrap();
    }
}
