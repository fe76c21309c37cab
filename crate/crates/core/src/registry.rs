//! Action taxonomy and the action-type registry.
//!
//! Built-in management, annotation and history types are always present.
//! Analysis types come from registered [`DomainPlugin`]s, which also declare
//! the capability vocabulary their requires/provides rules draw from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{DomainPlugin, ReferenceDomain};
use crate::model::Params;

/// The four action categories. Declaration order is the tie-break order
/// used for dominant-category selection and link segment ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionCategory {
    Management,
    Analysis,
    Annotation,
    History,
}

impl ActionCategory {
    pub const ALL: [ActionCategory; 4] = [
        ActionCategory::Management,
        ActionCategory::Analysis,
        ActionCategory::Annotation,
        ActionCategory::History,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionCategory::Management => "management",
            ActionCategory::Analysis => "analysis",
            ActionCategory::Annotation => "annotation",
            ActionCategory::History => "history",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ActionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named pipeline precondition/postcondition token such as `data-loaded`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Capability(pub String);

impl Capability {
    pub fn new(name: impl Into<String>) -> Self {
        Capability(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Lowercase kebab-case: `[a-z][a-z0-9]*(-[a-z0-9]+)*`.
    pub fn is_well_formed(name: &str) -> bool {
        let mut chars = name.chars();
        if !matches!(chars.next(), Some('a'..='z')) {
            return false;
        }
        if name.ends_with('-') || name.contains("--") {
            return false;
        }
        name.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// How the override key of a record is derived.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverrideKey {
    /// Every record of the type shares this key.
    Fixed(String),
    /// Key is `<prefix>:<value of param>`, e.g. `param:k`.
    PerParam { prefix: String, param: String },
}

impl OverrideKey {
    pub fn resolve(&self, params: &Params) -> Option<String> {
        match self {
            OverrideKey::Fixed(key) => Some(key.clone()),
            OverrideKey::PerParam { prefix, param } => params
                .get(param)
                .and_then(|v| v.as_str())
                .map(|name| format!("{prefix}:{name}")),
        }
    }
}

/// Declaration of one action type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionType {
    pub name: String,
    pub category: ActionCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub override_key: Option<OverrideKey>,
    #[serde(default)]
    pub requires: Vec<Capability>,
    #[serde(default)]
    pub provides: Vec<Capability>,
    pub needs_dependency_check: bool,
}

impl ActionType {
    pub fn new(name: &str, category: ActionCategory) -> Self {
        ActionType {
            name: name.to_string(),
            category,
            override_key: None,
            requires: Vec::new(),
            provides: Vec::new(),
            needs_dependency_check: matches!(
                category,
                ActionCategory::Analysis | ActionCategory::History
            ),
        }
    }

    pub fn requires(mut self, caps: &[&str]) -> Self {
        self.requires = caps.iter().map(|c| Capability::new(*c)).collect();
        self
    }

    pub fn provides(mut self, caps: &[&str]) -> Self {
        self.provides = caps.iter().map(|c| Capability::new(*c)).collect();
        self
    }

    pub fn override_fixed(mut self, key: &str) -> Self {
        self.override_key = Some(OverrideKey::Fixed(key.to_string()));
        self
    }

    pub fn override_per_param(mut self, prefix: &str, param: &str) -> Self {
        self.override_key = Some(OverrideKey::PerParam {
            prefix: prefix.to_string(),
            param: param.to_string(),
        });
        self
    }

    pub fn checked(mut self, needs_check: bool) -> Self {
        self.needs_dependency_check = needs_check;
        self
    }
}

/// Names of the built-in action types.
pub mod builtin {
    pub const CREATE_UNIT: &str = "create-unit";
    pub const DELETE_UNIT: &str = "delete-unit";
    pub const BRANCH_UNIT: &str = "branch-unit";
    pub const BOOKMARK_UNIT: &str = "bookmark-unit";
    pub const SAVE_SESSION: &str = "save-session";
    pub const BRANCH_SESSION: &str = "branch-session";
    pub const IMPORT_DATASET: &str = "import-dataset";

    pub const CREATE_ANNOTATION: &str = "create-annotation";
    pub const DELETE_ANNOTATION: &str = "delete-annotation";

    pub const UNDO: &str = "undo";
    pub const REDO: &str = "redo";
    pub const SELECTIVE_UNDO: &str = "selective-undo";
    pub const SKIP: &str = "skip";
    pub const UNSKIP: &str = "unskip";
    pub const DELETE_ACTION: &str = "delete-action";
    pub const INSERT_ACTION: &str = "insert-action";
    pub const COPY_RANGE: &str = "copy-range";
    pub const MOVE_RANGE: &str = "move-range";
    pub const CUT_RANGE: &str = "cut-range";
    pub const PASTE: &str = "paste";
    pub const REVERT_EDIT: &str = "revert-edit";
}

fn builtin_types() -> Vec<ActionType> {
    use builtin::*;
    use ActionCategory::*;
    let mut types: Vec<ActionType> = [
        CREATE_UNIT,
        DELETE_UNIT,
        BRANCH_UNIT,
        BOOKMARK_UNIT,
        SAVE_SESSION,
        BRANCH_SESSION,
        IMPORT_DATASET,
    ]
    .iter()
    .map(|n| ActionType::new(n, Management))
    .collect();
    types.extend(
        [CREATE_ANNOTATION, DELETE_ANNOTATION]
            .iter()
            .map(|n| ActionType::new(n, Annotation)),
    );
    types.extend(
        [
            UNDO,
            REDO,
            SELECTIVE_UNDO,
            SKIP,
            UNSKIP,
            DELETE_ACTION,
            INSERT_ACTION,
            COPY_RANGE,
            MOVE_RANGE,
            CUT_RANGE,
            PASTE,
            REVERT_EDIT,
        ]
        .iter()
        .map(|n| ActionType::new(n, History)),
    );
    types
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("domain `{0}` is already registered")]
    DuplicateDomain(String),
    #[error("action type `{0}` is already registered")]
    DuplicateType(String),
    #[error("capability name `{0}` is not well-formed")]
    MalformedCapability(String),
    #[error("action type `{action_type}` uses capability `{capability}` not declared by its domain")]
    UnknownCapability {
        action_type: String,
        capability: String,
    },
    #[error("domain plugins may only declare analysis or management types (`{0}`)")]
    ReservedCategory(String),
}

/// All action types known to a workspace.
#[derive(Clone)]
pub struct Registry {
    types: BTreeMap<String, ActionType>,
    owners: BTreeMap<String, usize>,
    plugins: Vec<Arc<dyn DomainPlugin>>,
    capabilities: BTreeSet<Capability>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("types", &self.types.keys().collect::<Vec<_>>())
            .field(
                "plugins",
                &self.plugins.iter().map(|p| p.name().to_string()).collect::<Vec<_>>(),
            )
            .finish()
    }
}

impl PartialEq for Registry {
    fn eq(&self, other: &Self) -> bool {
        self.types == other.types
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::with_reference_domain()
    }
}

impl Registry {
    /// Built-in types only, no domain.
    pub fn builtin() -> Self {
        let types = builtin_types()
            .into_iter()
            .map(|t| (t.name.clone(), t))
            .collect();
        Registry {
            types,
            owners: BTreeMap::new(),
            plugins: Vec::new(),
            capabilities: BTreeSet::new(),
        }
    }

    pub fn with_reference_domain() -> Self {
        let mut registry = Self::builtin();
        registry
            .register(Arc::new(ReferenceDomain::new()))
            .expect("reference domain registers cleanly");
        registry
    }

    /// Registers a plugin and returns how many action types it added.
    pub fn register(&mut self, plugin: Arc<dyn DomainPlugin>) -> Result<usize, RegistryError> {
        if self.plugins.iter().any(|p| p.name() == plugin.name()) {
            return Err(RegistryError::DuplicateDomain(plugin.name().to_string()));
        }
        let declared: BTreeSet<Capability> = plugin.capabilities().into_iter().collect();
        for cap in &declared {
            if !Capability::is_well_formed(cap.as_str()) {
                return Err(RegistryError::MalformedCapability(cap.0.clone()));
            }
        }
        let decls = plugin.action_types();
        let mut seen = BTreeSet::new();
        for decl in &decls {
            if self.types.contains_key(&decl.name) || !seen.insert(decl.name.clone()) {
                return Err(RegistryError::DuplicateType(decl.name.clone()));
            }
            if !matches!(
                decl.category,
                ActionCategory::Analysis | ActionCategory::Management
            ) {
                return Err(RegistryError::ReservedCategory(decl.name.clone()));
            }
            for cap in decl.requires.iter().chain(&decl.provides) {
                if !declared.contains(cap) {
                    return Err(RegistryError::UnknownCapability {
                        action_type: decl.name.clone(),
                        capability: cap.0.clone(),
                    });
                }
            }
        }
        let index = self.plugins.len();
        for decl in &decls {
            self.owners.insert(decl.name.clone(), index);
            self.types.insert(decl.name.clone(), decl.clone());
        }
        self.capabilities.extend(declared);
        self.plugins.push(plugin);
        Ok(decls.len())
    }

    pub fn get(&self, name: &str) -> Option<&ActionType> {
        self.types.get(name)
    }

    pub fn types(&self) -> impl Iterator<Item = &ActionType> {
        self.types.values()
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn capabilities(&self) -> &BTreeSet<Capability> {
        &self.capabilities
    }

    pub fn plugins(&self) -> &[Arc<dyn DomainPlugin>] {
        &self.plugins
    }

    /// The plugin that interprets `action_type`, if it is a domain type.
    pub fn plugin_for(&self, action_type: &str) -> Option<&Arc<dyn DomainPlugin>> {
        self.owners.get(action_type).map(|&i| &self.plugins[i])
    }

    /// Number of action types contributed by the named domain.
    pub fn domain_type_count(&self, domain: &str) -> usize {
        match self.plugins.iter().position(|p| p.name() == domain) {
            Some(index) => self.owners.values().filter(|&&i| i == index).count(),
            None => 0,
        }
    }

    pub fn override_key(&self, action_type: &str, params: &Params) -> Option<String> {
        self.get(action_type)
            .and_then(|t| t.override_key.as_ref())
            .and_then(|k| k.resolve(params))
    }
}
