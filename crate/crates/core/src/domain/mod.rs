//! Pluggable action interpreters.
//!
//! A [`DomainPlugin`] declares its analysis action types (with
//! requires/provides capability rules and parameter schemas) and interprets
//! records against a [`UnitState`]. Interpretation is strict: a record whose
//! preconditions are not met by the state yields [`MissingPrecondition`].
//! The dependency checker never calls the interpreter; it only reads the
//! declared rules, so the interpreter doubles as its brute-force oracle.

mod dataset;
pub mod kmeans;
mod reference;

use std::collections::BTreeMap;

pub use dataset::{DatasetError, TabularDataset, BUNDLED_CARS};
pub use kmeans::{kmeans, Clustering, KMeansError};
pub use reference::{ReferenceDomain, ALGORITHMS, COLOR_SCHEMES, DEFAULT_COLOR_SCHEME};

use crate::model::{ActionRecord, Params};
use crate::registry::{ActionType, Capability};
use crate::state::UnitState;

/// Interpretation failed because the state lacks a capability.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("missing precondition `{0}`")]
pub struct MissingPrecondition(pub Capability);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid parameters for `{action_type}`: {message}")]
pub struct SchemaError {
    pub action_type: String,
    pub message: String,
}

impl SchemaError {
    pub fn new(action_type: &str, message: impl Into<String>) -> Self {
        SchemaError {
            action_type: action_type.to_string(),
            message: message.into(),
        }
    }
}

/// Read-only resources a domain may consult.
#[derive(Debug, Clone, Copy)]
pub struct DomainContext<'a> {
    pub datasets: &'a BTreeMap<String, TabularDataset>,
}

pub trait DomainPlugin: Send + Sync {
    fn name(&self) -> &str;

    /// The capability vocabulary used by this domain's rules.
    fn capabilities(&self) -> Vec<Capability>;

    fn action_types(&self) -> Vec<ActionType>;

    fn validate_params(
        &self,
        action_type: &str,
        params: &Params,
        ctx: DomainContext<'_>,
    ) -> Result<(), SchemaError>;

    /// Checks the record's preconditions against the actual state.
    fn precondition(&self, state: &UnitState, record: &ActionRecord) -> Result<(), MissingPrecondition>;

    /// Applies the record's effect without checking preconditions.
    fn apply(&self, state: &mut UnitState, record: &ActionRecord);

    /// Computes derived content once all records are applied.
    fn finalize(&self, _state: &mut UnitState, _ctx: DomainContext<'_>) {}

    /// Optional pictogram for a unit whose history is `history`.
    fn glyph(&self, _history: &[&ActionRecord]) -> Option<String> {
        None
    }

    fn interpret(&self, state: &UnitState, record: &ActionRecord) -> Result<UnitState, MissingPrecondition> {
        self.precondition(state, record)?;
        let mut next = state.clone();
        self.apply(&mut next, record);
        Ok(next)
    }
}

/// A domain with no semantics, used to exercise registration.
#[derive(Debug, Clone, Default)]
pub struct EmptyDomain {
    name: String,
    capabilities: Vec<Capability>,
    types: Vec<ActionType>,
}

impl EmptyDomain {
    pub fn new(name: &str) -> Self {
        EmptyDomain {
            name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn with_capability(mut self, cap: &str) -> Self {
        self.capabilities.push(Capability::new(cap));
        self
    }

    pub fn with_type(mut self, ty: ActionType) -> Self {
        self.types.push(ty);
        self
    }
}

impl DomainPlugin for EmptyDomain {
    fn name(&self) -> &str {
        &self.name
    }

    fn capabilities(&self) -> Vec<Capability> {
        self.capabilities.clone()
    }

    fn action_types(&self) -> Vec<ActionType> {
        self.types.clone()
    }

    fn validate_params(&self, _: &str, _: &Params, _: DomainContext<'_>) -> Result<(), SchemaError> {
        Ok(())
    }

    fn precondition(&self, _: &UnitState, _: &ActionRecord) -> Result<(), MissingPrecondition> {
        Ok(())
    }

    fn apply(&self, _: &mut UnitState, _: &ActionRecord) {}
}
