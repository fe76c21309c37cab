//! Workflow provenance engine.
//!
//! Records hierarchical visual-analysis workflows (projects, versioned
//! sessions, units, actions), edits unit histories selectively, detects
//! broken pipelines, replays states and derives sankey workflow graphs.

pub mod checker;
pub mod cli;
pub mod clock;
pub mod command;
pub mod domain;
pub mod edit;
pub mod error;
pub mod fixtures;
pub mod fuzz;
pub mod ids;
pub mod model;
pub mod persist;
pub mod registry;
pub mod sankey;
pub mod service;
pub mod state;

pub use checker::{FixKind, SuggestedFix, ValidationReport, ValidationStatus};
pub use error::{EngineError, Result};
pub use ids::{ActionId, AnnotationId, NodeRef, SessionId, UnitId};
pub use model::{ActionRecord, ActionStatus, Params, Workspace};
pub use state::UnitState;
