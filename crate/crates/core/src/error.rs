use crate::checker::ValidationReport;
use crate::domain::{DatasetError, SchemaError};
use crate::ids::{ActionId, AnnotationId, SessionId, UnitId};
use crate::model::ActionStatus;
use crate::registry::RegistryError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown unit {0}")]
    UnknownUnit(UnitId),
    #[error("unknown action record {0}")]
    UnknownRecord(ActionId),
    #[error("unknown annotation {0}")]
    UnknownAnnotation(AnnotationId),
    #[error("record {record} is not part of unit {unit}'s history")]
    NotInHistory { unit: UnitId, record: ActionId },
    #[error("session {0} is a saved version and can no longer be modified")]
    FrozenVersion(SessionId),
    #[error("session {0} already has a newer version in its lineage")]
    NonLeafSave(SessionId),
    #[error("a session lineage named `{0}` already exists")]
    DuplicateBaseName(String),
    #[error("unit {0} has no active action to undo")]
    EmptyUndoStack(UnitId),
    #[error("unit {0} has nothing to redo")]
    NothingToRedo(UnitId),
    #[error("record {record} is {found:?}, expected {expected:?}")]
    WrongStatus {
        record: ActionId,
        expected: ActionStatus,
        found: ActionStatus,
    },
    #[error("record {0} is history bookkeeping and cannot be edited")]
    NotEditable(ActionId),
    #[error("record {record} is shared with a branch of unit {unit} and cannot be deleted")]
    SharedPrefixDelete { unit: UnitId, record: ActionId },
    #[error("index {index} of unit {unit} lies inside a prefix shared with its branches")]
    SharedPrefixInsert { unit: UnitId, index: usize },
    #[error("index {index} is out of bounds (length {len})")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("range {start}..{end} is invalid for a history of length {len}")]
    InvalidRange { start: usize, end: usize, len: usize },
    #[error("the selected range contains no transferable actions")]
    EmptyRange,
    #[error("destination position overlaps the source range")]
    OverlappingRange,
    #[error("the clipboard is empty")]
    EmptyClipboard,
    #[error("the edit would break the pipeline of unit {}; confirmation required", .0.unit)]
    UnconfirmedDestructive(Box<ValidationReport>),
    #[error("{0} and {1} are not on one ancestor path")]
    NotOnOnePath(String, String),
    #[error("replay of unit {unit} failed: record {record} at index {index} is missing `{missing}`")]
    BrokenPipeline {
        unit: UnitId,
        index: usize,
        record: ActionId,
        missing: String,
    },
    #[error("action type `{0}` is not registered")]
    UnregisteredType(String),
    #[error("action type `{0}` cannot be appended directly")]
    ReservedType(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("annotation text must not be empty")]
    EmptyText,
    #[error("unit {0} still has branches and cannot be deleted")]
    UnitHasBranches(UnitId),
    #[error("unit {0} has been deleted")]
    DeletedUnit(UnitId),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("dataset `{name}`: {source}")]
    Dataset { name: String, source: DatasetError },
    #[error("dataset name `{0}` is already in use")]
    DuplicateDataset(String),
    #[error("integrity failure: {0}")]
    Integrity(String),
}

impl EngineError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        use EngineError::*;
        match self {
            UnknownSession(_) => "UnknownSession",
            UnknownUnit(_) => "UnknownUnit",
            UnknownRecord(_) => "UnknownRecord",
            UnknownAnnotation(_) => "UnknownAnnotation",
            NotInHistory { .. } => "NotInHistory",
            FrozenVersion(_) => "FrozenVersion",
            NonLeafSave(_) => "NonLeafSave",
            DuplicateBaseName(_) => "DuplicateBaseName",
            EmptyUndoStack(_) => "EmptyUndoStack",
            NothingToRedo(_) => "NothingToRedo",
            WrongStatus { .. } => "WrongStatus",
            NotEditable(_) => "NotEditable",
            SharedPrefixDelete { .. } => "SharedPrefixDelete",
            SharedPrefixInsert { .. } => "SharedPrefixInsert",
            IndexOutOfBounds { .. } => "IndexOutOfBounds",
            InvalidRange { .. } => "InvalidRange",
            EmptyRange => "EmptyRange",
            OverlappingRange => "OverlappingRange",
            EmptyClipboard => "EmptyClipboard",
            UnconfirmedDestructive(_) => "UnconfirmedDestructive",
            NotOnOnePath(..) => "NotOnOnePath",
            BrokenPipeline { .. } => "BrokenPipeline",
            UnregisteredType(_) => "UnregisteredType",
            ReservedType(_) => "ReservedType",
            Schema(_) => "SchemaViolation",
            EmptyText => "EmptyText",
            UnitHasBranches(_) => "UnitHasBranches",
            DeletedUnit(_) => "DeletedUnit",
            Registry(_) => "Registry",
            Dataset { .. } => "Dataset",
            DuplicateDataset(_) => "DuplicateDataset",
            Integrity(_) => "Integrity",
        }
    }
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;
