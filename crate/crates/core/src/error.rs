use thiserror::Error;

use crate::types::Stage;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("class id {0} appears more than once in the candidate set")]
    DuplicateClass(usize),
    #[error("embedding set is empty")]
    EmptySet,
    #[error("embedding dimension {0} is too small (need at least 2)")]
    DimTooSmall(usize),
    #[error("metadata length mismatch: {0}")]
    MetadataLength(String),
    #[error("subject ids are not contiguous: expected 0..{expected}, missing {missing}")]
    NonContiguousSubjects { expected: usize, missing: usize },
    #[error("expected a {expected} set, got a {found} set")]
    RoleMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("cannot fit a model on zero samples")]
    DegenerateInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("row {row} has zero norm")]
    ZeroVector { row: usize },
    #[error("row {row} is not unit-norm (norm {norm})")]
    NotNormalized { row: usize, norm: f64 },
    #[error("score matrix is constant; standard deviation would be zero")]
    ConstantMatrix,
    #[error("wrong stage: expected {expected:?}, found {found:?}")]
    WrongStage { expected: Stage, found: Stage },
    #[error("density cutoff m={m} is outside 1..={max}")]
    BadM { m: usize, max: usize },
    #[error("neighborhood size k={k} is outside 1..={max}")]
    BadK { k: usize, max: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("query labels are required for this metric")]
    MissingLabels,
    #[error("label {label} of query {query} has no matching candidate class")]
    LabelOutOfRange { query: usize, label: usize },
    #[error("reports are not comparable: {0}")]
    ClassSetMismatch(String),
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown subject {0}")]
    UnknownSubject(usize),
    #[error("window of {window} rows exceeds the {available} rows available for the subject")]
    WindowTooLarge { window: usize, available: usize },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("sidecar does not match payload: {0}")]
    SidecarMismatch(String),
    #[error("invalid stage byte {0}")]
    BadStageByte(u8),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors raised while reading or writing files, as opposed to
    /// errors about the content of otherwise well-formed inputs.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Json(_)
                | Error::BadMagic { .. }
                | Error::VersionUnsupported(_)
                | Error::TruncatedPayload { .. }
                | Error::SidecarMismatch(_)
                | Error::BadStageByte(_)
        )
    }
}
