use thiserror::Error;

/// Crate-wide error type. Variants are shared across modules so the CLI can
/// map every failure to a single data-error exit path.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown label id {id} for taxonomy `{taxonomy}`")]
    UnknownLabel { taxonomy: String, id: u8 },

    #[error("grid spec or taxonomy mismatch: {0}")]
    SpecMismatch(String),

    #[error("pose fails rigid-transform invariants: {0}")]
    SingularPose(String),

    #[error("no voxels left after validity filtering")]
    EmptyAfterFiltering,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("unknown object id {0}")]
    UnknownObjectId(u32),

    #[error("no class with non-empty union to evaluate")]
    NoEvaluableClass,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("bad magic: not a container file")]
    BadMagic,

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated chunk `{tag}`")]
    TruncatedChunk { tag: String },

    #[error("invariant violation in chunk `{tag}`: {reason}")]
    InvariantViolation { tag: String, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
