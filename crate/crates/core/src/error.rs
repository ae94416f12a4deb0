use std::path::PathBuf;

/// Errors produced anywhere in the attack toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: duplicate token {token:?}")]
    DuplicateToken {
        path: PathBuf,
        line: usize,
        token: String,
    },
    #[error("{0}: vocabulary file is empty")]
    EmptyVocab(PathBuf),
    #[error("vocabulary has no unknown token (looked for {0})")]
    MissingUnk(String),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },
    #[error("unknown prefix convention {0:?}")]
    UnknownConvention(String),
    #[error("cannot split {0:?} into start, middle and end subtokens")]
    SplitInfeasible(String),

    #[error("row {row} is not on the probability simplex (sum {sum}, min {min})")]
    NotOnSimplex { row: usize, sum: f64, min: f64 },
    #[error("distribution width {got} does not match vocabulary size {expected}")]
    WidthMismatch { got: usize, expected: usize },
    #[error("sequence of length {len} exceeds the model maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("class {class} out of range for {num_classes} classes")]
    InvalidClass { class: usize, num_classes: usize },
    #[error("margin must be positive, got {0}")]
    InvalidMargin(f64),
    #[error("target position {position} out of range for sequence of length {len}")]
    InvalidPosition { position: usize, len: usize },
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("empty dataset")]
    EmptyDataset,

    #[error("word/subtoken alignment mismatch: {0}")]
    AlignmentMismatch(String),
    #[error("candidate mask selects no tokens")]
    EmptyCandidateMask,
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("{0} table is required but missing")]
    MissingTable(&'static str),
    #[error("no eligible words to attack")]
    AttackInfeasible,
    #[error("model does not predict the gold label on the clean input")]
    NotCorrectlyClassified,

    #[error("font {0:?} is not available")]
    FontUnavailable(String),
    #[error("canvas {0}x{1} is smaller than 16x16")]
    CanvasTooSmall(usize, usize),
    #[error("visual table cache: {0}")]
    Cache(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("no correctly classified inputs to attack")]
    NoEligibleInputs,

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
