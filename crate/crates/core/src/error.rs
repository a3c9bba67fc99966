use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph contains a cycle")]
    CycleDetected,
    #[error("self loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {target} <- {origin}")]
    DuplicateEdge { target: usize, origin: usize },
    #[error("node index {index} out of range for {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("brute-force canonical form limited to 6 nodes, got {0}")]
    TooLarge(usize),
    #[error("anchor subset must be nonempty")]
    EmptySubset,
    #[error("duplicate anchor {0} in subset")]
    DuplicateAnchor(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask selects no entries")]
    EmptyMask,
    #[error("label {label} not among {classes} candidates")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("no forward pass recorded for this loss")]
    NoForwardRecorded,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("target signal {0} has zero norm")]
    ZeroNormTarget(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("mask covers every node")]
    MaskCoversAll,
    #[error("expected {expected} columns, found {got} (line {line})")]
    ColumnMismatch { expected: usize, got: usize, line: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("task `{task}` incompatible with model `{model}`")]
    IncompatibleTaskModel { task: String, model: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the experiment CLI: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse(_) | Error::UnknownKey(_) | Error::IncompatibleTaskModel { .. } => 2,
            Error::Numerical(_) | Error::ZeroNormTarget(_) => 4,
            _ => 3,
        }
    }
}
