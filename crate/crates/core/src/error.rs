use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cycle detected through edge {from} -> {to}")]
    Cycle { from: usize, to: usize },

    #[error("edge {from} -> {to} references a node outside 0..{n_nodes}")]
    DanglingEdge {
        from: usize,
        to: usize,
        n_nodes: usize,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("sample `{0}` has no observed outcomes")]
    NoObservation(String),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("line {line}: unknown function `{name}`")]
    UnknownFunction { line: usize, name: String },

    #[error("line {line}: `{name}` is referenced before it is defined")]
    UndefinedReference { line: usize, name: String },

    #[error("line {line}: `{name}` is already defined")]
    DuplicateDefinition { line: usize, name: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("no input features for `{0}`")]
    MissingFeature(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("no `{type_name}` model fits a budget of {budget}s")]
    InfeasibleBudget { type_name: String, budget: f64 },

    #[error("invalid choice: {0}")]
    InvalidChoice(String),

    #[error("no choice has any observed training outcome")]
    NoData,

    #[error("invalid synthetic spec: {0}")]
    Spec(String),

    #[error("join error: {0}")]
    Join(String),

    #[error("sample `{sample}` has no observed outcome for choice {choice}")]
    UnobservedOutcome { sample: String, choice: usize },

    #[error("unknown sample `{0}`")]
    UnknownSample(String),

    #[error("unknown report format `{0}`")]
    UnknownFormat(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
