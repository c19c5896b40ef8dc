use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit index {index} out of range for a {n_qubits}-qubit register")]
    IndexOutOfRange { index: usize, n_qubits: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid locality {0}")]
    InvalidLocality(usize),

    #[error("unsupported connection kind `{0}`")]
    UnsupportedConnection(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),

    #[error("models are not nested: {0}")]
    NotNested(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("integration exceeded {steps} steps at t = {t}")]
    StepLimit { t: f64, steps: usize },

    #[error("integration produced a non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("non-physical state at t = {t}: {detail}")]
    NonPhysicalState { t: f64, detail: String },

    #[error("operation requires a time-independent generator")]
    TimeDependent,

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("zero probability assigned to observed outcome {outcome}")]
    ZeroProbability { outcome: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("non-finite objective or gradient at step {step}")]
    NonFiniteObjective { step: usize, params: Vec<f64> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing lattice node(s): {0}")]
    MissingNode(String),

    #[error("unknown gate `{0}`")]
    UnknownGate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
