use thiserror::Error;

pub type Result<T> = std::result::Result<T, HteError>;

#[derive(Debug, Error)]
pub enum HteError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: expected {expected}, got {actual} ({what})")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("numerical error in {context}: {detail}")]
    Numerical { context: String, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("singular inverse-probability weight at unit {unit}: propensity is numerically 1")]
    SingularWeight { unit: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("sampler initialization failed: {0}")]
    Initialization(String),

    #[error("diagnostic error: {0}")]
    Diagnostic(String),

    #[error("estimand undefined: {0}")]
    Undefined(String),

    #[error("logistic fit separated: |coefficient| = {0:.3} exceeds 30")]
    Separation(f64),

    #[error("weak instrument: compliance-rate difference is zero")]
    WeakInstrument,

    #[error("truncated Gumbel draw impossible for {unit}: cdf at bound underflows")]
    Rejection { unit: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HteError {
    /// Stable machine-readable tag, used by the CLI error document and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            HteError::Domain(_) => "domain",
            HteError::Config(_) => "config",
            HteError::Shape { .. } => "shape",
            HteError::Numerical { .. } => "numerical",
            HteError::Contract(_) => "contract",
            HteError::SingularWeight { .. } => "singular_weight",
            HteError::Data(_) => "data",
            HteError::Parse { .. } => "parse",
            HteError::Initialization(_) => "initialization",
            HteError::Diagnostic(_) => "diagnostic",
            HteError::Undefined(_) => "undefined",
            HteError::Separation(_) => "separation",
            HteError::WeakInstrument => "weak_instrument",
            HteError::Rejection { .. } => "rejection",
            HteError::Usage(_) => "usage",
            HteError::Io(_) => "io",
            HteError::Json(_) => "json",
        }
    }
}
