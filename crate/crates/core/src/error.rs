use msk_autograd::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("{op}: dimension mismatch: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("correlation undefined: {0} sequence is constant")]
    UndefinedCorrelation(&'static str),

    #[error("zero-variance target column {0}; cannot normalize")]
    ZeroVariance(usize),

    #[error("simulation unstable at sample {step}: |theta| = {theta:e} rad; config: {config}")]
    Unstable { step: usize, theta: f64, config: String },

    #[error("trial {trial} violates invariant: {reason}")]
    TrialInvariant { trial: usize, reason: String },

    #[error("linear system is singular{hint}")]
    Singular { hint: &'static str },

    #[error("non-finite {what} at iteration {iteration}")]
    Diverged { what: String, iteration: usize },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
