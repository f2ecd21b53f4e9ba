use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-deterministic loss: {0}")]
    Determinism(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("tag conversion: {0}")]
    Conversion(String),

    #[error("embeddings line {line}: {msg}")]
    Embedding { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, utterance {utterance}: loss = {loss}")]
    Divergence { epoch: usize, utterance: usize, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("gradient check failed for {group}: max relative error {error:.3e}")]
    GradCheck { group: String, error: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Conversion(_) | Error::Embedding { .. } | Error::Io(_) => 2,
            Error::Divergence { .. } => 3,
            Error::Checkpoint(_) => 4,
            Error::GradCheck { .. } | Error::Determinism(_) => 5,
            Error::Dimension { .. } | Error::Contract(_) => 1,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
