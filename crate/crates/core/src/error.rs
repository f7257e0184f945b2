use alloc::string::String;

/// Errors surfaced by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("graph on {n} nodes is disconnected")]
    Disconnected { n: usize },

    #[error("no connected Erdős–Rényi draw within {attempts} attempts")]
    ConnectivityBudget { attempts: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not doubly stochastic (worst residual {residual:e})")]
    NotStochastic { residual: f64 },

    #[error("missing certified constant `{0}`")]
    MissingConstant(&'static str),

    #[error("non-finite model at iteration {t} (user {user})")]
    Divergence { t: u64, user: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("linear system is singular")]
    Singular,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
