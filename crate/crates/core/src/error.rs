use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Exhaustive enumeration would visit more configurations than allowed.
    #[error("enumeration needs {required} configurations but the bound is {bound}")]
    EnumerationBound { required: f64, bound: u64 },

    /// A quantity that must be monotone along a sweep was not.
    #[error("non-monotone {what}: {diagnostics}")]
    NonMonotone { what: String, diagnostics: String },

    #[error("AMP diverged at iteration {iteration}: mse {mse} exceeds {limit}")]
    Divergence {
        iteration: usize,
        mse: f64,
        limit: f64,
        mse_trace: Vec<f64>,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
