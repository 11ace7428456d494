use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid operator: {0}")]
    InvalidOperator(String),

    #[error("degenerate observable: |omega| must be positive")]
    DegenerateObservable,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// The integrator gave up; `state` is the last accepted state vector.
    #[error("integration failed at t = {t:e}: {reason}")]
    IntegrationFailure {
        t: f64,
        state: Vec<f64>,
        reason: String,
    },

    /// The Kraus-form denominator vanished relative to the propagator scale.
    #[error("branch extinction at t = {t:e}: Tr(K rho0 K^dag) / |K|^2 = {ratio:e}")]
    BranchExtinction { t: f64, ratio: f64 },

    #[error("zero-probability branch: Tr(P rho0) = {0:e}")]
    ZeroProbabilityBranch(f64),

    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }
}
