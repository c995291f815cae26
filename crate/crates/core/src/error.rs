use thiserror::Error;

/// Errors produced by model construction, the ODE oracles, the samplers and
/// the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A structurally invalid model field (negative rate, bad dimension, ...).
    /// `field` names the offending entry, e.g. `motion.q[0][1]`.
    #[error("structural error in {field}: {detail}")]
    Structural { field: String, detail: String },

    /// A semantically invalid model for the requested operation
    /// (not critical, reducible motion, degenerate mechanism, ...).
    #[error("model error: {0}")]
    Model(String),

    /// Invalid argument to an operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The adaptive integrator collapsed its step size.
    #[error("integrator failure at t = {t}: {context}")]
    Numerical { context: String, t: f64 },

    /// An iterative scheme did not converge (e.g. the extinction-function
    /// θ-doubling limit, signalling failure of the extinction condition).
    #[error("non-convergence: {0}")]
    NonConvergence(String),

    /// Invalid experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A Monte Carlo check ended without enough data to decide.
    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn structural(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Structural {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
