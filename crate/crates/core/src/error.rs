//! Crate-wide error type.

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building or running an experiment.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Mesh construction or traversal received inconsistent input.
    #[error("mesh error: {0}")]
    Mesh(String),

    /// An outlet segment index was outside `1..=segments`.
    #[error("outlet segment {index} out of range 1..={count}")]
    SegmentOutOfRange { index: u32, count: u32 },

    /// A queried point does not lie on the outlet wall.
    #[error("point ({0}, {1}) is not on the outlet boundary")]
    NotOnOutlet(f64, f64),

    /// Two coefficients live on different bases and cannot be combined.
    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    /// A configuration value failed validation; `key` names the TOML entry.
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    /// The configuration file could not be parsed as TOML.
    #[error("config parse error: {0}")]
    ConfigParse(String),

    /// Assembly input was inconsistent (dimension mismatches and the like).
    #[error("assembly error: {0}")]
    Assembly(String),

    /// The saddle-point factorization failed at time step `step`.
    #[error("factorization failed at step {step}: {message}")]
    Factorization { step: usize, message: String },

    /// A non-finite value appeared in the solution at time step `step`.
    #[error("solution diverged (non-finite value) at step {step}")]
    NonFinite { step: usize },

    /// A trajectory was produced on a different grid or mesh than expected.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// The measurement boundary contains no edges.
    #[error("measurement boundary is empty: {0}")]
    EmptyTrace(String),

    /// Energy-ratio or Lipschitz-ratio denominators vanished.
    #[error("degenerate ratio: {0}")]
    DegenerateRatio(String),

    /// The damped normal equations stayed singular after repeated escalation.
    #[error("normal equations singular after {escalations} damping escalations")]
    SingularNormalEquations { escalations: usize },

    /// Distinct coefficients produced numerically identical measurements.
    #[error(
        "identifiability violation: coefficients {gap:.3e} apart produced \
         traces {distance:.3e} apart"
    )]
    IdentifiabilityViolation { gap: f64, distance: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the error stems from user-supplied configuration rather than
    /// from the solver; drives the process exit code.
    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::ConfigParse(_))
    }
}
