use thiserror::Error;

/// Errors raised by the solver, lattice and simulator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("quadrature truncation: survival at age {max_age} is {survival:e}, above 1e-12")]
    QuadratureTruncation { max_age: f64, survival: f64 },

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("risk aversion gamma = 1 must use the logarithmic branch")]
    LogUtilityRequired,

    #[error("lattice mass leak: {leaked:e} of probability mass passed y_max = {y_max}")]
    MassLeak { leaked: f64, y_max: f64 },

    #[error("lattice step too coarse: per-step death probability {probability:.4} exceeds 0.1 at t = {time:.4}")]
    StepTooCoarse { probability: f64, time: f64 },

    #[error("inconsistent resolutions for extrapolation: {0}")]
    InconsistentResolution(String),

    #[error("enumeration too large: {size} outcomes (limit 1e7)")]
    EnumerationTooLarge { size: f64 },

    #[error("simulation requires an explicit seed")]
    MissingSeed,

    #[error("percentile fan requires at least {required} paths, got {actual}")]
    TooFewPaths { required: usize, actual: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
