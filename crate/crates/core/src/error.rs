use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
///
/// Variants are grouped by [`ErrorClass`] so front ends (the CLI exit codes,
/// the C ABI status codes) can map them without matching every variant.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "singular design: condition estimate {condition:.3e} exceeds {threshold:.0e}{context}"
    )]
    SingularDesign {
        condition: f64,
        threshold: f64,
        context: String,
    },

    #[error("IRLS did not converge after {iterations} iterations (max coefficient change {last_change:.3e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        best: Box<crate::glm::LogisticFit>,
    },

    #[error("quasi-complete separation: |linear predictor| reached {max_abs_eta:.1}")]
    SeparationDetected { max_abs_eta: f64 },

    #[error("degenerate treatment: residual sd {sigma:.3e} is too small for density weights")]
    DegenerateTreatment { sigma: f64 },

    #[error("unknown basis function `{0}`")]
    UnknownBasisFunction(String),

    #[error("centre `{0}` has no subjects")]
    EmptyCentre(String),

    #[error("pool size {g} exceeds the {n} subjects of centre `{centre}`")]
    PoolSizeExceedsCentre { centre: String, g: usize, n: usize },

    #[error("covariate must be positive for log(x), got {0}")]
    NonPositiveCovariate(f64),

    #[error("design fingerprint mismatch: {0} vs {1}")]
    FingerprintMismatch(String, String),

    #[error("site `{0}` contributed more than once")]
    DuplicateSite(String),

    #[error("malformed summary: {0}")]
    MalformedSummary(String),

    #[error("summary carries no fingerprint")]
    FingerprintMissing,

    #[error("missing configuration: {0}")]
    ConfigMissing(String),

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("no reference row for {0}")]
    MissingReferenceRow(String),

    #[error("no estimates to summarize")]
    EmptyEstimates,

    #[error("quadratic blip required for dose optimization")]
    NotQuadratic,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure classes shared by the CLI and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input, configuration, or I/O.
    Config,
    /// The numerics could not produce an estimate.
    Numerical,
    /// Site/coordinator contract violation.
    Protocol,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            SingularDesign { .. }
            | NonConvergence { .. }
            | SeparationDetected { .. }
            | DegenerateTreatment { .. }
            | NonFinite(_)
            | EmptyEstimates => ErrorClass::Numerical,
            FingerprintMismatch(..)
            | DuplicateSite(_)
            | MalformedSummary(_)
            | FingerprintMissing => ErrorClass::Protocol,
            _ => ErrorClass::Config,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
