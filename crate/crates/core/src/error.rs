use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mode index {0}: modes are numbered from 1")]
    InvalidModeIndex(usize),

    #[error("point {0} lies outside the open interval (0, 1)")]
    OutOfDomain(f64),

    #[error("non-finite spectral coefficient at index {0}")]
    NonFinite(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("quadrature size {quadrature} below required floor {floor} ({what})")]
    InsufficientQuadrature {
        quadrature: usize,
        floor: usize,
        what: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid scheme parameters:\n  - {}", .0.join("\n  - "))]
    InvalidParams(Vec<String>),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Newton system; the step constraint (K1 - λ1)τ < 1 is probably violated")]
    SingularLinearSolve,

    #[error("step {step}: {source}")]
    Step {
        step: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{} of the ensemble paths failed; first: path {}: {}", .0.len(), .0[0].0, .0[0].1)]
    Ensemble(Vec<(usize, String)>),

    #[error("reports are not comparable: {0}")]
    MismatchedReports(String),

    #[error("config line {line}: {message}")]
    ConfigSyntax { line: usize, message: String },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    ConfigInvalid(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical solver (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonConvergence { .. } | Error::SingularLinearSolve | Error::Ensemble(_) => true,
            Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
