use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum QlaError {
    #[error("parameter {theta:?} outside the domain {what}")]
    Domain { theta: Vec<f64>, what: String },

    #[error("volatility matrix is not positive definite{}", at_step(*.step))]
    NonSpd { step: Option<usize> },

    #[error("scheme {0} is not available for this model")]
    UnsupportedScheme(String),

    #[error("numeric blow-up at fine step {step}: |state| = {value:e}")]
    NumericBlowup { step: usize, value: f64 },

    #[error("optimizer did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("grid quadrature supports at most 3 parameters, got {0}")]
    UnsupportedDimension(usize),

    #[error("posterior weight underflowed")]
    DegeneratePosterior,

    #[error("information matrix is singular (smallest eigenvalue {0:e})")]
    SingularInformation(f64),

    #[error("exponents must be positive and pairwise distinct")]
    InvalidAlphas,

    #[error("no grid point of the local parameter satisfies |u| >= {0}")]
    EmptyRegion(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("time grid is not uniform: {0}")]
    Grid(String),

    #[error("i/o error: {0}")]
    Io(String),
}

fn at_step(step: Option<usize>) -> String {
    match step {
        Some(k) => format!(" at observation {k}"),
        None => String::new(),
    }
}

impl From<std::io::Error> for QlaError {
    fn from(e: std::io::Error) -> Self {
        QlaError::Io(e.to_string())
    }
}

impl From<csv::Error> for QlaError {
    fn from(e: csv::Error) -> Self {
        QlaError::Format(e.to_string())
    }
}

impl From<serde_json::Error> for QlaError {
    fn from(e: serde_json::Error) -> Self {
        QlaError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, QlaError>;
