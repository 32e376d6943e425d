use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown divergence `{0}` (expected one of kl, rkl, hellinger2, js, gan, chi2, jeffreys, tv)")]
    UnknownDivergence(String),

    #[error("{what}: argument {value} lies outside the open domain ({lower}, {upper})")]
    Domain {
        what: &'static str,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("{operation} is not supported for {divergence}")]
    Unsupported {
        operation: &'static str,
        divergence: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("divergence undefined: {0}")]
    DivergenceUndefined(String),

    #[error("quadrature failed: {0}")]
    OracleFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(
        "chi-squared loss exploded: exponent {max_exponent:.3} exceeds guard {guard} \
         (batch mean exponent {mean_exponent:.3}, {n_over} of {batch} samples over the guard)"
    )]
    Explosion {
        max_exponent: f64,
        mean_exponent: f64,
        guard: f64,
        n_over: usize,
        batch: usize,
    },

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },

    #[error("gradient relation violated: {0}")]
    RelationViolated(String),

    #[error("dynamics: {0}")]
    Dynamics(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
