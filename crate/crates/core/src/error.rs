use thiserror::Error;

/// Errors raised by the model, theory, and estimator layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mean metaorder length diverges for tail exponent {alpha} (need alpha > 1)")]
    NonconvergentMean { alpha: f64 },

    #[error("invalid exponent {value}: {reason}")]
    InvalidExponent { value: f64, reason: &'static str },

    #[error("invalid support: {0}")]
    InvalidSupport(String),

    #[error("invalid metaorder law: {0}")]
    InvalidLaw(String),

    #[error("invalid population: {0}")]
    InvalidPopulation(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("exponent 1/(2 - alpha) degenerates for alpha = {alpha}; values above 1.95 are rejected")]
    DegenerateExponent { alpha: f64 },

    #[error("state space has {states} states, more than the oracle limit of {limit}")]
    StateSpaceTooLarge { states: usize, limit: usize },

    #[error("series of length {len} is too short for max lag {max_lag} (need len > 10 * max_lag)")]
    SeriesTooShort { len: usize, max_lag: usize },

    #[error("no completed metaorders were logged for the requested traders")]
    EmptyLog,

    #[error("power-law fit needs at least {required} positive points in the window, found {found}")]
    InsufficientPoints { found: usize, required: usize },

    #[error("law `{0}` has no asymptotic ACF form")]
    UnsupportedLaw(&'static str),

    #[error("prefactor inequality violated: {0}")]
    InequalityViolation(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error at {location}: {message}")]
    Config { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            location: location.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Json(_) | Error::InvalidLaw(_) | Error::InvalidPopulation(_) => 2,
            Error::Io(_) => 1,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
