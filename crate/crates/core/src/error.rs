use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined distance: polynomial is zero")]
    ZeroPolynomial,

    #[error("operation needs exact rational coefficients")]
    NotExact,

    /// A computation needs more work than its configured budget.
    /// `required_log2` is log2 of the amount needed.
    #[error("{module}: budget exceeded ({what}: need 2^{required_log2:.2}, budget 2^{budget_log2:.2})")]
    Budget {
        module: &'static str,
        what: String,
        required_log2: f64,
        budget_log2: f64,
    },

    #[error("{module}: iteration cap {cap} reached: {detail}")]
    IterationCap {
        module: &'static str,
        cap: u32,
        detail: String,
    },

    #[error("promise violation: {0}")]
    Promise(String),

    #[error("noise moments unavailable: {0}")]
    NoiseMoments(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn budget(module: &'static str, what: impl Into<String>, required: f64, budget: f64) -> Self {
        Error::Budget {
            module,
            what: what.into(),
            required_log2: required.log2(),
            budget_log2: budget.log2(),
        }
    }

    pub fn is_budget(&self) -> bool {
        matches!(self, Error::Budget { .. } | Error::IterationCap { .. })
    }

    /// Name of the module that raised a budget-type error, if any.
    pub fn module(&self) -> Option<&'static str> {
        match self {
            Error::Budget { module, .. } | Error::IterationCap { module, .. } => Some(module),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
