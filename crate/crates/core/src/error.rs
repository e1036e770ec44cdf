use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty bag")]
    EmptyBag,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("embedding distance radicand {radicand:e} is negative beyond tolerance")]
    NegativeRadicand { radicand: f64 },

    #[error("degenerate corpus: {0}")]
    Degenerate(String),

    #[error("matrix is not symmetric positive semidefinite: {0}")]
    NotPsd(String),

    #[error(
        "linear system is numerically singular (condition estimate {condition:e}); \
         consider adding {suggested_jitter:e} to lambda1"
    )]
    IllConditioned { condition: f64, suggested_jitter: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("local fit on subset {subset} failed: {source}")]
    LocalFit {
        subset: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("point at distance {radius} from the feature-map center exceeds its radius {limit}")]
    OutOfRange { radius: f64, limit: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
