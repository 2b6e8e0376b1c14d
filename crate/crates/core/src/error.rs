use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite{0}")]
    NotPositiveDefinite(String),

    #[error("diagonal entry {index} of a correlation matrix is {value}, not 1")]
    NotUnitDiagonal { index: usize, value: f64 },

    #[error("triangular factor has a zero diagonal entry at {0}")]
    ZeroDiagonal(usize),

    #[error("log of zero at coordinate {0}")]
    LogOfZero(usize),

    #[error("division by zero at coordinate {0}")]
    DivByZero(usize),

    #[error("concentration {value} at row {row}, coordinate {col} is not positive")]
    NonPositiveAlpha { row: usize, col: usize, value: f64 },

    #[error("row {row} has norm {norm}, expected 1")]
    RowNotUnitNorm { row: usize, norm: f64 },

    #[error("scale parameter must be positive, got {0}")]
    NonPositiveGamma(f64),

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("slice stepping-out exceeded {0} steps")]
    MaxStepoutExceeded(usize),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid point on sphere: {0}")]
    InvalidSpherePoint(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn pd(context: impl Into<String>) -> Self {
        let c = context.into();
        if c.is_empty() {
            Error::NotPositiveDefinite(String::new())
        } else {
            Error::NotPositiveDefinite(format!(" ({c})"))
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
