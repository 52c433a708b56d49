use thiserror::Error;

/// Errors raised by the numerical routines.
///
/// The variants map onto the CLI exit codes: `InvalidArgument` is a usage
/// error, `PrecisionLoss`/`UnderResolution`/`GridDegeneracy` mean the
/// discretization could not deliver the requested accuracy.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precision loss in {check}: {detail}")]
    PrecisionLoss { check: String, detail: String },

    #[error("grid degeneracy: {0}")]
    GridDegeneracy(String),

    #[error("under-resolution: {0}")]
    UnderResolution(String),

    #[error("cost guard: {0}")]
    CostGuard(String),

    #[error("singular matrix: zero pivot in column {0}")]
    Singular(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn precision(check: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::PrecisionLoss {
            check: check.into(),
            detail: detail.into(),
        }
    }

    /// True for failures that signal the numerics, not the input, are at fault.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::PrecisionLoss { .. }
                | Error::UnderResolution(_)
                | Error::GridDegeneracy(_)
                | Error::Singular(_)
                | Error::Domain(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
