use crate::controller::Protocol;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in `{field}`: expected {expected}, found {found}")]
    Dimension {
        field: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("gain kernel is singular (condition number {condition:e})")]
    SingularGain { condition: f64 },

    #[error("degenerate curvature: {0}")]
    DegenerateCurvature(String),

    #[error("regime not applicable: {0}")]
    RegimeInapplicable(String),

    #[error("operation requires a {expected:?} context")]
    ProtocolMismatch { expected: Protocol },

    #[error("infeasible attack: {0}")]
    InfeasibleAttack(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dimension(field: &'static str, expected: impl ToString, found: impl ToString) -> Error {
    Error::Dimension {
        field,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        field,
        reason: reason.into(),
    }
}
