use thiserror::Error;

/// Errors raised by the audit engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuditError {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("no journal entries for department `{0}`")]
    EmptyScope(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cannot construct grid: {0}")]
    CannotConstruct(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("grid of {cells} cells exceeds the enumeration limit of {limit}")]
    GridTooLarge { cells: usize, limit: usize },

    #[error("inconsistent schedule: {0}")]
    Inconsistent(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),
}

pub type Result<T> = std::result::Result<T, AuditError>;
