use std::path::PathBuf;

use lease_audit_core::AuditError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Input journal missing, unreadable, empty or malformed.
    #[error("input: {0}")]
    Input(String),

    #[error("config: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A stage ran before the stage that produces its input.
    #[error("missing artifact {}: run `{stage}` first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },

    #[error(transparent)]
    Audit(#[from] AuditError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
            CliError::MissingArtifact { .. } => 4,
            CliError::Audit(_) | CliError::Io { .. } => 1,
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}
