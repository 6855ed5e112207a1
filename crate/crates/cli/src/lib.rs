//! Batch orchestration for the lease-completeness audit: configuration,
//! stage artifacts and the report.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{AuditConfig, Overrides};
pub use error::CliError;
pub use pipeline::{run_audit, AuditReport, Completeness};
