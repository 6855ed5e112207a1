//! Lease-completeness audit engine.
//!
//! Cash-outflow journals are pooled per department into a payment axis and a
//! counterparty axis. A tabular Q-learning agent walks the resulting grid,
//! hypothesizing (amount, counterparty) leases, repairing bookkeeping errors
//! by exchanging names and amounts, and promoting lease-like series to the
//! lease list. Promoted leases are then classified and measured under IFRS 16.

pub mod agent;
pub mod env;
pub mod error;
pub mod ifrs16;
pub mod journal;
pub mod scenario;
pub mod scoring;

pub use agent::{
    greedy_rollout, q_update, select_action, train, ConvergenceMode, ConvergenceReport,
    LearningParams, QTable, Rollout, TrainingRun,
};
pub use env::{
    default_max_steps, enumerate_assignment_value, Action, EpisodeConfig, GridEnv, GridState,
    Promotion, StepOutcome,
};
pub use error::{AuditError, Result};
pub use ifrs16::{
    build_schedule, classify_candidate, measure_candidate, present_value, weighted_average_period,
    AmortizationSchedule, Category, LeaseCandidate, Measurement, MeasurementParams,
};
pub use journal::{
    build_pools, filter_cash_outflows, parse_journals, Amount, AuditPeriod, CandidatePools,
    JournalEntry, JournalFormat,
};
pub use scenario::{generate, reference_fixtures, GroundTruth, ScenarioSpec};
pub use scoring::{
    coefficient_of_variation, lease_likeness, match_reward, periodicity_score, LeaseLikenessScore,
    MatchLevel, PaymentSeries, RewardParams,
};
