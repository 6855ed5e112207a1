//! Audit stages. Each stage computes all of its artifacts in memory and only
//! then writes them, so a failing stage leaves nothing behind.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use lease_audit_core::agent::{write_curve, CurvePoint};
use lease_audit_core::env::{promotion_reward_sum, write_trace, ExchangeKind};
use lease_audit_core::ifrs16::write_schedule;
use lease_audit_core::journal::{departments, write_journal, write_rejects, ParsedJournal};
use lease_audit_core::scenario::{fixture, generate, GroundTruth};
use lease_audit_core::{
    build_pools, classify_candidate, default_max_steps, filter_cash_outflows, greedy_rollout,
    measure_candidate, parse_journals, train, AuditError, Category, ConvergenceMode, EpisodeConfig,
    JournalEntry, LeaseCandidate, MatchLevel, Measurement, QTable,
};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::AuditConfig;
use crate::error::CliError;

pub const INGEST: &str = "ingest.json";
pub const REJECTS: &str = "rejects.csv";
pub const TRAINING: &str = "training.json";
pub const ROLLOUTS: &str = "rollouts.json";
pub const CANDIDATES: &str = "candidates.json";
pub const MEASUREMENTS: &str = "measurements.json";
pub const REPORT: &str = "report.json";
pub const RUN: &str = "run.json";
pub const JOURNAL: &str = "journal.csv";
pub const GROUND_TRUTH: &str = "ground_truth.json";

/// Files produced by a stage, relative to the output directory.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    fn json<T: Serialize>(&mut self, path: impl Into<PathBuf>, value: &T) {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        self.add(path, bytes);
    }

    pub fn extend(&mut self, other: Artifacts) {
        self.files.extend(other.files);
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.files.iter().map(|(p, _)| p.as_path())
    }

    pub fn get(&self, path: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(p, _)| p == Path::new(path))
            .map(|(_, b)| b.as_slice())
    }

    /// Writes every file under `out`.
    pub fn commit(&self, out: &Path) -> Result<(), CliError> {
        for (rel, bytes) in &self.files {
            let path = out.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)
                    .map_err(|e| CliError::io(format!("creating {}", parent.display()), e))?;
            }
            fs::write(&path, bytes)
                .map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        }
        Ok(())
    }
}

/// File-name-safe form of a department code or counterparty.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn csv_bytes(
    f: impl FnOnce(&mut Vec<u8>) -> lease_audit_core::Result<()>,
) -> Result<Vec<u8>, CliError> {
    let mut out = Vec::new();
    f(&mut out)?;
    Ok(out)
}

fn read_artifact<T: DeserializeOwned>(
    out: &Path,
    name: &str,
    stage: &'static str,
) -> Result<T, CliError> {
    let path = out.join(name);
    let bytes = fs::read(&path).map_err(|_| CliError::MissingArtifact {
        path: path.clone(),
        stage,
    })?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

// ---- generate ----

/// Writes a synthetic journal and its ground truth, from a named fixture or
/// the config's `[scenario]` table.
pub fn generate_stage(
    config: &AuditConfig,
    fixture_name: Option<&str>,
) -> Result<Artifacts, CliError> {
    let mut spec = match fixture_name {
        Some(name) => {
            fixture(name)
                .ok_or_else(|| CliError::Config(vec![format!("unknown fixture `{name}`")]))?
                .spec
        }
        None => config.scenario.clone().ok_or_else(|| {
            CliError::Config(vec!["scenario section is required without --fixture".into()])
        })?,
    };
    if fixture_name.is_none() {
        spec.seed = config.seed;
    }
    let (entries, truth) =
        generate(&spec).map_err(|e| CliError::Config(vec![format!("scenario.{e}")]))?;
    let mut a = Artifacts::default();
    a.add(
        JOURNAL,
        csv_bytes(|out| write_journal(&entries, &config.journal, out))?,
    );
    a.json(GROUND_TRUTH, &truth);
    Ok(a)
}

// ---- ingestion and scope ----

pub fn ingest(config: &AuditConfig, input: &Path) -> Result<ParsedJournal, CliError> {
    let file =
        fs::File::open(input).map_err(|e| CliError::Input(format!("{}: {e}", input.display())))?;
    parse_journals(std::io::BufReader::new(file), &config.journal).map_err(|e| match e {
        AuditError::EmptyInput(_) | AuditError::Format(_) => {
            CliError::Input(format!("{}: {e}", input.display()))
        }
        other => CliError::Audit(other),
    })
}

/// The entries a run audits, with counts of those set aside.
#[derive(Debug, Clone)]
pub struct Scope {
    pub entries: Vec<JournalEntry>,
    pub non_cash: usize,
    pub other_departments: usize,
}

pub fn scope(config: &AuditConfig, parsed: &ParsedJournal, department: Option<&str>) -> Scope {
    let cash = filter_cash_outflows(&parsed.entries, &config.account_prefixes);
    let non_cash = parsed.entries.len() - cash.len();
    let entries: Vec<JournalEntry> = match department {
        Some(d) => cash.iter().filter(|e| e.department == d).cloned().collect(),
        None => cash.clone(),
    };
    Scope {
        other_departments: cash.len() - entries.len(),
        entries,
        non_cash,
    }
}

// ---- train ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub department: String,
    pub seed: u64,
    pub level: MatchLevel,
    pub width: usize,
    pub height: usize,
    pub max_steps: usize,
    pub episodes: usize,
    pub memory_enabled: bool,
    pub mode: ConvergenceMode,
    pub converged_at: Option<usize>,
    pub best_reward: f64,
    pub final_reward: f64,
}

/// What `train` persists for the stages after it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingIndex {
    pub department_filter: Option<String>,
    pub departments: Vec<TrainingSummary>,
}

#[derive(Debug, Clone)]
pub struct TrainedDepartment {
    pub summary: TrainingSummary,
    pub q: QTable,
    pub curve: Vec<CurvePoint>,
}

fn qtable_path(department: &str) -> String {
    format!("training/{}/qtable.json", slug(department))
}

pub fn train_department(
    config: &AuditConfig,
    entries: &[JournalEntry],
    department: &str,
) -> Result<TrainedDepartment, CliError> {
    let pools = build_pools(entries, department)?;
    let (width, height) = pools.dims();
    let max_steps = config
        .episode
        .max_steps
        .unwrap_or_else(|| default_max_steps(width, height));
    let episode = EpisodeConfig {
        level: config.episode.level,
        max_steps,
        reward_params: config.reward,
    };
    let seed = config.department_seed(department);
    let run = train(&pools, &episode, &config.learning, seed)?;
    let report = &run.report;
    Ok(TrainedDepartment {
        summary: TrainingSummary {
            department: department.to_string(),
            seed,
            level: episode.level,
            width,
            height,
            max_steps,
            episodes: config.learning.episodes,
            memory_enabled: config.learning.memory_enabled,
            mode: report.mode,
            converged_at: report.converged_at,
            best_reward: report.best_reward,
            final_reward: report.episode_rewards.last().copied().unwrap_or(0.0),
        },
        q: run.q,
        curve: run.curve,
    })
}

pub struct TrainOutput {
    pub parsed: ParsedJournal,
    pub index: TrainingIndex,
    pub trained: Vec<TrainedDepartment>,
    pub artifacts: Artifacts,
}

pub fn train_stage(
    config: &AuditConfig,
    input: &Path,
    department: Option<&str>,
) -> Result<TrainOutput, CliError> {
    let parsed = ingest(config, input)?;
    let scope = scope(config, &parsed, department);
    let depts = departments(&scope.entries);
    let trained = depts
        .par_iter()
        .map(|d| train_department(config, &scope.entries, d))
        .collect::<Result<Vec<_>, _>>()?;

    let index = TrainingIndex {
        department_filter: department.map(str::to_string),
        departments: trained.iter().map(|t| t.summary.clone()).collect(),
    };
    let mut a = Artifacts::default();
    a.json(INGEST, &parsed);
    a.add(
        REJECTS,
        csv_bytes(|out| write_rejects(&parsed.rejects, out))?,
    );
    a.json(TRAINING, &index);
    for t in &trained {
        let dir = format!("training/{}", slug(&t.summary.department));
        a.json(qtable_path(&t.summary.department), &t.q);
        a.add(
            format!("{dir}/curve.csv"),
            csv_bytes(|out| write_curve(&t.curve, out))?,
        );
    }
    Ok(TrainOutput {
        parsed,
        index,
        trained,
        artifacts: a,
    })
}

// ---- rollout ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartmentRollout {
    pub department: String,
    pub total_reward: f64,
    pub match_reward: f64,
    pub promoted: usize,
    pub unpromoted_entry_ids: Vec<String>,
}

pub struct RolloutOutput {
    pub rollouts: Vec<DepartmentRollout>,
    pub candidates: Vec<LeaseCandidate>,
    pub artifacts: Artifacts,
}

pub fn rollout_stage(
    config: &AuditConfig,
    parsed: &ParsedJournal,
    index: &TrainingIndex,
    tables: &[QTable],
) -> Result<RolloutOutput, CliError> {
    let scope = scope(config, parsed, index.department_filter.as_deref());
    let measurement = config.measurement_params();
    let threshold = config.reward.likeness_threshold;
    let results = index
        .departments
        .par_iter()
        .zip(tables.par_iter())
        .map(|(summary, q)| {
            let pools = build_pools(&scope.entries, &summary.department)?;
            let episode = EpisodeConfig {
                level: summary.level,
                max_steps: summary.max_steps,
                reward_params: config.reward,
            };
            let rollout = greedy_rollout(q, &pools, &episode)?;
            let trace = csv_bytes(|out| write_trace(&rollout.trace, out))?;
            let candidates: Vec<LeaseCandidate> = rollout
                .promotions
                .iter()
                .map(|p| {
                    let mut c = LeaseCandidate::from_promotion(p);
                    c.category = classify_candidate(&c, &measurement, threshold);
                    c
                })
                .collect();
            let summary = DepartmentRollout {
                department: summary.department.clone(),
                total_reward: rollout.total_reward,
                match_reward: promotion_reward_sum(&rollout.promotions),
                promoted: rollout.promotions.len(),
                unpromoted_entry_ids: rollout.unpromoted_entry_ids,
            };
            Ok::<_, CliError>((summary, candidates, trace))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut a = Artifacts::default();
    let mut rollouts = Vec::new();
    let mut candidates = Vec::new();
    for (summary, cands, trace) in results {
        a.add(format!("traces/{}.csv", slug(&summary.department)), trace);
        rollouts.push(summary);
        candidates.extend(cands);
    }
    a.json(ROLLOUTS, &rollouts);
    a.json(CANDIDATES, &candidates);
    Ok(RolloutOutput {
        rollouts,
        candidates,
        artifacts: a,
    })
}

pub fn load_training(out: &Path) -> Result<(ParsedJournal, TrainingIndex, Vec<QTable>), CliError> {
    let parsed: ParsedJournal = read_artifact(out, INGEST, "train")?;
    let index: TrainingIndex = read_artifact(out, TRAINING, "train")?;
    let tables = index
        .departments
        .iter()
        .map(|d| read_artifact(out, &qtable_path(&d.department), "train"))
        .collect::<Result<Vec<QTable>, _>>()?;
    Ok((parsed, index, tables))
}

// ---- measure ----

pub struct MeasureOutput {
    pub measurements: Vec<Measurement>,
    pub artifacts: Artifacts,
}

fn schedule_path(m: &Measurement) -> String {
    format!(
        "schedules/{}_{}.csv",
        slug(&m.department),
        slug(&m.counterparty)
    )
}

pub fn measure_stage(
    config: &AuditConfig,
    candidates: &[LeaseCandidate],
) -> Result<MeasureOutput, CliError> {
    let params = config.measurement_params();
    let mut measurements = Vec::new();
    for c in candidates {
        if let Some(m) = measure_candidate(c, &params)? {
            measurements.push(m);
        }
    }
    let mut a = Artifacts::default();
    for m in &measurements {
        a.add(
            schedule_path(m),
            csv_bytes(|out| write_schedule(&m.schedule, out))?,
        );
    }
    a.json(MEASUREMENTS, &measurements);
    Ok(MeasureOutput {
        measurements,
        artifacts: a,
    })
}

pub fn load_candidates(out: &Path) -> Result<Vec<LeaseCandidate>, CliError> {
    read_artifact(out, CANDIDATES, "rollout")
}

// ---- report ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepartmentSummary {
    pub department: String,
    pub grid: (usize, usize),
    pub episodes: usize,
    pub mode: ConvergenceMode,
    pub converged_at: Option<usize>,
    pub best_reward: f64,
    pub rollout_reward: f64,
    pub promoted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorHypothesis {
    pub department: String,
    pub counterparty: String,
    pub entry_id: String,
    pub kind: ExchangeKind,
    pub booked_counterparty: String,
    pub booked_amount: lease_audit_core::Amount,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSummary {
    pub department: String,
    pub counterparty: String,
    pub periods: usize,
    pub liability: lease_audit_core::Amount,
    pub rou_initial: lease_audit_core::Amount,
    pub weighted_average_period: f64,
    pub total_interest: i64,
    pub schedule: String,
}

/// Where every ingested row ended up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completeness {
    pub total_rows: usize,
    pub rejected_at_parse: usize,
    pub promoted_to_candidate: usize,
    pub examined_not_lease: usize,
    /// Breakdown of `examined_not_lease`.
    pub non_cash_account: usize,
    pub outside_department_scope: usize,
    pub unpromoted: usize,
}

impl Completeness {
    pub fn balanced(&self) -> bool {
        self.rejected_at_parse + self.promoted_to_candidate + self.examined_not_lease
            == self.total_rows
            && self.non_cash_account + self.outside_department_scope + self.unpromoted
                == self.examined_not_lease
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub seed: u64,
    pub config_digest: String,
    pub level: MatchLevel,
    pub departments: Vec<DepartmentSummary>,
    pub candidates: Vec<LeaseCandidate>,
    pub category_counts: Vec<(Category, usize)>,
    pub error_hypotheses: Vec<ErrorHypothesis>,
    pub measurements: Vec<MeasurementSummary>,
    pub completeness: Completeness,
}

/// Wall-clock metadata, kept apart from the deterministic report body.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub tool_version: String,
    pub generated_at: String,
    pub report_digest: String,
}

pub fn completeness(
    config: &AuditConfig,
    parsed: &ParsedJournal,
    department: Option<&str>,
    candidates: &[LeaseCandidate],
) -> Result<Completeness, CliError> {
    let scope = scope(config, parsed, department);
    let in_scope: BTreeSet<&str> = scope.entries.iter().map(|e| e.entry_id.as_str()).collect();
    let mut promoted = BTreeSet::new();
    for id in candidates.iter().flat_map(|c| c.entry_ids.iter()) {
        if !in_scope.contains(id.as_str()) || !promoted.insert(id.as_str()) {
            return Err(AuditError::Inconsistent(format!(
                "entry `{id}` is promoted twice or was never in scope"
            ))
            .into());
        }
    }
    let c = Completeness {
        total_rows: parsed.total_rows,
        rejected_at_parse: parsed.rejects.len(),
        promoted_to_candidate: promoted.len(),
        examined_not_lease: parsed.entries.len() - promoted.len(),
        non_cash_account: scope.non_cash,
        outside_department_scope: scope.other_departments,
        unpromoted: scope.entries.len() - promoted.len(),
    };
    if !c.balanced() {
        return Err(
            AuditError::Inconsistent(format!("completeness does not balance: {c:?}")).into(),
        );
    }
    Ok(c)
}

fn hypotheses(candidates: &[LeaseCandidate], scale: u32) -> Vec<ErrorHypothesis> {
    let mut out = Vec::new();
    for c in candidates {
        for r in &c.reassigned {
            let reason = match r.kind {
                ExchangeKind::Name => format!(
                    "only entry booked to `{}`; same amount as the series and lease-likeness does not drop",
                    r.booked_counterparty
                ),
                ExchangeKind::Amount => format!(
                    "booked at {} against a series averaging {}; series CV {:.4} stays inside the gate",
                    r.booked_amount.to_decimal_string(scale),
                    lease_audit_core::Amount(c.series.mean_amount().round() as i64).to_decimal_string(scale),
                    c.cv
                ),
            };
            out.push(ErrorHypothesis {
                department: c.department.clone(),
                counterparty: c.counterparty.clone(),
                entry_id: r.entry_id.clone(),
                kind: r.kind,
                booked_counterparty: r.booked_counterparty.clone(),
                booked_amount: r.booked_amount,
                reason,
            });
        }
    }
    out
}

pub struct ReportInputs<'a> {
    pub parsed: &'a ParsedJournal,
    pub index: &'a TrainingIndex,
    pub rollouts: &'a [DepartmentRollout],
    pub candidates: &'a [LeaseCandidate],
    pub measurements: &'a [Measurement],
}

pub fn build_report(
    config: &AuditConfig,
    inputs: &ReportInputs<'_>,
) -> Result<AuditReport, CliError> {
    let completeness = completeness(
        config,
        inputs.parsed,
        inputs.index.department_filter.as_deref(),
        inputs.candidates,
    )?;
    let departments = inputs
        .index
        .departments
        .iter()
        .map(|t| {
            let r = inputs
                .rollouts
                .iter()
                .find(|r| r.department == t.department);
            DepartmentSummary {
                department: t.department.clone(),
                grid: (t.width, t.height),
                episodes: t.episodes,
                mode: t.mode,
                converged_at: t.converged_at,
                best_reward: t.best_reward,
                rollout_reward: r.map_or(0.0, |r| r.total_reward),
                promoted: r.map_or(0, |r| r.promoted),
            }
        })
        .collect();
    let mut category_counts: Vec<(Category, usize)> = [
        Category::Recognized,
        Category::ShortTermOrLowValue,
        Category::EndsWithin12MonthsOfTransition,
        Category::NotALease,
    ]
    .into_iter()
    .map(|cat| {
        (
            cat,
            inputs
                .candidates
                .iter()
                .filter(|c| c.category == cat)
                .count(),
        )
    })
    .collect();
    category_counts.retain(|(_, n)| *n > 0);
    let measurements = inputs
        .measurements
        .iter()
        .map(|m| MeasurementSummary {
            department: m.department.clone(),
            counterparty: m.counterparty.clone(),
            periods: m.payments.len(),
            liability: m.liability,
            rou_initial: m.rou_initial,
            weighted_average_period: m.weighted_average_period,
            total_interest: m.schedule.total_interest(),
            schedule: schedule_path(m),
        })
        .collect();
    Ok(AuditReport {
        seed: config.seed,
        config_digest: config.digest(),
        level: config.episode.level,
        departments,
        candidates: inputs.candidates.to_vec(),
        category_counts,
        error_hypotheses: hypotheses(inputs.candidates, config.journal.decimal_scale),
        measurements,
        completeness,
    })
}

pub fn report_artifacts(report: &AuditReport) -> Artifacts {
    use sha2::{Digest, Sha256};
    let mut a = Artifacts::default();
    a.json(REPORT, report);
    let body = a.get(REPORT).expect("just added");
    let info = RunInfo {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        report_digest: Sha256::digest(body)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect(),
    };
    a.json(RUN, &info);
    a
}

/// Everything `report` reads back from earlier stages.
pub type StoredStages = (
    ParsedJournal,
    TrainingIndex,
    Vec<DepartmentRollout>,
    Vec<LeaseCandidate>,
    Vec<Measurement>,
);

pub fn load_report_inputs(out: &Path) -> Result<StoredStages, CliError> {
    let parsed = read_artifact(out, INGEST, "train")?;
    let index = read_artifact(out, TRAINING, "train")?;
    let rollouts = read_artifact(out, ROLLOUTS, "rollout")?;
    let candidates = read_artifact(out, CANDIDATES, "rollout")?;
    let measurements = read_artifact(out, MEASUREMENTS, "measure")?;
    Ok((parsed, index, rollouts, candidates, measurements))
}

// ---- whole run ----

pub struct AuditOutput {
    pub report: AuditReport,
    pub artifacts: Artifacts,
}

/// Every stage in sequence; nothing is written until all succeed.
pub fn run_audit(
    config: &AuditConfig,
    input: &Path,
    department: Option<&str>,
) -> Result<AuditOutput, CliError> {
    config.validate()?;
    let train = train_stage(config, input, department)?;
    let tables: Vec<QTable> = train.trained.iter().map(|t| t.q.clone()).collect();
    let rollout = rollout_stage(config, &train.parsed, &train.index, &tables)?;
    let measure = measure_stage(config, &rollout.candidates)?;
    let report = build_report(
        config,
        &ReportInputs {
            parsed: &train.parsed,
            index: &train.index,
            rollouts: &rollout.rollouts,
            candidates: &rollout.candidates,
            measurements: &measure.measurements,
        },
    )?;
    let mut artifacts = train.artifacts;
    artifacts.extend(rollout.artifacts);
    artifacts.extend(measure.artifacts);
    artifacts.extend(report_artifacts(&report));
    Ok(AuditOutput { report, artifacts })
}

/// Ground truth written by `generate`, for comparing against a report.
pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
