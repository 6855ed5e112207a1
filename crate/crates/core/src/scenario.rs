//! Seeded synthetic journals with planted leases and injected bookkeeping
//! errors, plus the frozen fixture set the acceptance suite runs on.

use std::collections::{BTreeSet, HashSet};

use chrono::{Months, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::ifrs16::{infer_candidate, Category, MeasurementParams};
use crate::journal::{Amount, AuditPeriod, JournalEntry};
use crate::scoring::{coefficient_of_variation, PaymentSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedLease {
    pub counterparty: String,
    /// Department code; defaults to round-robin over the scenario's departments.
    #[serde(default)]
    pub department: Option<String>,
    pub monthly_amount: Amount,
    pub start: NaiveDate,
    pub term_months: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    WrongName,
    WrongAmount,
    OmittedPayment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorInjection {
    /// Index into `planted_leases`.
    pub lease: usize,
    pub kind: ErrorKind,
    /// Index of the targeted payment among the lease's in-period payments.
    pub position: usize,
    /// Multiplier applied by `WrongAmount`.
    #[serde(default = "default_factor")]
    pub amount_factor: f64,
}

fn default_factor() -> f64 {
    1.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub departments: usize,
    pub planted_leases: Vec<PlantedLease>,
    #[serde(default)]
    pub noise_entries: usize,
    #[serde(default)]
    pub error_injections: Vec<ErrorInjection>,
    pub audit_period: AuditPeriod,
    #[serde(default = "default_account")]
    pub account_code: String,
}

fn default_account() -> String {
    "5110".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedLease {
    pub counterparty: String,
    pub department: String,
    /// Journal entries that truly belong to the lease, misbooked ones included.
    pub entry_ids: Vec<String>,
    pub monthly_amount: Amount,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedError {
    pub counterparty: String,
    pub kind: ErrorKind,
    /// Affected entry; for omissions, the id the payment would have had.
    pub entry_id: String,
    pub booked_counterparty: Option<String>,
    pub booked_amount: Option<Amount>,
    pub corrected_counterparty: String,
    pub corrected_amount: Amount,
    /// Whether the lease series stays inside the CV gate with the error present.
    pub recoverable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub leases: Vec<ExpectedLease>,
    pub errors: Vec<InjectedError>,
}

pub fn department_code(i: usize) -> String {
    format!("D{:02}", i + 1)
}

fn add_months(start: NaiveDate, k: u32) -> NaiveDate {
    start
        .checked_add_months(Months::new(k))
        .unwrap_or(NaiveDate::MAX)
}

fn in_boundary_quarter(period: &AuditPeriod, date: NaiveDate) -> bool {
    let q1_end = add_months(period.start, 3);
    let q4_start = period
        .end
        .checked_sub_months(Months::new(3))
        .unwrap_or(period.start);
    date < q1_end || date > q4_start
}

/// A single-character perturbation of `name` not present in `taken`.
fn name_variant<R: Rng>(name: &str, taken: &HashSet<String>, rng: &mut R) -> String {
    let chars: Vec<char> = name.chars().collect();
    let letters: Vec<usize> = (0..chars.len())
        .filter(|&i| chars[i].is_ascii_alphabetic())
        .collect();
    for _ in 0..64 {
        let mut out = chars.clone();
        if letters.is_empty() {
            out.push('x');
        } else {
            let i = letters[rng.random_range(0..letters.len())];
            let base = if chars[i].is_ascii_uppercase() {
                b'A'
            } else {
                b'a'
            };
            let mut c = (base + rng.random_range(0..26u8)) as char;
            if c == chars[i] {
                c = (base + (c as u8 - base + 1) % 26) as char;
            }
            out[i] = c;
        }
        let candidate: String = out.into_iter().collect();
        if !taken.contains(&candidate) {
            return candidate;
        }
    }
    format!("{name}~")
}

fn noise_name<R: Rng>(rng: &mut R) -> String {
    const SYLLABLES: [&str; 16] = [
        "ka", "lo", "mi", "ra", "to", "ve", "zu", "ne", "pa", "si", "do", "re", "ba", "gu", "fi",
        "ho",
    ];
    let n = rng.random_range(2..4);
    let mut s: String = (0..n)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect();
    s[..1].make_ascii_uppercase();
    format!("{s} Trading")
}

/// Generates a journal and its ground truth; deterministic in `spec.seed`.
pub fn generate(spec: &ScenarioSpec) -> Result<(Vec<JournalEntry>, GroundTruth)> {
    if spec.departments == 0 {
        return Err(AuditError::Scenario("departments must be > 0".into()));
    }
    if spec.audit_period.start > spec.audit_period.end {
        return Err(AuditError::Scenario(
            "audit period ends before it starts".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let period = spec.audit_period;

    // planted payments, per lease, restricted to the audit period
    let mut plans: Vec<Vec<JournalEntry>> = Vec::with_capacity(spec.planted_leases.len());
    for (li, lease) in spec.planted_leases.iter().enumerate() {
        if lease.monthly_amount.0 <= 0 || lease.term_months == 0 {
            return Err(AuditError::Scenario(format!(
                "lease `{}` needs a positive amount and term",
                lease.counterparty
            )));
        }
        let department = lease
            .department
            .clone()
            .unwrap_or_else(|| department_code(li % spec.departments));
        let payments: Vec<JournalEntry> = (0..lease.term_months)
            .map(|k| add_months(lease.start, k))
            .filter(|d| period.contains(*d))
            .enumerate()
            .map(|(k, date)| JournalEntry {
                entry_id: format!("L{li:02}-{k:03}"),
                posting_date: date,
                department: department.clone(),
                account_code: spec.account_code.clone(),
                counterparty: lease.counterparty.clone(),
                amount: lease.monthly_amount,
                memo: None,
            })
            .collect();
        if payments.is_empty() {
            return Err(AuditError::Scenario(format!(
                "lease `{}` has no payments inside the audit period",
                lease.counterparty
            )));
        }
        plans.push(payments);
    }

    let mut taken: HashSet<String> = spec
        .planted_leases
        .iter()
        .map(|l| l.counterparty.clone())
        .collect();
    let mut seen_targets = HashSet::new();
    let mut errors = Vec::new();
    let mut omitted: HashSet<String> = HashSet::new();

    for inj in &spec.error_injections {
        let plan = plans.get_mut(inj.lease).ok_or_else(|| {
            AuditError::Scenario(format!("error targets nonexistent lease {}", inj.lease))
        })?;
        let lease = &spec.planted_leases[inj.lease];
        if inj.position >= plan.len() {
            return Err(AuditError::Scenario(format!(
                "error targets payment {} of lease `{}`, which has {} payments",
                inj.position,
                lease.counterparty,
                plan.len()
            )));
        }
        if !seen_targets.insert((inj.lease, inj.position)) {
            return Err(AuditError::Scenario(format!(
                "payment {} of lease `{}` is targeted twice",
                inj.position, lease.counterparty
            )));
        }
        let entry = &mut plan[inj.position];
        let mut record = InjectedError {
            counterparty: lease.counterparty.clone(),
            kind: inj.kind,
            entry_id: entry.entry_id.clone(),
            booked_counterparty: None,
            booked_amount: None,
            corrected_counterparty: lease.counterparty.clone(),
            corrected_amount: lease.monthly_amount,
            recoverable: true,
        };
        match inj.kind {
            ErrorKind::WrongName => {
                let variant = name_variant(&lease.counterparty, &taken, &mut rng);
                taken.insert(variant.clone());
                entry.counterparty = variant.clone();
                record.booked_counterparty = Some(variant);
            }
            ErrorKind::WrongAmount => {
                if inj.amount_factor.is_nan()
                    || inj.amount_factor <= 0.0
                    || inj.amount_factor == 1.0
                {
                    return Err(AuditError::Scenario(
                        "amount_factor must be positive and not 1".into(),
                    ));
                }
                let wrong =
                    Amount((lease.monthly_amount.as_f64() * inj.amount_factor).round() as i64);
                entry.amount = wrong;
                record.booked_amount = Some(wrong);
            }
            ErrorKind::OmittedPayment => {
                if !in_boundary_quarter(&period, entry.posting_date) {
                    return Err(AuditError::Scenario(format!(
                        "omitted payment {} of lease `{}` is not in the first or last quarter",
                        inj.position, lease.counterparty
                    )));
                }
                omitted.insert(entry.entry_id.clone());
            }
        }
        errors.push(record);
    }

    // recoverability from the series as finally booked
    for err in errors
        .iter_mut()
        .filter(|e| e.kind == ErrorKind::WrongAmount)
    {
        let li = spec
            .planted_leases
            .iter()
            .position(|l| l.counterparty == err.counterparty)
            .unwrap_or(0);
        let amounts: Vec<f64> = plans[li]
            .iter()
            .filter(|e| !omitted.contains(&e.entry_id))
            .map(|e| e.amount.as_f64())
            .collect();
        err.recoverable = coefficient_of_variation(&amounts).is_ok_and(|cv| cv <= 0.7);
    }

    let mut entries: Vec<JournalEntry> = plans
        .iter()
        .flatten()
        .filter(|e| !omitted.contains(&e.entry_id))
        .cloned()
        .collect();

    let planted_amounts: BTreeSet<Amount> = entries.iter().map(|e| e.amount).collect();
    let mut used_amounts = planted_amounts.clone();
    let total_days = (period.end - period.start).num_days().max(0);
    for i in 0..spec.noise_entries {
        let mut name = noise_name(&mut rng);
        while taken.contains(&name) {
            name = format!("{name} {i}");
        }
        taken.insert(name.clone());
        let mut amount = Amount(rng.random_range(1_000..500_000) * 10 + 7);
        while used_amounts.contains(&amount) {
            amount = Amount(amount.0 + 13);
        }
        used_amounts.insert(amount);
        let date = period.start + chrono::Duration::days(rng.random_range(0..=total_days));
        entries.push(JournalEntry {
            entry_id: format!("N{i:04}"),
            posting_date: date,
            department: department_code(rng.random_range(0..spec.departments)),
            account_code: spec.account_code.clone(),
            counterparty: name,
            amount,
            memo: None,
        });
    }
    entries.sort_by(|a, b| (a.posting_date, &a.entry_id).cmp(&(b.posting_date, &b.entry_id)));

    let measurement = MeasurementParams::for_period(&period);
    let mut leases = Vec::new();
    for (li, lease) in spec.planted_leases.iter().enumerate() {
        let true_entries: Vec<&JournalEntry> = plans[li]
            .iter()
            .filter(|e| !omitted.contains(&e.entry_id))
            .collect();
        if true_entries.is_empty() {
            return Err(AuditError::Scenario(format!(
                "every payment of lease `{}` was omitted",
                lease.counterparty
            )));
        }
        let series = PaymentSeries::new(
            lease.counterparty.clone(),
            true_entries
                .iter()
                .map(|e| (e.posting_date, lease.monthly_amount))
                .collect(),
        )?;
        let candidate = infer_candidate(&series, 1.0, 0.0);
        leases.push(ExpectedLease {
            counterparty: lease.counterparty.clone(),
            department: true_entries[0].department.clone(),
            entry_ids: true_entries.iter().map(|e| e.entry_id.clone()).collect(),
            monthly_amount: lease.monthly_amount,
            category: crate::ifrs16::classify_candidate(&candidate, &measurement, 0.5),
        });
    }

    Ok((entries, GroundTruth { leases, errors }))
}

/// A named frozen scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub name: &'static str,
    pub spec: ScenarioSpec,
    pub truth: GroundTruth,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid fixture date")
}

fn lease(name: &str, amount: i64, start: NaiveDate, term: u32) -> PlantedLease {
    PlantedLease {
        counterparty: name.into(),
        department: None,
        monthly_amount: Amount(amount),
        start,
        term_months: term,
    }
}

fn year_2019() -> AuditPeriod {
    AuditPeriod {
        start: date(2019, 1, 1),
        end: date(2019, 12, 31),
    }
}

/// Frozen fixture specs, keyed by name.
pub fn reference_specs() -> Vec<(&'static str, ScenarioSpec)> {
    let y19 = year_2019();
    let three_years = AuditPeriod {
        start: date(2019, 1, 1),
        end: date(2021, 12, 31),
    };
    vec![
        (
            "convergence-5x5",
            ScenarioSpec {
                seed: 5505,
                departments: 1,
                planted_leases: vec![
                    lease("Aster Leasing", 210_000, date(2019, 1, 5), 12),
                    lease("Birch Rentals", 47_500, date(2019, 1, 10), 12),
                    lease("Cedar Property", 85_000, date(2019, 2, 1), 11),
                    lease("Dune Equipment", 120_000, date(2019, 1, 20), 12),
                    lease("Elm Offices", 156_000, date(2019, 1, 15), 12),
                ],
                noise_entries: 0,
                error_injections: vec![],
                audit_period: y19,
                account_code: default_account(),
            },
        ),
        (
            "oracle-single-1x1",
            ScenarioSpec {
                seed: 11,
                departments: 1,
                planted_leases: vec![lease("Fjord Storage", 30_000, date(2019, 1, 3), 12)],
                noise_entries: 0,
                error_injections: vec![],
                audit_period: y19,
                account_code: default_account(),
            },
        ),
        (
            "oracle-disjoint-2x2",
            ScenarioSpec {
                seed: 22,
                departments: 1,
                planted_leases: vec![
                    lease("Gale Motors", 64_000, date(2019, 1, 8), 12),
                    lease("Harbor Depot", 91_000, date(2019, 3, 8), 10),
                ],
                noise_entries: 0,
                error_injections: vec![],
                audit_period: y19,
                account_code: default_account(),
            },
        ),
        (
            "oracle-noise-3x3",
            ScenarioSpec {
                seed: 33,
                departments: 1,
                planted_leases: vec![lease("Iris Copiers", 12_500, date(2019, 2, 14), 9)],
                noise_entries: 2,
                error_injections: vec![],
                audit_period: y19,
                account_code: default_account(),
            },
        ),
        (
            "oracle-wrong-name-3x4",
            ScenarioSpec {
                seed: 44,
                departments: 1,
                planted_leases: vec![
                    lease("Juniper Lots", 40_000, date(2019, 1, 25), 12),
                    lease("Kestrel Cranes", 275_000, date(2019, 4, 1), 6),
                ],
                noise_entries: 1,
                error_injections: vec![ErrorInjection {
                    lease: 0,
                    kind: ErrorKind::WrongName,
                    position: 5,
                    amount_factor: default_factor(),
                }],
                audit_period: y19,
                account_code: default_account(),
            },
        ),
        (
            "oracle-mixed-4x4",
            ScenarioSpec {
                seed: 55,
                departments: 1,
                planted_leases: vec![
                    lease("Linden Yard", 99_000, date(2019, 9, 2), 24),
                    lease("Maple Vans", 18_000, date(2019, 1, 2), 12),
                    lease("Nettle Servers", 52_000, date(2018, 7, 2), 12),
                ],
                noise_entries: 1,
                error_injections: vec![],
                audit_period: y19,
                account_code: default_account(),
            },
        ),
        (
            "recovery-mixed",
            ScenarioSpec {
                seed: 66,
                departments: 2,
                planted_leases: vec![
                    lease("Oak Towers", 250_000, date(2019, 1, 10), 36),
                    lease("Pine Forklifts", 62_000, date(2019, 1, 12), 24),
                    lease("Quartz Storage", 33_000, date(2019, 1, 18), 30),
                    lease("Rowan Printers", 9_000, date(2019, 2, 1), 10),
                ],
                noise_entries: 6,
                error_injections: vec![
                    ErrorInjection {
                        lease: 0,
                        kind: ErrorKind::WrongName,
                        position: 7,
                        amount_factor: default_factor(),
                    },
                    ErrorInjection {
                        lease: 1,
                        kind: ErrorKind::WrongAmount,
                        position: 4,
                        amount_factor: 1.5,
                    },
                ],
                audit_period: three_years,
                account_code: default_account(),
            },
        ),
        (
            "boundary-omission",
            ScenarioSpec {
                seed: 77,
                departments: 1,
                planted_leases: vec![
                    lease("Sable Cabins", 70_000, date(2019, 1, 28), 12),
                    lease("Teak Modules", 143_000, date(2019, 10, 1), 24),
                ],
                noise_entries: 3,
                error_injections: vec![ErrorInjection {
                    lease: 0,
                    kind: ErrorKind::OmittedPayment,
                    position: 0,
                    amount_factor: default_factor(),
                }],
                audit_period: y19,
                account_code: default_account(),
            },
        ),
    ]
}

/// The frozen fixtures with their generated ground truth.
pub fn reference_fixtures() -> Vec<Fixture> {
    reference_specs()
        .into_iter()
        .map(|(name, spec)| {
            let (_, truth) = generate(&spec).expect("reference fixtures are valid");
            Fixture { name, spec, truth }
        })
        .collect()
}

pub fn fixture(name: &str) -> Option<Fixture> {
    reference_fixtures().into_iter().find(|f| f.name == name)
}

/// Shuffles a copy of `entries` with a seeded generator; useful for order
/// independence checks.
pub fn shuffled(entries: &[JournalEntry], seed: u64) -> Vec<JournalEntry> {
    let mut out = entries.to_vec();
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    out
}
