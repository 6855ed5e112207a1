//! IFRS 16 classification and measurement of discovered leases.

use std::io::Write;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::env::{Promotion, Reassignment};
use crate::error::{AuditError, Result};
use crate::journal::{Amount, AuditPeriod};
use crate::scoring::PaymentSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    /// Carried as a lease liability and right-of-use asset.
    Recognized,
    /// Disclosed only: short-term or low-value.
    ShortTermOrLowValue,
    /// Disclosed only: finishes within 12 months of transition.
    EndsWithin12MonthsOfTransition,
    NotALease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaseCandidate {
    pub department: String,
    pub counterparty: String,
    pub series: PaymentSeries,
    pub entry_ids: Vec<String>,
    #[serde(default)]
    pub reassigned: Vec<Reassignment>,
    pub inferred_term_months: u32,
    /// Mean payment times the inferred term.
    pub inferred_value: Amount,
    pub category: Category,
    pub cv: f64,
    pub likeness: f64,
}

impl LeaseCandidate {
    /// Day before the inferred term runs out.
    pub fn end_date(&self) -> NaiveDate {
        self.series
            .first_date()
            .checked_add_months(Months::new(self.inferred_term_months))
            .and_then(|d| d.pred_opt())
            .unwrap_or(NaiveDate::MAX)
    }

    pub fn from_promotion(p: &Promotion) -> Self {
        let mut c = infer_candidate(&p.series, p.likeness.score, p.likeness.cv);
        c.department = p.department.clone();
        c.entry_ids = p.entry_ids.clone();
        c.reassigned = p.reassigned.clone();
        c
    }
}

/// Term and value inferred from an observed series: the term spans the first
/// to the last payment month inclusive. Category starts as `NotALease` until
/// classified.
pub fn infer_candidate(series: &PaymentSeries, likeness: f64, cv: f64) -> LeaseCandidate {
    let (first, last) = (series.first_date(), series.last_date());
    let months = (last.year() - first.year()) * 12 + last.month() as i32 - first.month() as i32;
    let term = (months.max(0) + 1) as u32;
    let value = round_half_up(series.mean_amount() * f64::from(term));
    LeaseCandidate {
        department: String::new(),
        counterparty: series.counterparty.clone(),
        series: series.clone(),
        entry_ids: Vec::new(),
        reassigned: Vec::new(),
        inferred_term_months: term,
        inferred_value: Amount(value),
        category: Category::NotALease,
        cv,
        likeness,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasurementParams {
    /// Incremental borrowing rate per period; supplied, never derived.
    pub discount_rate_per_period: f64,
    pub transition_date: NaiveDate,
    pub short_term_months: u32,
    pub low_value_threshold: Amount,
}

impl Default for MeasurementParams {
    fn default() -> Self {
        Self {
            discount_rate_per_period: 0.004,
            transition_date: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            short_term_months: 12,
            low_value_threshold: Amount(500_000),
        }
    }
}

impl MeasurementParams {
    /// Defaults with the transition at the start of `period`.
    pub fn for_period(period: &AuditPeriod) -> Self {
        Self {
            transition_date: period.start,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.discount_rate_per_period > -1.0 && self.discount_rate_per_period.is_finite()) {
            problems.push("discount_rate_per_period must be > -1");
        }
        if self.short_term_months == 0 {
            problems.push("short_term_months must be > 0");
        }
        if self.low_value_threshold.0 <= 0 {
            problems.push("low_value_threshold must be > 0");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(AuditError::Domain(problems.join("; ")))
        }
    }
}

/// Assigns one of the four categories. Checked in order: not a lease, ends
/// within 12 months of transition, short-term or low-value, recognized.
pub fn classify_candidate(
    c: &LeaseCandidate,
    p: &MeasurementParams,
    likeness_threshold: f64,
) -> Category {
    if c.likeness < likeness_threshold || c.series.len() < 2 {
        return Category::NotALease;
    }
    let horizon = p
        .transition_date
        .checked_add_months(Months::new(12))
        .unwrap_or(NaiveDate::MAX);
    if c.end_date() <= horizon {
        return Category::EndsWithin12MonthsOfTransition;
    }
    if c.inferred_term_months <= p.short_term_months || c.inferred_value <= p.low_value_threshold {
        return Category::ShortTermOrLowValue;
    }
    Category::Recognized
}

pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > -1.0 && rate.is_finite() {
        Ok(())
    } else {
        Err(AuditError::Domain(format!(
            "discount rate {rate} must be > -1"
        )))
    }
}

/// `sum(amount_k / (1 + rate)^period_k)`, rounded half-up to minor units.
pub fn present_value(payments: &[(u32, Amount)], rate: f64) -> Result<Amount> {
    check_rate(rate)?;
    if payments.is_empty() {
        return Err(AuditError::Domain("present value of no payments".into()));
    }
    let pv: f64 = payments
        .iter()
        .map(|&(k, a)| a.as_f64() / (1.0 + rate).powi(k as i32))
        .sum();
    Ok(Amount(round_half_up(pv)))
}

/// `sum(period * amount) / sum(amount)`.
pub fn weighted_average_period(payments: &[(u32, Amount)]) -> Result<f64> {
    if payments.is_empty() || payments.iter().any(|(_, a)| a.0 <= 0) {
        return Err(AuditError::Domain(
            "weighted average period needs positive payments".into(),
        ));
    }
    let total: f64 = payments.iter().map(|(_, a)| a.as_f64()).sum();
    let weighted: f64 = payments
        .iter()
        .map(|&(k, a)| f64::from(k) * a.as_f64())
        .sum();
    Ok(weighted / total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmortizationRow {
    pub period: u32,
    pub opening_liability: Amount,
    pub interest: Amount,
    pub payment: Amount,
    pub closing_liability: Amount,
    pub rou_depreciation: Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmortizationSchedule {
    pub rows: Vec<AmortizationRow>,
}

impl AmortizationSchedule {
    pub fn total_interest(&self) -> i64 {
        self.rows.iter().map(|r| r.interest.0).sum()
    }

    pub fn total_payments(&self) -> i64 {
        self.rows.iter().map(|r| r.payment.0).sum()
    }

    pub fn total_depreciation(&self) -> i64 {
        self.rows.iter().map(|r| r.rou_depreciation.0).sum()
    }
}

/// Liability roll-forward with straight-line right-of-use depreciation.
///
/// Interest is the opening balance times the rate compounded over the gap
/// since the previous payment, rounded half-up. The final row's interest
/// absorbs the rounding residue so the liability closes at exactly zero; the
/// final depreciation row likewise absorbs the straight-line residue.
pub fn build_schedule(
    liability: Amount,
    payments: &[(u32, Amount)],
    rate: f64,
    rou_initial: Amount,
) -> Result<AmortizationSchedule> {
    let pv = present_value(payments, rate)?;
    if (pv.0 - liability.0).abs() > 1 {
        return Err(AuditError::Inconsistent(format!(
            "liability {liability} differs from the present value {pv} of the payments"
        )));
    }
    if payments.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(AuditError::Inconsistent(
            "payment periods must be strictly increasing".into(),
        ));
    }

    let n = payments.len();
    let straight = round_half_up(rou_initial.as_f64() / n as f64);
    let mut rows = Vec::with_capacity(n);
    let mut opening = liability.0;
    let mut previous_period = 0u32;
    let mut depreciated = 0i64;
    for (i, &(period, payment)) in payments.iter().enumerate() {
        let last = i + 1 == n;
        let gap = period - previous_period;
        let interest = if last {
            payment.0 - opening
        } else {
            round_half_up(opening as f64 * ((1.0 + rate).powi(gap as i32) - 1.0))
        };
        let closing = opening + interest - payment.0;
        let depreciation = if last {
            rou_initial.0 - depreciated
        } else {
            straight
        };
        depreciated += depreciation;
        rows.push(AmortizationRow {
            period,
            opening_liability: Amount(opening),
            interest: Amount(interest),
            payment,
            closing_liability: Amount(closing),
            rou_depreciation: Amount(depreciation),
        });
        opening = closing;
        previous_period = period;
    }
    Ok(AmortizationSchedule { rows })
}

/// Initial measurement of a recognized lease.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub counterparty: String,
    pub department: String,
    pub category: Category,
    pub rate_per_period: f64,
    /// Payments on or after transition, as (period, amount).
    pub payments: Vec<(u32, Amount)>,
    pub liability: Amount,
    pub rou_initial: Amount,
    pub weighted_average_period: f64,
    pub schedule: AmortizationSchedule,
}

/// Measures a recognized candidate at transition: payments dated on or after
/// the transition date become periods 1..n in date order. Returns `None` for
/// other categories or when nothing remains to be paid.
pub fn measure_candidate(c: &LeaseCandidate, p: &MeasurementParams) -> Result<Option<Measurement>> {
    if c.category != Category::Recognized {
        return Ok(None);
    }
    let payments: Vec<(u32, Amount)> = c
        .series
        .payments
        .iter()
        .filter(|(d, _)| *d >= p.transition_date)
        .enumerate()
        .map(|(k, &(_, a))| (k as u32 + 1, a))
        .collect();
    if payments.is_empty() {
        return Ok(None);
    }
    let liability = present_value(&payments, p.discount_rate_per_period)?;
    let schedule = build_schedule(liability, &payments, p.discount_rate_per_period, liability)?;
    Ok(Some(Measurement {
        counterparty: c.counterparty.clone(),
        department: c.department.clone(),
        category: c.category,
        rate_per_period: p.discount_rate_per_period,
        weighted_average_period: weighted_average_period(&payments)?,
        payments,
        liability,
        rou_initial: liability,
        schedule,
    }))
}

/// Writes a schedule as delimited text, one row per period.
pub fn write_schedule<W: Write>(schedule: &AmortizationSchedule, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| AuditError::Format(e.to_string());
    writer
        .write_record([
            "period",
            "opening_liability",
            "interest",
            "payment",
            "closing_liability",
            "rou_depreciation",
        ])
        .map_err(io)?;
    for r in &schedule.rows {
        writer
            .write_record([
                r.period.to_string(),
                r.opening_liability.to_string(),
                r.interest.to_string(),
                r.payment.to_string(),
                r.closing_liability.to_string(),
                r.rou_depreciation.to_string(),
            ])
            .map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| AuditError::Format(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn monthly_series(start: NaiveDate, n: u32, amount: i64) -> PaymentSeries {
        PaymentSeries::new(
            "Acme",
            (0..n)
                .map(|k| {
                    (
                        start.checked_add_months(Months::new(k)).unwrap(),
                        Amount(amount),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    fn level(n: u32, amount: i64) -> Vec<(u32, Amount)> {
        (1..=n).map(|k| (k, Amount(amount))).collect()
    }

    fn annuity_oracle(payment: f64, rate: f64, n: i32) -> f64 {
        payment * (1.0 - (1.0 + rate).powi(-n)) / rate
    }

    #[test]
    fn classification_examples() {
        let p = MeasurementParams::default();
        let recognized = infer_candidate(&monthly_series(d(2019, 1, 10), 36, 250_000), 0.9, 0.0);
        assert_eq!(recognized.inferred_term_months, 36);
        assert_eq!(recognized.end_date(), d(2022, 1, 9));
        assert_eq!(
            classify_candidate(&recognized, &p, 0.5),
            Category::Recognized
        );

        let short = infer_candidate(&monthly_series(d(2019, 3, 1), 10, 250_000), 0.9, 0.0);
        // ends 2019-12-31, inside the horizon, so the end-date rule wins
        assert_eq!(
            classify_candidate(&short, &p, 0.5),
            Category::EndsWithin12MonthsOfTransition
        );
        let short_late = infer_candidate(&monthly_series(d(2019, 6, 1), 10, 250_000), 0.9, 0.0);
        assert_eq!(
            classify_candidate(&short_late, &p, 0.5),
            Category::ShortTermOrLowValue
        );

        let ends_mid = infer_candidate(&monthly_series(d(2019, 1, 1), 6, 250_000), 0.9, 0.0);
        assert_eq!(ends_mid.end_date(), d(2019, 6, 30));
        assert_eq!(
            classify_candidate(&ends_mid, &p, 0.5),
            Category::EndsWithin12MonthsOfTransition
        );

        let low_value = infer_candidate(&monthly_series(d(2019, 6, 1), 24, 1_000), 0.9, 0.0);
        assert_eq!(
            classify_candidate(&low_value, &p, 0.5),
            Category::ShortTermOrLowValue
        );

        let weak = infer_candidate(&monthly_series(d(2019, 1, 10), 36, 250_000), 0.2, 0.0);
        assert_eq!(classify_candidate(&weak, &p, 0.5), Category::NotALease);
    }

    #[test]
    fn present_value_examples() {
        assert_eq!(present_value(&level(3, 100), 0.0).unwrap(), Amount(300));
        let oracle = annuity_oracle(10_000.0, 0.01, 12);
        let pv = present_value(&level(12, 10_000), 0.01).unwrap();
        assert!((pv.as_f64() - oracle).abs() <= 1.0, "{pv} vs {oracle}");
        assert_eq!(pv, Amount(112_551));
        assert_eq!(present_value(&[(1, Amount(100))], 1.0).unwrap(), Amount(50));
        assert!(present_value(&[], 0.1).is_err());
        assert!(present_value(&level(1, 1), -1.0).is_err());
    }

    #[test]
    fn zero_rate_schedule_is_a_plain_ledger() {
        let s = build_schedule(Amount(300), &level(3, 100), 0.0, Amount(300)).unwrap();
        let closings: Vec<i64> = s.rows.iter().map(|r| r.closing_liability.0).collect();
        assert_eq!(closings, [200, 100, 0]);
        assert!(s.rows.iter().all(|r| r.interest.0 == 0));
    }

    #[test]
    fn annuity_schedule_closes_at_zero() {
        let payments = level(12, 10_000);
        let pv = present_value(&payments, 0.01).unwrap();
        let s = build_schedule(pv, &payments, 0.01, pv).unwrap();
        let last = s.rows.last().unwrap();
        assert!(last.closing_liability.0.abs() <= 1);
        // every row but the last follows opening * rate, rounded half-up
        for r in &s.rows[..11] {
            assert_eq!(
                r.interest.0,
                round_half_up(r.opening_liability.as_f64() * 0.01)
            );
        }
        let plain = round_half_up(last.opening_liability.as_f64() * 0.01);
        assert!((last.interest.0 - plain).abs() <= 12);
        assert_eq!(s.total_payments() - s.total_interest(), pv.0);
        assert_eq!(s.total_depreciation(), pv.0);
    }

    #[test]
    fn depreciation_residue_goes_to_the_last_row() {
        let payments = level(3, 100);
        let s = build_schedule(Amount(300), &payments, 0.0, Amount(100_001)).unwrap();
        let dep: Vec<i64> = s.rows.iter().map(|r| r.rou_depreciation.0).collect();
        assert_eq!(dep, [33_334, 33_334, 33_333]);
    }

    #[test]
    fn inconsistent_liability_is_refused() {
        assert!(matches!(
            build_schedule(Amount(290), &level(3, 100), 0.0, Amount(290)),
            Err(AuditError::Inconsistent(_))
        ));
    }

    #[test]
    fn gapped_periods_compound_interest() {
        let payments = vec![(1, Amount(1000)), (3, Amount(1000))];
        let pv = present_value(&payments, 0.1).unwrap();
        let s = build_schedule(pv, &payments, 0.1, pv).unwrap();
        assert_eq!(s.rows[1].closing_liability, Amount(0));
        // 1000/1.1 + 1000/1.331 = 909.09 + 751.31
        assert_eq!(pv, Amount(1660));
    }

    #[test]
    fn weighted_average_period_examples() {
        assert_eq!(weighted_average_period(&[(5, Amount(7))]).unwrap(), 5.0);
        assert_eq!(weighted_average_period(&level(12, 10)).unwrap(), 6.5);
        // (1*100 + 4*300) / 400
        assert_eq!(
            weighted_average_period(&[(1, Amount(100)), (4, Amount(300))]).unwrap(),
            3.25
        );
    }

    #[test]
    fn measure_only_recognized_leases() {
        let p = MeasurementParams::default();
        let mut c = infer_candidate(&monthly_series(d(2018, 10, 10), 36, 250_000), 0.9, 0.0);
        c.category = classify_candidate(&c, &p, 0.5);
        let m = measure_candidate(&c, &p).unwrap().unwrap();
        // three payments fall before transition
        assert_eq!(m.payments.len(), 33);
        assert_eq!(m.schedule.rows.last().unwrap().closing_liability, Amount(0));

        c.category = Category::ShortTermOrLowValue;
        assert!(measure_candidate(&c, &p).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn pv_strictly_decreases_with_rate(amounts in prop::collection::vec(1_000i64..1_000_000, 1..24), r in 0.0f64..0.2) {
            let payments: Vec<(u32, Amount)> = amounts.iter().enumerate().map(|(i, &a)| (i as u32 + 1, Amount(a))).collect();
            let lo = present_value(&payments, r).unwrap();
            let hi = present_value(&payments, r + 0.01).unwrap();
            prop_assert!(hi < lo);
        }

        #[test]
        fn schedule_telescopes(amounts in prop::collection::vec(1i64..1_000_000, 1..36), r in 0.0f64..0.05) {
            let payments: Vec<(u32, Amount)> = amounts.iter().enumerate().map(|(i, &a)| (i as u32 + 1, Amount(a))).collect();
            let pv = present_value(&payments, r).unwrap();
            let s = build_schedule(pv, &payments, r, pv).unwrap();
            prop_assert_eq!(s.rows.last().unwrap().closing_liability, Amount(0));
            prop_assert_eq!(s.total_payments() - s.total_interest(), pv.0);
            prop_assert_eq!(s.total_depreciation(), pv.0);
            for w in s.rows.windows(2) {
                prop_assert_eq!(w[0].closing_liability, w[1].opening_liability);
            }
        }

        #[test]
        fn zero_rate_reproduces_ledger(amounts in prop::collection::vec(1i64..1_000_000, 1..24)) {
            let payments: Vec<(u32, Amount)> = amounts.iter().enumerate().map(|(i, &a)| (i as u32 + 1, Amount(a))).collect();
            let total: i64 = amounts.iter().sum();
            let s = build_schedule(Amount(total), &payments, 0.0, Amount(total)).unwrap();
            let mut balance = total;
            for (row, a) in s.rows.iter().zip(&amounts) {
                prop_assert_eq!(row.opening_liability.0, balance);
                prop_assert_eq!(row.interest.0, 0);
                balance -= a;
                prop_assert_eq!(row.closing_liability.0, balance);
            }
        }
    }
}
