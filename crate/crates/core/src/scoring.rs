//! Lease-likeness scoring and the match reward paid to the grid agent.
//!
//! A counterparty's payment series is lease-like when it recurs, arrives on a
//! regular cadence, and keeps an even amount. Evenness is measured by the
//! coefficient of variation (population standard deviation over mean) and
//! gated at `cv_max`; a two-payment series with a 5x gap sits at 0.667, just
//! inside the default gate of 0.7.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::journal::Amount;

/// Which bookkeeping-error hypotheses a grid episode may form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum MatchLevel {
    /// Level 1: counterparty names may be exchanged, amounts must match exactly.
    Regular,
    /// Level 2: both names and amounts may be exchanged, discounted by CV.
    Exchange,
}

impl TryFrom<u8> for MatchLevel {
    type Error = AuditError;

    fn try_from(level: u8) -> Result<Self> {
        match level {
            1 => Ok(Self::Regular),
            2 => Ok(Self::Exchange),
            other => Err(AuditError::Domain(format!(
                "match level must be 1 or 2, got {other}"
            ))),
        }
    }
}

impl From<MatchLevel> for u8 {
    fn from(level: MatchLevel) -> u8 {
        match level {
            MatchLevel::Regular => 1,
            MatchLevel::Exchange => 2,
        }
    }
}

/// Dated payments to one counterparty, sorted by date.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaymentSeries {
    pub counterparty: String,
    pub payments: Vec<(NaiveDate, Amount)>,
}

impl PaymentSeries {
    pub fn new(
        counterparty: impl Into<String>,
        mut payments: Vec<(NaiveDate, Amount)>,
    ) -> Result<Self> {
        if payments.is_empty() {
            return Err(AuditError::Domain("payment series is empty".into()));
        }
        if payments.iter().any(|(_, a)| a.0 <= 0) {
            return Err(AuditError::Domain(
                "payment series amounts must be positive".into(),
            ));
        }
        payments.sort();
        Ok(Self {
            counterparty: counterparty.into(),
            payments,
        })
    }

    pub fn len(&self) -> usize {
        self.payments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payments.is_empty()
    }

    pub fn amounts(&self) -> Vec<f64> {
        self.payments.iter().map(|(_, a)| a.as_f64()).collect()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.payments.iter().map(|(d, _)| *d).collect()
    }

    pub fn first_date(&self) -> NaiveDate {
        self.payments[0].0
    }

    pub fn last_date(&self) -> NaiveDate {
        self.payments[self.payments.len() - 1].0
    }

    pub fn total(&self) -> Amount {
        Amount(self.payments.iter().map(|(_, a)| a.0).sum())
    }

    /// Arithmetic mean amount in minor units.
    pub fn mean_amount(&self) -> f64 {
        self.amounts().iter().sum::<f64>() / self.len() as f64
    }

    pub fn cv(&self) -> f64 {
        // amounts are validated positive and nonempty at construction
        coefficient_of_variation(&self.amounts()).unwrap_or(0.0)
    }
}

/// Numeric lease-likeness of a series and its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaseLikenessScore {
    pub score: f64,
    pub cv: f64,
    pub periodicity: f64,
    pub occurrence_count: usize,
}

/// Reward shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    /// Undiscounted reward for a level-1 match.
    pub base_reward: f64,
    pub cv_max: f64,
    /// Reward for every movement on the grid.
    pub step_penalty: f64,
    /// Minimum lease-likeness for promotion to the lease list.
    pub likeness_threshold: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            base_reward: 1.0,
            cv_max: 0.7,
            step_penalty: -0.001,
            likeness_threshold: 0.5,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.base_reward > 0.0 && self.base_reward.is_finite()) {
            problems.push("base_reward must be > 0");
        }
        if !(self.cv_max > 0.0 && self.cv_max.is_finite()) {
            problems.push("cv_max must be > 0");
        }
        if !(self.step_penalty < 0.0 && self.step_penalty.is_finite()) {
            problems.push("step_penalty must be < 0");
        }
        if !(self.likeness_threshold > 0.0 && self.likeness_threshold <= 1.0) {
            problems.push("likeness_threshold must be in (0, 1]");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(AuditError::Domain(problems.join("; ")))
        }
    }
}

/// Population standard deviation divided by the arithmetic mean.
pub fn coefficient_of_variation(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(AuditError::Domain(
            "coefficient of variation of an empty list".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(AuditError::Domain(
            "coefficient of variation needs positive finite values".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(variance.sqrt() / mean)
}

/// Regularity of payment dates, `1 / (1 + CV of the day gaps)`.
///
/// Fewer than three dates carry no gap variance and score 1. Dates that all
/// fall on one day score 0.
pub fn periodicity_score(dates: &[NaiveDate]) -> f64 {
    if dates.len() < 3 {
        return 1.0;
    }
    let gaps: Vec<f64> = dates
        .windows(2)
        .map(|w| (w[1] - w[0]).num_days().max(0) as f64)
        .collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    if mean <= 0.0 {
        return 0.0;
    }
    let sd = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n).sqrt();
    1.0 / (1.0 + sd / mean)
}

pub fn lease_likeness(series: &PaymentSeries, params: &RewardParams) -> LeaseLikenessScore {
    let occurrence_count = series.len();
    let cv = series.cv();
    let periodicity = periodicity_score(&series.dates());
    let score = if occurrence_count < 2 || cv > params.cv_max {
        0.0
    } else {
        (periodicity * (1.0 - cv / params.cv_max)).clamp(0.0, 1.0)
    };
    LeaseLikenessScore {
        score,
        cv,
        periodicity,
        occurrence_count,
    }
}

/// Reward for committing `series` as a lease at the given matching level.
///
/// Level 1 pays the undiscounted base reward; level 2 discounts it linearly
/// in the series CV and pays nothing past `cv_max`.
pub fn match_reward(series: &PaymentSeries, level: MatchLevel, params: &RewardParams) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    match level {
        MatchLevel::Regular => params.base_reward,
        MatchLevel::Exchange => cv_discounted_reward(series.cv(), params),
    }
}

/// `base_reward * (1 - cv / cv_max)` inside the gate, 0 outside it.
pub fn cv_discounted_reward(cv: f64, params: &RewardParams) -> f64 {
    if cv > params.cv_max {
        0.0
    } else {
        params.base_reward * (1.0 - cv / params.cv_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn series(amounts: &[i64], dates: &[NaiveDate]) -> PaymentSeries {
        PaymentSeries::new(
            "Acme",
            dates
                .iter()
                .copied()
                .zip(amounts.iter().map(|&a| Amount(a)))
                .collect(),
        )
        .unwrap()
    }

    fn monthly(n: u32) -> Vec<NaiveDate> {
        (0..n).map(|i| d(2019, 1 + i, 1)).collect()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn cv_examples() {
        assert_eq!(
            coefficient_of_variation(&[100.0, 100.0, 100.0]).unwrap(),
            0.0
        );
        // mean 3, deviations +-2
        assert_abs_diff_eq!(
            coefficient_of_variation(&[1.0, 5.0]).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            coefficient_of_variation(&[1.0, 5.0]).unwrap(),
            0.6667,
            epsilon = 1e-4
        );
        // mean 200, variance (1e4 + 1e4 + 4e4) / 3
        assert_abs_diff_eq!(
            coefficient_of_variation(&[100.0, 100.0, 400.0]).unwrap(),
            20000f64.sqrt() / 200.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            coefficient_of_variation(&[100.0, 100.0, 400.0]).unwrap(),
            0.7071,
            epsilon = 1e-4
        );
        assert_eq!(coefficient_of_variation(&[42.0]).unwrap(), 0.0);
        assert!(coefficient_of_variation(&[]).is_err());
        assert!(coefficient_of_variation(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn periodicity_examples() {
        // gaps 31 and 28: mean 29.5, population sd 1.5
        let p = periodicity_score(&[d(2019, 1, 1), d(2019, 2, 1), d(2019, 3, 1)]);
        assert_abs_diff_eq!(p, 1.0 / (1.0 + 1.5 / 29.5), epsilon = 1e-12);
        assert_abs_diff_eq!(p, 0.951613, epsilon = 1e-6);
        assert_eq!(periodicity_score(&[d(2019, 1, 1), d(2019, 5, 1)]), 1.0);
        assert_eq!(
            periodicity_score(&[d(2019, 1, 1), d(2019, 1, 31), d(2019, 3, 2), d(2019, 4, 1)]),
            1.0
        );
        assert_eq!(periodicity_score(&[d(2019, 1, 1); 3]), 0.0);
    }

    #[test]
    fn likeness_examples() {
        let params = RewardParams::default();
        let s = series(&[1000, 1000, 1000], &monthly(3));
        let score = lease_likeness(&s, &params);
        assert_eq!(score.cv, 0.0);
        assert_abs_diff_eq!(score.score, 0.951613, epsilon = 1e-6);
        assert_eq!(score.occurrence_count, 3);

        let single = series(&[1000], &monthly(1));
        assert_eq!(lease_likeness(&single, &params).score, 0.0);

        let wide = series(&[100, 5000], &monthly(2));
        let score = lease_likeness(&wide, &params);
        assert!(score.cv > params.cv_max);
        assert_eq!(score.score, 0.0);
    }

    #[test]
    fn reward_examples() {
        let params = RewardParams::default();
        let s = series(&[1000, 1000, 1000], &monthly(3));
        assert_eq!(
            match_reward(&s, MatchLevel::Regular, &params),
            params.base_reward
        );
        assert_abs_diff_eq!(cv_discounted_reward(0.35, &params), 0.5, epsilon = 1e-12);
        assert_eq!(cv_discounted_reward(0.7, &params), 0.0);
        assert_eq!(cv_discounted_reward(0.71, &params), 0.0);
        assert!(MatchLevel::try_from(3).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(RewardParams::default().validate().is_ok());
        let bad = RewardParams {
            step_penalty: 0.0,
            likeness_threshold: 1.5,
            ..RewardParams::default()
        };
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("step_penalty") && err.contains("likeness_threshold"));
    }

    proptest! {
        #[test]
        fn cv_is_scale_invariant(values in prop::collection::vec(1.0f64..1e6, 1..20), k in 1e-3f64..1e3) {
            let a = coefficient_of_variation(&values).unwrap();
            let scaled: Vec<f64> = values.iter().map(|v| v * k).collect();
            let b = coefficient_of_variation(&scaled).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn reward_nonincreasing_in_cv(a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let params = RewardParams::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(cv_discounted_reward(lo, &params) >= cv_discounted_reward(hi, &params));
        }

        #[test]
        fn level_two_gate_is_sound(amounts in prop::collection::vec(1i64..10_000, 1..8)) {
            let params = RewardParams::default();
            let s = series(&amounts, &monthly(amounts.len() as u32));
            let reward = match_reward(&s, MatchLevel::Exchange, &params);
            let closed = s.cv() >= params.cv_max || s.len() < 2;
            prop_assert_eq!(reward == 0.0, closed);
        }

        #[test]
        fn likeness_zero_below_two_and_bounded(amounts in prop::collection::vec(1i64..10_000, 1..8)) {
            let params = RewardParams::default();
            let s = series(&amounts, &monthly(amounts.len() as u32));
            let score = lease_likeness(&s, &params);
            prop_assert!((0.0..=1.0).contains(&score.score));
            if s.len() < 2 {
                prop_assert_eq!(score.score, 0.0);
            }
        }
    }
}
