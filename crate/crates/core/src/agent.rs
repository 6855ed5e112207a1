//! Tabular Q-learning over the journal grid.
//!
//! Exploration is epsilon-greedy with a multiplicative per-episode decay. With
//! the best-reward memory enabled, every episode that beats the best return
//! seen so far is replayed once more through the update rule, newest
//! transition first, so the reward reaches the states that led to it.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, EpisodeConfig, GridEnv, GridState, Promotion, TraceStep};
use crate::error::{AuditError, Result};
use crate::journal::CandidatePools;

/// Trailing window inspected by the convergence classifier.
pub const CONVERGENCE_WINDOW: usize = 10;
/// Relative range under which a converged curve counts as stable.
pub const STABLE_TOLERANCE: f64 = 1e-6;
/// Range, relative to the best reward, tolerated by a variant-converged curve.
pub const VARIANT_TOLERANCE: f64 = 0.05;

/// Action values over the grid at its reset size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub width: usize,
    pub height: usize,
    values: Vec<[f64; 4]>,
}

impl QTable {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![[0.0; 4]; width * height],
        }
    }

    fn idx(&self, s: GridState) -> usize {
        debug_assert!(s.x < self.width && s.y < self.height);
        s.y * self.width + s.x
    }

    pub fn get(&self, s: GridState, a: Action) -> f64 {
        self.values[self.idx(s)][a.index()]
    }

    pub fn set(&mut self, s: GridState, a: Action, value: f64) {
        let i = self.idx(s);
        self.values[i][a.index()] = value;
    }

    pub fn row(&self, s: GridState) -> [f64; 4] {
        self.values[self.idx(s)]
    }

    pub fn max_value(&self, s: GridState) -> f64 {
        self.row(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Best action, ties resolved in `Action::ALL` order.
    pub fn greedy_action(&self, s: GridState) -> Action {
        let row = self.row(s);
        let mut best = Action::ALL[0];
        for a in Action::ALL.into_iter().skip(1) {
            if row[a.index()] > row[best.index()] {
                best = a;
            }
        }
        best
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().flat_map(|r| r.iter().copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningParams {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub episodes: usize,
    pub memory_enabled: bool,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_decay: 0.99,
            epsilon_min: 0.01,
            episodes: 200,
            memory_enabled: true,
        }
    }
}

impl LearningParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            problems.push("alpha must be in (0, 1]");
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            problems.push("gamma must be in [0, 1)");
        }
        if !(self.epsilon_start > 0.0 && self.epsilon_start <= 1.0) {
            problems.push("epsilon_start must be in (0, 1]");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay < 1.0) {
            problems.push("epsilon_decay must be in (0, 1)");
        }
        if !(self.epsilon_min >= 0.0 && self.epsilon_min <= 1.0) {
            problems.push("epsilon_min must be in [0, 1]");
        }
        if self.episodes == 0 {
            problems.push("episodes must be > 0");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(AuditError::Domain(problems.join("; ")))
        }
    }

    /// Exploration rate in effect for episode `k` (0-based).
    pub fn epsilon_at(&self, k: usize) -> f64 {
        let k = i32::try_from(k).unwrap_or(i32::MAX);
        (self.epsilon_start * self.epsilon_decay.powi(k)).max(self.epsilon_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvergenceMode {
    /// Converged with a single stable reward.
    StableB,
    /// Converged with a little residual variance.
    VariantA,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub episode_rewards: Vec<f64>,
    pub best_reward: f64,
    /// First episode (0-based) of the converged tail.
    pub converged_at: Option<usize>,
    pub mode: ConvergenceMode,
}

impl ConvergenceReport {
    /// Classifies a reward curve by the range of its last `CONVERGENCE_WINDOW`
    /// rewards, then extends the converged tail backwards while its range
    /// stays within the same tolerance.
    pub fn classify(episode_rewards: Vec<f64>) -> Self {
        let best_reward = episode_rewards
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let n = episode_rewards.len();
        if n < CONVERGENCE_WINDOW {
            return Self {
                episode_rewards,
                best_reward,
                converged_at: None,
                mode: ConvergenceMode::NotConverged,
            };
        }
        let range = |xs: &[f64]| {
            let (lo, hi) = xs
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            hi - lo
        };
        let stable_tol = STABLE_TOLERANCE * best_reward.abs().max(1.0);
        let variant_tol = VARIANT_TOLERANCE * best_reward.abs();
        let tail = range(&episode_rewards[n - CONVERGENCE_WINDOW..]);
        let (mode, tol) = if tail <= stable_tol {
            (ConvergenceMode::StableB, stable_tol)
        } else if tail <= variant_tol {
            (ConvergenceMode::VariantA, variant_tol)
        } else {
            (ConvergenceMode::NotConverged, 0.0)
        };
        let converged_at = (mode != ConvergenceMode::NotConverged).then(|| {
            let mut start = n - CONVERGENCE_WINDOW;
            let (mut lo, mut hi) = episode_rewards[start..]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            while start > 0 {
                let v = episode_rewards[start - 1];
                let (nlo, nhi) = (lo.min(v), hi.max(v));
                if nhi - nlo > tol {
                    break;
                }
                lo = nlo;
                hi = nhi;
                start -= 1;
            }
            start
        });
        Self {
            episode_rewards,
            best_reward,
            converged_at,
            mode,
        }
    }
}

/// One row of the training reward curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub episode: usize,
    pub reward: f64,
    pub epsilon: f64,
    pub best_reward: f64,
    /// Return of the exploring episode itself.
    pub training_reward: f64,
}

/// Everything a training run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub q: QTable,
    pub report: ConvergenceReport,
    pub curve: Vec<CurvePoint>,
    /// Trajectory of the best-returning exploring episode.
    pub best_trajectory: Vec<TraceStep>,
}

/// Moves `Q(s, a)` toward `r + gamma * max_a' Q(s', a')` by step `alpha`.
/// Returns the new value.
pub fn q_update(
    q: &mut QTable,
    s: GridState,
    a: Action,
    r: f64,
    s_next: GridState,
    params: &LearningParams,
) -> f64 {
    let target = r + params.gamma * q.max_value(s_next);
    apply_target(q, s, a, target, params.alpha)
}

/// Update for a transition into a terminal state, which has no future value.
pub fn q_update_terminal(
    q: &mut QTable,
    s: GridState,
    a: Action,
    r: f64,
    params: &LearningParams,
) -> f64 {
    apply_target(q, s, a, r, params.alpha)
}

fn apply_target(q: &mut QTable, s: GridState, a: Action, target: f64, alpha: f64) -> f64 {
    let old = q.get(s, a);
    let new = old + alpha * (target - old);
    q.set(s, a, new);
    new
}

/// Epsilon-greedy choice; exploration draws uniformly over the four actions.
pub fn select_action<R: Rng + ?Sized>(
    q: &QTable,
    s: GridState,
    epsilon: f64,
    rng: &mut R,
) -> Action {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        Action::ALL[rng.random_range(0..Action::ALL.len())]
    } else {
        q.greedy_action(s)
    }
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    s: GridState,
    a: Action,
    r: f64,
    next: GridState,
    terminal: bool,
}

fn learn(q: &mut QTable, t: &Transition, params: &LearningParams) {
    if t.terminal {
        q_update_terminal(q, t.s, t.a, t.r, params);
    } else {
        q_update(q, t.s, t.a, t.r, t.next, params);
    }
}

/// Runs one episode from reset. `epsilon = 0` gives the greedy policy.
fn run_episode<R: Rng + ?Sized>(
    env: &mut GridEnv,
    q: &mut QTable,
    epsilon: f64,
    rng: &mut R,
    params: Option<&LearningParams>,
) -> Result<(f64, Vec<Transition>, Vec<TraceStep>)> {
    let mut s = env.reset();
    let mut total = 0.0;
    let mut transitions = Vec::new();
    let mut trace = Vec::new();
    while !env.is_done() {
        let a = select_action(q, s, epsilon, rng);
        let out = env.step(a)?;
        let t = Transition {
            s,
            a,
            r: out.reward,
            next: out.next_state,
            terminal: env.is_terminal(),
        };
        if let Some(params) = params {
            learn(q, &t, params);
        }
        total += out.reward;
        trace.push(TraceStep {
            step: env.steps(),
            state: s,
            action: a,
            next_state: out.next_state,
            reward: out.reward,
            promoted: out.promoted.map(|p| p.counterparty),
        });
        transitions.push(t);
        s = out.next_state;
    }
    Ok((total, transitions, trace))
}

/// Trains a Q-table on one department's pools.
///
/// Each episode's reported reward is the return of the greedy policy after
/// that episode's updates, so the curve tracks the answer the table would
/// give rather than exploration noise.
pub fn train(
    pools: &CandidatePools,
    episode_config: &EpisodeConfig,
    params: &LearningParams,
    seed: u64,
) -> Result<TrainingRun> {
    params.validate()?;
    let mut env = GridEnv::new(pools.clone(), *episode_config)?;
    let (width, height) = env.max_dims();
    let mut q = QTable::new(width, height);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut rewards = Vec::with_capacity(params.episodes);
    let mut curve = Vec::with_capacity(params.episodes);
    let mut best_training = f64::NEG_INFINITY;
    let mut best = f64::NEG_INFINITY;
    let mut best_trajectory = Vec::new();
    let mut best_q = None;

    for episode in 0..params.episodes {
        let epsilon = params.epsilon_at(episode);
        let (training_reward, transitions, trace) =
            run_episode(&mut env, &mut q, epsilon, &mut rng, Some(params))?;
        if training_reward > best_training {
            best_training = training_reward;
            best_trajectory = trace;
            if params.memory_enabled {
                for t in transitions.iter().rev() {
                    learn(&mut q, t, params);
                }
            }
        }
        let (reward, _, _) = run_episode(&mut env, &mut q, 0.0, &mut rng, None)?;
        if reward > best {
            best = reward;
            if params.memory_enabled {
                best_q = Some(q.clone());
            }
        }
        rewards.push(reward);
        curve.push(CurvePoint {
            episode,
            reward,
            epsilon,
            best_reward: best,
            training_reward,
        });
    }

    Ok(TrainingRun {
        q: best_q.unwrap_or(q),
        report: ConvergenceReport::classify(rewards),
        curve,
        best_trajectory,
    })
}

/// Result of following the learned policy without exploration.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub total_reward: f64,
    pub promotions: Vec<Promotion>,
    pub trace: Vec<TraceStep>,
    /// Entry ids left in the working journal at the end of the rollout.
    pub unpromoted_entry_ids: Vec<String>,
}

/// Deterministic epsilon-0 episode under `q`.
pub fn greedy_rollout(
    q: &QTable,
    pools: &CandidatePools,
    episode_config: &EpisodeConfig,
) -> Result<Rollout> {
    let mut env = GridEnv::new(pools.clone(), *episode_config)?;
    let (width, height) = env.max_dims();
    if (q.width, q.height) != (width, height) {
        return Err(AuditError::Domain(format!(
            "Q-table is {}x{} but the pools are {}x{}",
            q.width, q.height, width, height
        )));
    }
    // the rng is never drawn from at epsilon 0
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut q = q.clone();
    let (total_reward, _, trace) = run_episode(&mut env, &mut q, 0.0, &mut rng, None)?;
    Ok(Rollout {
        total_reward,
        promotions: env.promotions().to_vec(),
        trace,
        unpromoted_entry_ids: env.working_entry_ids(),
    })
}

/// Writes the reward curve as `episode,reward,epsilon,best_reward,training_reward`.
pub fn write_curve<W: Write>(curve: &[CurvePoint], sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| AuditError::Format(e.to_string());
    writer
        .write_record([
            "episode",
            "reward",
            "epsilon",
            "best_reward",
            "training_reward",
        ])
        .map_err(io)?;
    for p in curve {
        writer
            .write_record([
                p.episode.to_string(),
                p.reward.to_string(),
                p.epsilon.to_string(),
                p.best_reward.to_string(),
                p.training_reward.to_string(),
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
    use crate::journal::{build_pools, parse_date, Amount, JournalEntry};
    use crate::scoring::{MatchLevel, RewardParams};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const S: GridState = GridState { x: 0, y: 0 };
    const T: GridState = GridState { x: 1, y: 0 };

    fn params(alpha: f64, gamma: f64) -> LearningParams {
        LearningParams {
            alpha,
            gamma,
            ..Default::default()
        }
    }

    fn monthly(prefix: &str, name: &str, amount: i64, months: u32) -> Vec<JournalEntry> {
        (1..=months)
            .map(|m| JournalEntry {
                entry_id: format!("{prefix}{m}"),
                posting_date: parse_date(&format!("2019-{m:02}-05")).unwrap(),
                department: "D1".into(),
                account_code: "5110".into(),
                counterparty: name.into(),
                amount: Amount(amount),
                memo: None,
            })
            .collect()
    }

    fn two_by_two() -> CandidatePools {
        let mut entries = monthly("a", "A", 100, 3);
        entries.extend(monthly("b", "B", 200, 3));
        build_pools(&entries, "D1").unwrap()
    }

    fn episode(max_steps: usize) -> EpisodeConfig {
        EpisodeConfig {
            level: MatchLevel::Regular,
            max_steps,
            reward_params: RewardParams::default(),
        }
    }

    #[test]
    fn q_update_by_substitution() {
        let mut q = QTable::new(2, 1);
        q.set(T, Action::Up, 0.5);
        let v = q_update(&mut q, S, Action::Right, 1.0, T, &params(0.1, 0.9));
        assert_relative_eq!(v, 0.145, epsilon = 1e-15);
        assert_eq!(q.get(S, Action::Right), v);
        // every other cell untouched
        assert_eq!(q.values().filter(|&x| x != 0.0).count(), 2);
    }

    #[test]
    fn full_step_without_discount_gives_the_reward() {
        let mut q = QTable::new(2, 1);
        q.set(S, Action::Left, 7.0);
        q.set(T, Action::Down, 3.0);
        assert_eq!(
            q_update(&mut q, S, Action::Left, 0.25, T, &params(1.0, 0.0)),
            0.25
        );
    }

    #[test]
    fn bellman_fixed_point_is_unchanged() {
        let mut q = QTable::new(2, 1);
        q.set(T, Action::Right, 2.0);
        // 0.2 + 0.9 * 2.0
        q.set(S, Action::Down, 2.0);
        let before = q.clone();
        q_update(&mut q, S, Action::Down, 0.2, T, &params(0.1, 0.9));
        assert_eq!(q, before);
    }

    #[test]
    fn greedy_picks_the_strict_maximum() {
        let mut q = QTable::new(1, 1);
        q.set(S, Action::Up, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(select_action(&q, S, 0.0, &mut rng), Action::Up);
        }
    }

    #[test]
    fn zero_row_breaks_ties_to_left() {
        let q = QTable::new(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(select_action(&q, S, 0.0, &mut rng), Action::Left);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut q = QTable::new(1, 1);
        q.set(S, Action::Down, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[select_action(&q, S, 1.0, &mut rng).index()] += 1;
        }
        let p = 0.25;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn epsilon_schedule_is_exact() {
        let p = LearningParams::default();
        assert_eq!(p.epsilon_at(0), 1.0);
        assert_eq!(p.epsilon_at(10), 0.99f64.powi(10));
        assert_eq!(p.epsilon_at(10_000), 0.01);
    }

    #[test]
    fn invalid_learning_params() {
        for bad in [
            LearningParams {
                alpha: 0.0,
                ..Default::default()
            },
            LearningParams {
                gamma: 1.0,
                ..Default::default()
            },
            LearningParams {
                epsilon_decay: 1.0,
                ..Default::default()
            },
            LearningParams {
                episodes: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(bad.validate(), Err(AuditError::Domain(_))));
        }
    }

    #[test]
    fn classify_modes() {
        let stable = ConvergenceReport::classify(vec![
            0.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0, 2.0,
        ]);
        assert_eq!(stable.mode, ConvergenceMode::StableB);
        assert_eq!(stable.converged_at, Some(2));
        assert_eq!(stable.best_reward, 2.0);

        let mut noisy = vec![0.0; 5];
        noisy.extend((0..10).map(|i| if i % 2 == 0 { 2.0 } else { 1.95 }));
        let variant = ConvergenceReport::classify(noisy);
        assert_eq!(variant.mode, ConvergenceMode::VariantA);
        assert_eq!(variant.converged_at, Some(5));

        let swinging = ConvergenceReport::classify((0..20).map(|i| (i % 3) as f64).collect());
        assert_eq!(swinging.mode, ConvergenceMode::NotConverged);
        assert_eq!(swinging.converged_at, None);

        assert_eq!(
            ConvergenceReport::classify(vec![1.0; 5]).mode,
            ConvergenceMode::NotConverged
        );
    }

    #[test]
    fn single_cell_without_discount() {
        let pools = build_pools(&monthly("a", "A", 100, 3), "D1").unwrap();
        let cfg = episode(5);
        let run = train(&pools, &cfg, &params(0.1, 0.0), 3).unwrap();
        let rollout = greedy_rollout(&run.q, &pools, &cfg).unwrap();
        assert_relative_eq!(rollout.total_reward, 1.0 - 0.001, epsilon = 1e-12);
        assert_eq!(rollout.promotions.len(), 1);
        assert!(rollout.unpromoted_entry_ids.is_empty());
    }

    #[test]
    fn untrained_rollout_walks_left_until_the_cap() {
        // (0,0) pairs 100 with A, which has a single entry there
        let mut entries = monthly("a", "A", 100, 3);
        entries.extend(monthly("b", "B", 200, 3));
        entries[0].counterparty = "Z".into();
        entries[1].counterparty = "Z".into();
        let pools = build_pools(&entries, "D1").unwrap();
        let cfg = episode(7);
        let (w, h) = pools.dims();
        let q = QTable::new(w, h);
        let a = greedy_rollout(&q, &pools, &cfg).unwrap();
        let b = greedy_rollout(&q, &pools, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace.len(), 7);
        assert!(a.trace.iter().all(|t| t.action == Action::Left));
    }

    #[test]
    fn trained_rollout_matches_the_oracle() {
        let pools = two_by_two();
        let cfg = episode(16);
        let (best, set) = crate::env::enumerate_assignment_value(&pools, &cfg).unwrap();
        let run = train(
            &pools,
            &cfg,
            &LearningParams {
                episodes: 500,
                ..Default::default()
            },
            11,
        )
        .unwrap();
        let rollout = greedy_rollout(&run.q, &pools, &cfg).unwrap();
        assert_eq!(crate::env::promotion_reward_sum(&rollout.promotions), best);
        let mut got: Vec<_> = rollout
            .promotions
            .iter()
            .map(|p| p.counterparty.clone())
            .collect();
        got.sort();
        let want: Vec<_> = set.iter().map(|p| p.counterparty.clone()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn rollout_rejects_a_mismatched_table() {
        let pools = two_by_two();
        assert!(greedy_rollout(&QTable::new(3, 3), &pools, &episode(5)).is_err());
    }

    #[test]
    fn seeded_training_is_reproducible() {
        let pools = two_by_two();
        let cfg = episode(16);
        let p = LearningParams {
            episodes: 60,
            ..Default::default()
        };
        let a = train(&pools, &cfg, &p, 99).unwrap();
        let b = train(&pools, &cfg, &p, 99).unwrap();
        assert_eq!(a, b);
        let bits = |r: &TrainingRun| {
            r.report
                .episode_rewards
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn curve_rows() {
        let pools = two_by_two();
        let run = train(
            &pools,
            &episode(16),
            &LearningParams {
                episodes: 3,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let mut out = Vec::new();
        write_curve(&run.curve, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "episode,reward,epsilon,best_reward,training_reward"
        );
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
    }

    proptest! {
        #[test]
        fn q_update_matches_the_formula(
            q0 in -5.0f64..5.0, r in -2.0f64..2.0, next in prop::collection::vec(-5.0f64..5.0, 4),
            alpha in 0.01f64..=1.0, gamma in 0.0f64..0.99,
        ) {
            let mut q = QTable::new(2, 1);
            q.set(S, Action::Up, q0);
            for (a, v) in Action::ALL.into_iter().zip(&next) {
                q.set(T, a, *v);
            }
            let max_next = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let expected = q0 + alpha * (r + gamma * max_next - q0);
            let got = q_update(&mut q, S, Action::Up, r, T, &params(alpha, gamma));
            prop_assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }

        #[test]
        fn training_properties(seed in 0u64..1000, memory in any::<bool>(), max_steps in 1usize..20) {
            let pools = two_by_two();
            let cfg = episode(max_steps);
            let p = LearningParams { episodes: 40, memory_enabled: memory, ..Default::default() };
            let run = train(&pools, &cfg, &p, seed).unwrap();
            let bound = (1.0 * pools.names.len() as f64 + 0.001 * max_steps as f64) / (1.0 - p.gamma);
            prop_assert!(run.q.max_abs() <= bound);
            for w in run.curve.windows(2) {
                prop_assert!(w[1].best_reward >= w[0].best_reward);
            }
            for (k, point) in run.curve.iter().enumerate() {
                prop_assert_eq!(point.epsilon, p.epsilon_at(k));
            }
            prop_assert_eq!(run.report.best_reward, run.curve.last().unwrap().best_reward);
            if let Some(at) = run.report.converged_at {
                prop_assert!(at <= p.episodes);
            }
        }
    }
}
