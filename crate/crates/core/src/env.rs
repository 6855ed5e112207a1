//! Gridworld environment over a department's candidate pools.
//!
//! Column `x` selects a payment amount, row `y` a counterparty. Arriving on a
//! cell hypothesizes that the counterparty's payments at that amount form a
//! lease, optionally repaired by exchanging names (level 1) or names and
//! amounts (level 2) of other working entries. A hypothesis whose
//! lease-likeness clears the threshold is promoted: its entries leave the
//! working journal, its counterparty leaves the name pool, and the grid
//! contracts by one row.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::journal::{Amount, CandidatePools, JournalEntry};
use crate::scoring::{
    lease_likeness, match_reward, LeaseLikenessScore, MatchLevel, PaymentSeries, RewardParams,
};

/// Step cap used when none is configured: four crossings of the grid.
pub fn default_max_steps(width: usize, height: usize) -> usize {
    (4 * (width + height)).max(1)
}

/// Largest grid `enumerate_assignment_value` accepts.
pub const ORACLE_CELL_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridState {
    pub x: usize,
    pub y: usize,
}

impl GridState {
    pub const ORIGIN: GridState = GridState { x: 0, y: 0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
    Up,
    Down,
}

impl Action {
    /// Fixed order, also the greedy tie-break order.
    pub const ALL: [Action; 4] = [Action::Left, Action::Right, Action::Up, Action::Down];

    pub fn index(self) -> usize {
        match self {
            Action::Left => 0,
            Action::Right => 1,
            Action::Up => 2,
            Action::Down => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Left => "left",
            Action::Right => "right",
            Action::Up => "up",
            Action::Down => "down",
        }
    }

    /// One-notch move clamped to a `width` x `height` grid.
    pub fn apply(self, s: GridState, width: usize, height: usize) -> GridState {
        let max_x = width.saturating_sub(1);
        let max_y = height.saturating_sub(1);
        let (x, y) = (s.x.min(max_x), s.y.min(max_y));
        match self {
            Action::Left => GridState {
                x: x.saturating_sub(1),
                y,
            },
            Action::Right => GridState {
                x: (x + 1).min(max_x),
                y,
            },
            Action::Up => GridState {
                x,
                y: y.saturating_sub(1),
            },
            Action::Down => GridState {
                x,
                y: (y + 1).min(max_y),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub level: MatchLevel,
    pub max_steps: usize,
    pub reward_params: RewardParams,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(AuditError::Domain("max_steps must be > 0".into()));
        }
        self.reward_params.validate()
    }
}

/// How an entry was re-read to fit a promoted lease.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeKind {
    /// Booked under another counterparty name.
    Name,
    /// Booked under the same counterparty at a different amount.
    Amount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reassignment {
    pub entry_id: String,
    pub kind: ExchangeKind,
    pub booked_counterparty: String,
    pub booked_amount: Amount,
}

/// A lease hypothesis promoted off the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub step: usize,
    pub department: String,
    pub counterparty: String,
    pub anchor_amount: Amount,
    pub entry_ids: Vec<String>,
    pub reassigned: Vec<Reassignment>,
    pub series: PaymentSeries,
    pub likeness: LeaseLikenessScore,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: GridState,
    pub reward: f64,
    pub done: bool,
    pub promoted: Option<Promotion>,
    /// The pairing under the agent was already proposed earlier this episode.
    pub revisited: bool,
}

/// One environment transition, kept for traces and replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub state: GridState,
    pub action: Action,
    pub next_state: GridState,
    pub reward: f64,
    pub promoted: Option<String>,
}

/// A candidate lease formed at one grid cell from the working journal.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub counterparty: String,
    pub anchor_amount: Amount,
    /// Indices into the pool's entries.
    pub members: Vec<usize>,
    pub reassigned: Vec<Reassignment>,
    pub series: PaymentSeries,
    pub likeness: LeaseLikenessScore,
    pub reward: f64,
}

impl Hypothesis {
    pub fn promotable(&self, params: &RewardParams) -> bool {
        self.likeness.occurrence_count >= 2 && self.likeness.score >= params.likeness_threshold
    }
}

fn series_of(entries: &[JournalEntry], members: &[usize], counterparty: &str) -> PaymentSeries {
    let payments = members
        .iter()
        .map(|&i| (entries[i].posting_date, entries[i].amount))
        .collect();
    // members are nonempty and amounts were validated positive at ingestion
    PaymentSeries::new(counterparty, payments).expect("valid member series")
}

/// Forms the lease hypothesis for pairing `amount` with `name`.
///
/// The anchor is every working entry booked to `name` at exactly `amount`.
/// Entries of single-entry counterparties at the same amount are absorbed when
/// they do not lower lease-likeness (name exchange, both levels). At level 2,
/// the counterparty's own entries at other amounts are absorbed, closest
/// amount first, while the series stays inside the CV gate and promotable
/// (amount exchange). Returns `None` when the anchor is empty.
pub fn hypothesize(
    entries: &[JournalEntry],
    active: &[bool],
    name: &str,
    amount: Amount,
    level: MatchLevel,
    params: &RewardParams,
) -> Option<Hypothesis> {
    let mut members: Vec<usize> = (0..entries.len())
        .filter(|&i| active[i] && entries[i].counterparty == name && entries[i].amount == amount)
        .collect();
    if members.is_empty() {
        return None;
    }

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (i, e) in entries.iter().enumerate() {
        if active[i] {
            *counts.entry(e.counterparty.as_str()).or_default() += 1;
        }
    }

    let by_date = |a: &usize, b: &usize| {
        (entries[*a].posting_date, &entries[*a].entry_id)
            .cmp(&(entries[*b].posting_date, &entries[*b].entry_id))
    };

    let mut reassigned = Vec::new();
    let mut current = lease_likeness(&series_of(entries, &members, name), params);

    let mut orphans: Vec<usize> = (0..entries.len())
        .filter(|&i| {
            active[i]
                && entries[i].amount == amount
                && entries[i].counterparty != name
                && counts[entries[i].counterparty.as_str()] == 1
        })
        .collect();
    orphans.sort_by(by_date);
    for i in orphans {
        let mut trial = members.clone();
        trial.push(i);
        let score = lease_likeness(&series_of(entries, &trial, name), params);
        if score.score >= current.score && score.score > 0.0 {
            members = trial;
            current = score;
            reassigned.push(Reassignment {
                entry_id: entries[i].entry_id.clone(),
                kind: ExchangeKind::Name,
                booked_counterparty: entries[i].counterparty.clone(),
                booked_amount: entries[i].amount,
            });
        }
    }

    if level == MatchLevel::Exchange {
        let mut others: Vec<usize> = (0..entries.len())
            .filter(|&i| {
                active[i] && entries[i].counterparty == name && entries[i].amount != amount
            })
            .collect();
        others.sort_by(|a, b| {
            let da = (entries[*a].amount.0 - amount.0).abs();
            let db = (entries[*b].amount.0 - amount.0).abs();
            da.cmp(&db).then_with(|| by_date(a, b))
        });
        for i in others {
            let mut trial = members.clone();
            trial.push(i);
            let series = series_of(entries, &trial, name);
            let score = lease_likeness(&series, params);
            if score.cv <= params.cv_max && score.score >= params.likeness_threshold {
                members = trial;
                current = score;
                reassigned.push(Reassignment {
                    entry_id: entries[i].entry_id.clone(),
                    kind: ExchangeKind::Amount,
                    booked_counterparty: entries[i].counterparty.clone(),
                    booked_amount: entries[i].amount,
                });
            }
        }
    }

    members.sort_by(by_date);
    let series = series_of(entries, &members, name);
    let reward = match_reward(&series, level, params);
    Some(Hypothesis {
        counterparty: name.to_string(),
        anchor_amount: amount,
        members,
        reassigned,
        series,
        likeness: current,
        reward,
    })
}

/// The working journal and pools of one episode.
#[derive(Debug, Clone)]
struct Working {
    names: Vec<String>,
    active: Vec<bool>,
}

impl Working {
    fn initial(pools: &CandidatePools) -> Self {
        Self {
            names: pools.names.clone(),
            active: vec![true; pools.entries.len()],
        }
    }
}

fn promote(
    pools: &CandidatePools,
    working: &mut Working,
    y: usize,
    hyp: Hypothesis,
    step: usize,
) -> Promotion {
    for &i in &hyp.members {
        working.active[i] = false;
    }
    working.names.remove(y);
    Promotion {
        step,
        department: pools.department.clone(),
        counterparty: hyp.counterparty,
        anchor_amount: hyp.anchor_amount,
        entry_ids: hyp
            .members
            .iter()
            .map(|&i| pools.entries[i].entry_id.clone())
            .collect(),
        reassigned: hyp.reassigned,
        series: hyp.series,
        likeness: hyp.likeness,
        reward: hyp.reward,
    }
}

/// A single-threaded episode runner that owns its working copy of the pools.
#[derive(Debug, Clone)]
pub struct GridEnv {
    pools: CandidatePools,
    config: EpisodeConfig,
    working: Working,
    state: GridState,
    steps: usize,
    done: bool,
    promotions: Vec<Promotion>,
    proposed: std::collections::HashSet<(Amount, String)>,
    // hypothesis per cell for the current working set; cleared on promotion
    cache: Vec<Option<Option<Hypothesis>>>,
    exhausted: bool,
}

impl GridEnv {
    /// Builds the environment and resets it.
    pub fn new(pools: CandidatePools, config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        if pools.payments.is_empty() || pools.names.is_empty() {
            return Err(AuditError::CannotConstruct(format!(
                "department `{}` has an empty pool axis",
                pools.department
            )));
        }
        let cells = pools.payments.len() * pools.names.len();
        let working = Working::initial(&pools);
        let mut env = Self {
            pools,
            config,
            working,
            state: GridState::ORIGIN,
            steps: 0,
            done: false,
            promotions: Vec::new(),
            proposed: Default::default(),
            cache: vec![None; cells],
            exhausted: false,
        };
        env.reset();
        Ok(env)
    }

    /// Restores the initial pools and returns the start state.
    pub fn reset(&mut self) -> GridState {
        self.working = Working::initial(&self.pools);
        self.state = GridState::ORIGIN;
        self.steps = 0;
        self.done = false;
        self.promotions.clear();
        self.proposed.clear();
        self.cache.iter_mut().for_each(|c| *c = None);
        self.exhausted = !self.any_promotable();
        self.done = self.exhausted;
        self.state
    }

    /// Whether any cell of the current pools would promote on arrival.
    pub fn any_promotable(&mut self) -> bool {
        let (width, height) = self.dims();
        let params = self.config.reward_params;
        (0..height).any(|y| {
            (0..width).any(|x| {
                self.hypothesis_at(GridState { x, y })
                    .is_some_and(|h| h.promotable(&params))
            })
        })
    }

    pub fn state(&self) -> GridState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// True once no further promotion is possible: the name pool is empty or
    /// no remaining cell would promote.
    pub fn is_terminal(&self) -> bool {
        self.exhausted || self.working.names.is_empty()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn pools(&self) -> &CandidatePools {
        &self.pools
    }

    /// Current (width, height), shrinking as names are promoted.
    pub fn dims(&self) -> (usize, usize) {
        (self.pools.payments.len(), self.working.names.len())
    }

    /// Dimensions at reset, used to size the Q-table.
    pub fn max_dims(&self) -> (usize, usize) {
        self.pools.dims()
    }

    pub fn names(&self) -> &[String] {
        &self.working.names
    }

    pub fn promotions(&self) -> &[Promotion] {
        &self.promotions
    }

    pub fn working_entry_ids(&self) -> Vec<String> {
        self.pools
            .entries
            .iter()
            .zip(&self.working.active)
            .filter(|(_, &a)| a)
            .map(|(e, _)| e.entry_id.clone())
            .collect()
    }

    pub fn promoted_entry_ids(&self) -> Vec<String> {
        self.promotions
            .iter()
            .flat_map(|p| p.entry_ids.iter().cloned())
            .collect()
    }

    /// The hypothesis the agent would form at `s` on the current pools.
    pub fn hypothesis_at(&mut self, s: GridState) -> Option<Hypothesis> {
        let (width, height) = self.dims();
        if s.x >= width || s.y >= height {
            return None;
        }
        let idx = s.y * width + s.x;
        if self.cache[idx].is_none() {
            let hyp = hypothesize(
                &self.pools.entries,
                &self.working.active,
                &self.working.names[s.y],
                self.pools.payments[s.x],
                self.config.level,
                &self.config.reward_params,
            );
            self.cache[idx] = Some(hyp);
        }
        self.cache[idx].clone().flatten()
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(AuditError::Protocol(
                "step called after the episode ended".into(),
            ));
        }
        let (width, height) = self.dims();
        let mut next = action.apply(self.state, width, height);
        self.steps += 1;
        let params = self.config.reward_params;
        let mut reward = params.step_penalty;

        let key = (
            self.pools.payments[next.x],
            self.working.names[next.y].clone(),
        );
        let revisited = !self.proposed.insert(key);

        let mut promoted = None;
        if let Some(hyp) = self.hypothesis_at(next) {
            if hyp.promotable(&params) {
                reward += hyp.reward;
                let p = promote(&self.pools, &mut self.working, next.y, hyp, self.steps);
                self.cache.iter_mut().for_each(|c| *c = None);
                if !self.working.names.is_empty() {
                    next.y = next.y.min(self.working.names.len() - 1);
                }
                self.promotions.push(p.clone());
                promoted = Some(p);
            }
        }

        self.state = next;
        if promoted.is_some() && !self.working.names.is_empty() && !self.any_promotable() {
            self.exhausted = true;
        }
        self.done =
            self.exhausted || self.working.names.is_empty() || self.steps >= self.config.max_steps;
        Ok(StepOutcome {
            next_state: next,
            reward,
            done: self.done,
            promoted,
            revisited,
        })
    }
}

/// Sum of match rewards in a canonical (counterparty, amount) order, so equal
/// sets give bit-identical totals regardless of promotion order.
pub fn promotion_reward_sum(promotions: &[Promotion]) -> f64 {
    let mut keyed: Vec<(&str, Amount, f64)> = promotions
        .iter()
        .map(|p| (p.counterparty.as_str(), p.anchor_amount, p.reward))
        .collect();
    keyed.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    keyed.iter().map(|k| k.2).sum()
}

/// Exhaustive search over promotion orders for the best total match reward.
///
/// Movement costs are ignored: every promotable cell is treated as reachable.
/// Ties go to the lexicographically smallest sequence of counterparties.
pub fn enumerate_assignment_value(
    pools: &CandidatePools,
    config: &EpisodeConfig,
) -> Result<(f64, Vec<Promotion>)> {
    config.validate()?;
    let cells = pools.payments.len() * pools.names.len();
    if cells > ORACLE_CELL_LIMIT {
        return Err(AuditError::GridTooLarge {
            cells,
            limit: ORACLE_CELL_LIMIT,
        });
    }
    if cells == 0 {
        return Err(AuditError::CannotConstruct("empty pools".into()));
    }
    let mut memo = BTreeMap::new();
    let best = search(pools, config, Working::initial(pools), &mut memo);
    Ok((promotion_reward_sum(&best), best))
}

fn order_key(promotions: &[Promotion]) -> Vec<(&str, Amount)> {
    promotions
        .iter()
        .map(|p| (p.counterparty.as_str(), p.anchor_amount))
        .collect()
}

fn search(
    pools: &CandidatePools,
    config: &EpisodeConfig,
    working: Working,
    memo: &mut BTreeMap<(Vec<bool>, Vec<String>), Vec<Promotion>>,
) -> Vec<Promotion> {
    let memo_key = (working.active.clone(), working.names.clone());
    if let Some(hit) = memo.get(&memo_key) {
        return hit.clone();
    }
    let params = config.reward_params;
    let mut best: Vec<Promotion> = Vec::new();
    let mut best_value = 0.0;
    for y in 0..working.names.len() {
        for x in 0..pools.payments.len() {
            let Some(hyp) = hypothesize(
                &pools.entries,
                &working.active,
                &working.names[y],
                pools.payments[x],
                config.level,
                &params,
            ) else {
                continue;
            };
            if !hyp.promotable(&params) {
                continue;
            }
            let mut next = working.clone();
            let first = promote(pools, &mut next, y, hyp, 0);
            let mut candidate = vec![first];
            candidate.extend(search(pools, config, next, memo));
            let value = promotion_reward_sum(&candidate);
            let better = value > best_value
                || (value == best_value
                    && value > 0.0
                    && (best.is_empty() || order_key(&candidate) < order_key(&best)));
            if better {
                best_value = value;
                best = candidate;
            }
        }
    }
    memo.insert(memo_key, best.clone());
    best
}

/// Writes an episode trace as `step,x,y,action,next_x,next_y,reward,promoted`.
pub fn write_trace<W: Write>(trace: &[TraceStep], sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| AuditError::Format(e.to_string());
    writer
        .write_record([
            "step", "x", "y", "action", "next_x", "next_y", "reward", "promoted",
        ])
        .map_err(io)?;
    for t in trace {
        writer
            .write_record([
                t.step.to_string(),
                t.state.x.to_string(),
                t.state.y.to_string(),
                t.action.name().to_string(),
                t.next_state.x.to_string(),
                t.next_state.y.to_string(),
                t.reward.to_string(),
                t.promoted.clone().unwrap_or_default(),
            ])
            .map_err(io)?;
    }
    writer
        .flush()
        .map_err(|e| AuditError::Format(e.to_string()))?;
    Ok(())
}
