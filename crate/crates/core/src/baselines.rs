//! Reference policies: exhaustive joint search (the optimum), tabular
//! Q-learning, and the one-step feedback memory used by the feedback-only
//! ablation.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{compute_reward, RewardConfig};
use crate::experience::{Example, ExampleSet};
use crate::netsim::{Case, EvalReport, NetsimError, NetworkConfig, NetworkState, PowerDecision, Scene};

/// All joint level tuples in lexicographic order.
pub fn joint_decisions(config: &NetworkConfig) -> impl Iterator<Item = Vec<u8>> {
    let n = config.num_bs;
    let levels = config.num_levels() as usize;
    let total = levels.pow(n as u32);
    (0..total).map(move |mut code| {
        let mut tuple = vec![0u8; n];
        for slot in tuple.iter_mut().rev() {
            *slot = (code % levels) as u8 + 1;
            code /= levels;
        }
        tuple
    })
}

const POWER_TIE_EPS: f64 = 1e-12;

/// Minimum-power decision that satisfies every station's rate floor. When
/// no decision is feasible, the one with the highest summed reward. Ties go
/// to the lexicographically smallest level tuple.
pub fn exhaustive_best(
    state: &NetworkState,
    config: &NetworkConfig,
    reward: &RewardConfig,
) -> Result<(PowerDecision, EvalReport), NetsimError> {
    let scene = Scene::new(state, config)?;
    let mut best_feasible: Option<(f64, PowerDecision, EvalReport)> = None;
    let mut best_reward: Option<(f64, PowerDecision, EvalReport)> = None;
    for levels in joint_decisions(config) {
        let decision = PowerDecision::new(levels, config)?;
        let report = scene.evaluate(&decision);
        if report.all_ok() {
            if best_feasible.as_ref().is_none_or(|(p, _, _)| report.total_power < p - POWER_TIE_EPS) {
                best_feasible = Some((report.total_power, decision, report));
            }
        } else if best_feasible.is_none() {
            let summed = summed_reward(&report, reward);
            if best_reward.as_ref().is_none_or(|(r, _, _)| summed > *r) {
                best_reward = Some((summed, decision, report));
            }
        }
    }
    let (_, decision, report) = best_feasible.or(best_reward).expect("at least one joint decision exists");
    Ok((decision, report))
}

pub fn summed_reward(report: &EvalReport, reward: &RewardConfig) -> f64 {
    (0..report.bs_power.len()).map(|b| compute_reward(report, b, reward)).sum()
}

/// Controller-side state key: user count, or mean distance in 1 m bins.
pub fn discretize(observation: f64, case: Case) -> i64 {
    match case {
        Case::Discrete => observation.round() as i64,
        Case::Continuous => observation.floor() as i64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QLearningConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        Self { alpha: 0.1, gamma: 0.9, epsilon: 0.1 }
    }
}

/// Action values per (station, discretized state).
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: HashMap<(usize, i64), Vec<f64>>,
    num_levels: u8,
    alpha: f64,
    gamma: f64,
}

impl QTable {
    pub fn new(num_levels: u8, alpha: f64, gamma: f64) -> Self {
        Self { values: HashMap::new(), num_levels, alpha, gamma }
    }

    pub fn value(&self, bs: usize, state: i64, level: u8) -> f64 {
        self.values.get(&(bs, state)).map_or(0.0, |v| v[level as usize - 1])
    }

    fn max_value(&self, bs: usize, state: i64) -> f64 {
        self.values
            .get(&(bs, state))
            .map_or(0.0, |v| v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    /// `Q(s,a) ← Q(s,a) + α·(r + γ·max_a' Q(s',a') − Q(s,a))`.
    pub fn q_step(&mut self, bs: usize, state: i64, level: u8, reward: f64, next_state: i64) {
        let target = reward + self.gamma * self.max_value(bs, next_state);
        let row = self
            .values
            .entry((bs, state))
            .or_insert_with(|| vec![0.0; self.num_levels as usize]);
        let q = &mut row[level as usize - 1];
        *q += self.alpha * (target - *q);
    }

    /// Highest-valued level; the lowest level wins ties.
    pub fn greedy(&self, bs: usize, state: i64) -> u8 {
        let Some(row) = self.values.get(&(bs, state)) else {
            return 1;
        };
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        best as u8 + 1
    }

    pub fn states(&self) -> impl Iterator<Item = (usize, i64)> + '_ {
        self.values.keys().copied()
    }
}

/// ε-greedy tabular learner. The update for a decision is applied when the
/// same station's next state is observed.
#[derive(Debug, Clone)]
pub struct QLearning {
    table: QTable,
    cfg: QLearningConfig,
    pending: Vec<Option<(i64, u8, f64)>>,
    rng: ChaCha8Rng,
}

impl QLearning {
    pub fn new(cfg: QLearningConfig, num_bs: usize, num_levels: u8, rng: ChaCha8Rng) -> Self {
        Self { table: QTable::new(num_levels, cfg.alpha, cfg.gamma), cfg, pending: vec![None; num_bs], rng }
    }

    pub fn table(&self) -> &QTable {
        &self.table
    }

    /// Returns the chosen level and whether it was exploratory.
    pub fn act(&mut self, bs: usize, state: i64, decay: f64, floor: f64) -> (u8, bool) {
        if let Some((s, a, r)) = self.pending[bs].take() {
            self.table.q_step(bs, s, a, r, state);
        }
        let epsilon = (self.cfg.epsilon * decay).max(floor.min(self.cfg.epsilon));
        if self.rng.gen::<f64>() < epsilon {
            (self.rng.gen_range(1..=self.table.num_levels), true)
        } else {
            (self.table.greedy(bs, state), false)
        }
    }

    pub fn record(&mut self, bs: usize, state: i64, level: u8, reward: f64) {
        self.pending[bs] = Some((state, level, reward));
    }
}

/// The most recent outcome per station, nothing older.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackMemory {
    last: Vec<Option<Example>>,
}

impl FeedbackMemory {
    pub fn new(num_bs: usize) -> Self {
        Self { last: vec![None; num_bs] }
    }

    pub fn remember(&mut self, example: Example) {
        let bs = example.bs;
        self.last[bs] = Some(example);
    }

    pub fn last(&self, bs: usize) -> Option<&Example> {
        self.last[bs].as_ref()
    }

    /// The previous outcome as a one-line example set: good when it met the
    /// rate floor, bad otherwise. Empty before the first step.
    pub fn example_set(&self, bs: usize) -> ExampleSet {
        let mut set = ExampleSet::default();
        if let Some(ex) = &self.last[bs] {
            if ex.constraint_ok {
                set.recommended.push(ex.clone());
            } else {
                set.inadvisable.push(ex.clone());
            }
        }
        set
    }
}
