//! Experience pool of `(state, action, reward)` examples and the two example
//! selection rules: exact state matching for discrete states and
//! reward-minus-distance ranking for continuous states.
//!
//! Both selectors make a single pass over the pool. The pass can be observed
//! through a [`ScanProbe`], which the tests use to check that every stored
//! example is visited exactly once per selection.

use std::cmp::Ordering;
use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_POOL_CAPACITY: usize = 10_000;

#[derive(Debug, Error)]
pub enum ExperienceError {
    #[error("step stamp {got} is not after the pool's last stamp {last}")]
    StampOrder { last: u64, got: u64 },
    #[error("pool record {line}: {source}")]
    Decode { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    /// User count (discrete) or mean user distance in meters (continuous).
    pub state: f64,
    pub bs: usize,
    /// 1-based power level.
    pub action: u8,
    pub reward: f64,
    pub constraint_ok: bool,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Weight of the state distance in the ranking metric.
    pub tau: f64,
    pub k_recommended: usize,
    pub k_inadvisable: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { tau: 3.0, k_recommended: 4, k_inadvisable: 2 }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tau >= 0.0) {
            return Err(format!("tau must be non-negative, got {}", self.tau));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExampleSet {
    pub recommended: Vec<Example>,
    pub inadvisable: Vec<Example>,
}

impl ExampleSet {
    pub fn len(&self) -> usize {
        self.recommended.len() + self.inadvisable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Observer of the selection pass; `visit` is called once per pool element.
pub trait ScanProbe {
    fn visit(&mut self, index: usize);
}

impl ScanProbe for () {
    fn visit(&mut self, _: usize) {}
}

/// Counts visits per pool index.
#[derive(Debug, Clone, Default)]
pub struct VisitCounter {
    pub visits: Vec<u32>,
}

impl ScanProbe for VisitCounter {
    fn visit(&mut self, index: usize) {
        if self.visits.len() <= index {
            self.visits.resize(index + 1, 0);
        }
        self.visits[index] += 1;
    }
}

/// Append-only store with FIFO eviction once `capacity` is reached.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperiencePool {
    examples: VecDeque<Example>,
    capacity: Option<usize>,
}

impl Default for ExperiencePool {
    fn default() -> Self {
        Self::with_capacity(Some(DEFAULT_POOL_CAPACITY))
    }
}

impl ExperiencePool {
    pub fn with_capacity(capacity: Option<usize>) -> Self {
        Self { examples: VecDeque::new(), capacity }
    }

    pub fn unbounded() -> Self {
        Self::with_capacity(None)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &Example> {
        self.examples.iter()
    }

    pub fn get(&self, index: usize) -> Option<&Example> {
        self.examples.get(index)
    }

    pub fn last_stamp(&self) -> Option<u64> {
        self.examples.back().map(|e| e.step)
    }

    pub fn append(&mut self, example: Example) -> Result<(), ExperienceError> {
        if let Some(last) = self.last_stamp() {
            if example.step <= last {
                return Err(ExperienceError::StampOrder { last, got: example.step });
            }
        }
        if let Some(cap) = self.capacity {
            if cap == 0 {
                return Ok(());
            }
            if self.examples.len() == cap {
                self.examples.pop_front();
            }
        }
        self.examples.push_back(example);
        Ok(())
    }

    /// Examples whose state equals `target` exactly. Recommended are the
    /// highest-reward examples that met the rate constraint; inadvisable are
    /// drawn from the rest, constraint violations first, then lowest reward.
    pub fn select_discrete(&self, target: f64, cfg: &SelectionConfig) -> ExampleSet {
        self.select_discrete_probed(target, cfg, &mut ())
    }

    pub fn select_discrete_probed<P: ScanProbe>(
        &self,
        target: f64,
        cfg: &SelectionConfig,
        probe: &mut P,
    ) -> ExampleSet {
        let mut relevant = Vec::new();
        for (i, ex) in self.examples.iter().enumerate() {
            probe.visit(i);
            if ex.state == target {
                relevant.push((ex.reward, ex));
            }
        }
        split_ranked(relevant, cfg, true)
    }

    /// Ranks every example by `L = r − τ·|s − target|`. Recommended are the
    /// top constraint-meeting examples by `L`; inadvisable are the lowest `L`
    /// among the rest, in ascending order.
    pub fn rank_continuous(&self, target: f64, cfg: &SelectionConfig) -> ExampleSet {
        self.rank_continuous_probed(target, cfg, &mut ())
    }

    pub fn rank_continuous_probed<P: ScanProbe>(
        &self,
        target: f64,
        cfg: &SelectionConfig,
        probe: &mut P,
    ) -> ExampleSet {
        let mut scored = Vec::with_capacity(self.examples.len());
        for (i, ex) in self.examples.iter().enumerate() {
            probe.visit(i);
            scored.push((ranking_metric(ex, target, cfg.tau), ex));
        }
        split_ranked(scored, cfg, false)
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<(), ExperienceError> {
        for ex in &self.examples {
            serde_json::to_writer(&mut out, ex).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(input: R, capacity: Option<usize>) -> Result<Self, ExperienceError> {
        let mut pool = Self::with_capacity(capacity);
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ex = serde_json::from_str(&line).map_err(|source| ExperienceError::Decode { line: i + 1, source })?;
            pool.append(ex)?;
        }
        Ok(pool)
    }
}

/// `r(s, a) − τ·‖s − s_target‖`.
pub fn ranking_metric(ex: &Example, target: f64, tau: f64) -> f64 {
    ex.reward - tau * (ex.state - target).abs()
}

/// Higher score first, then the more recent example.
fn by_score_desc(a: &(f64, &Example), b: &(f64, &Example)) -> Ordering {
    b.0.total_cmp(&a.0).then(b.1.step.cmp(&a.1.step))
}

/// The `k` smallest elements under `cmp`, sorted. Linear in `items.len()`.
fn smallest_k<T, F>(mut items: Vec<T>, k: usize, mut cmp: F) -> Vec<T>
where
    F: FnMut(&T, &T) -> Ordering,
{
    if k == 0 {
        return Vec::new();
    }
    if items.len() > k {
        items.select_nth_unstable_by(k - 1, &mut cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
    items
}

fn split_ranked(scored: Vec<(f64, &Example)>, cfg: &SelectionConfig, violators_first: bool) -> ExampleSet {
    let (met, violated): (Vec<_>, Vec<_>) = scored.into_iter().partition(|(_, ex)| ex.constraint_ok);
    let mut met = met;
    let k_rec = cfg.k_recommended.min(met.len());
    if k_rec > 0 && k_rec < met.len() {
        met.select_nth_unstable_by(k_rec - 1, by_score_desc);
    }
    let leftover = met.split_off(k_rec);
    let mut recommended = met;
    recommended.sort_by(by_score_desc);

    let mut rest = violated;
    rest.extend(leftover);
    let inadvisable = smallest_k(rest, cfg.k_inadvisable, |a, b| {
        let group = if violators_first { a.1.constraint_ok.cmp(&b.1.constraint_ok) } else { Ordering::Equal };
        group.then(a.0.total_cmp(&b.0)).then(b.1.step.cmp(&a.1.step))
    });
    ExampleSet {
        recommended: recommended.into_iter().map(|(_, ex)| ex.clone()).collect(),
        inadvisable: inadvisable.into_iter().map(|(_, ex)| ex.clone()).collect(),
    }
}
