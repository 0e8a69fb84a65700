//! Experience replay: a FIFO ring with optional priorities, hindsight goal
//! relabeling, and a k-nearest-neighbor expert over a demonstration buffer.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::envs::Action;
use crate::error::{Error, Result};

pub const DEFAULT_PRIORITY_ALPHA: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Action,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// True terminal: the target does not bootstrap past this step.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalTransition {
    pub t: Transition,
    pub desired_goal: Vec<f64>,
    pub achieved_goal: Vec<f64>,
    pub achieved_goal_next: Vec<f64>,
}

/// How sampling probabilities are derived from stored priorities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PriorityMode {
    /// P(i) = exp(p_i) / Σ exp(p_j)
    #[default]
    Softmax,
    /// P(i) = p_i / Σ p_j
    Proportional,
}

impl std::str::FromStr for PriorityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "proportional" => Ok(Self::Proportional),
            _ => Err(Error::Config(format!("unknown priority mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for PriorityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PriorityMode::Softmax => "softmax",
            PriorityMode::Proportional => "proportional",
        })
    }
}

/// |td|^alpha
pub fn priority_of(td: f64, alpha: f64) -> f64 {
    td.abs().powf(alpha)
}

pub fn softmax(priorities: &[f64]) -> Vec<f64> {
    let max = priorities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = priorities.iter().map(|p| (p - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Normalized priorities; all-zero priorities fall back to uniform.
pub fn proportional(priorities: &[f64]) -> Vec<f64> {
    let total: f64 = priorities.iter().sum();
    if total <= 0.0 {
        return vec![1.0 / priorities.len() as f64; priorities.len()];
    }
    priorities.iter().map(|p| p / total).collect()
}

/// Fixed-capacity FIFO ring. Slots are stable until overwritten, so sampled
/// indices can be used to refresh priorities after an update.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: Vec<T>,
    priorities: Option<Vec<f64>>,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidInput("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            priorities: None,
            next: 0,
        })
    }

    pub fn prioritized(capacity: usize) -> Result<Self> {
        let mut b = Self::new(capacity)?;
        b.priorities = Some(Vec::new());
        Ok(b)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_prioritized(&self) -> bool {
        self.priorities.is_some()
    }

    pub fn get(&self, slot: usize) -> Option<&T> {
        self.items.get(slot)
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let (newer, older) = self.items.split_at(if self.items.len() < self.capacity { 0 } else { self.next });
        older.iter().chain(newer.iter())
    }

    pub fn push(&mut self, item: T) {
        let p = self.max_priority();
        if self.items.len() < self.capacity {
            self.items.push(item);
            if let Some(ps) = &mut self.priorities {
                ps.push(p);
            }
        } else {
            self.items[self.next] = item;
            if let Some(ps) = &mut self.priorities {
                ps[self.next] = p;
            }
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Largest stored priority, 1 for an empty buffer.
    pub fn max_priority(&self) -> f64 {
        match &self.priorities {
            Some(ps) if !ps.is_empty() => ps.iter().copied().fold(0.0, f64::max),
            _ => 1.0,
        }
    }

    pub fn priority(&self, slot: usize) -> Option<f64> {
        self.priorities.as_ref().and_then(|p| p.get(slot).copied())
    }

    pub fn set_priority(&mut self, slot: usize, priority: f64) -> Result<()> {
        let len = self.items.len();
        let ps = self
            .priorities
            .as_mut()
            .ok_or_else(|| Error::InvalidInput("buffer has no priorities".into()))?;
        if slot >= len || !(priority >= 0.0) || !priority.is_finite() {
            return Err(Error::InvalidInput(format!("bad priority update slot={slot} p={priority}")));
        }
        ps[slot] = priority;
        Ok(())
    }

    /// Holds at least `b` items; learners wait for this before updating.
    pub fn is_ready(&self, b: usize) -> bool {
        self.items.len() >= b
    }

    /// Draws are with replacement, so only an empty buffer cannot serve a batch.
    fn ready(&self, b: usize) -> Result<()> {
        if b > 0 && self.items.is_empty() {
            return Err(Error::NotReady {
                have: self.items.len(),
                need: b,
            });
        }
        Ok(())
    }

    /// `b` slots drawn uniformly with replacement.
    pub fn sample_uniform_indices(&self, b: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        self.ready(b)?;
        let n = self.items.len();
        Ok((0..b).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample_uniform(&self, b: usize, rng: &mut dyn RngCore) -> Result<Vec<&T>> {
        Ok(self
            .sample_uniform_indices(b, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn probabilities(&self, mode: PriorityMode) -> Result<Vec<f64>> {
        let ps = self
            .priorities
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("buffer has no priorities".into()))?;
        Ok(match mode {
            PriorityMode::Softmax => softmax(ps),
            PriorityMode::Proportional => proportional(ps),
        })
    }

    /// `b` slots drawn with replacement from the priority distribution.
    pub fn sample_prioritized(&self, b: usize, mode: PriorityMode, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        self.ready(b)?;
        let probs = self.probabilities(mode)?;
        let mut cdf = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for p in &probs {
            acc += p;
            cdf.push(acc);
        }
        Ok((0..b)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                cdf.partition_point(|&c| c <= u).min(probs.len() - 1)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HerStrategy {
    Future,
    Final,
}

impl std::str::FromStr for HerStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "future" => Ok(Self::Future),
            "final" => Ok(Self::Final),
            _ => Err(Error::Config(format!("unknown HER strategy {s:?}"))),
        }
    }
}

impl std::fmt::Display for HerStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HerStrategy::Future => "future",
            HerStrategy::Final => "final",
        })
    }
}

/// Extra copies of `episode` with substituted goals and recomputed rewards.
///
/// Goals are achieved goals of the visited states `s_0 .. s_n`. Future:
/// `k_future` copies of transition `s_t -> s_{t+1}`, each with the achieved goal
/// of a state `s_j`, `j` uniform in `t+1 ..= n` (always later than `s_t`; the
/// last transition samples its own outcome). Final: one copy per transition,
/// goal = achieved goal of `s_n`.
pub fn her_relabel<F>(
    episode: &[GoalTransition],
    strategy: HerStrategy,
    k_future: usize,
    rng: &mut dyn RngCore,
    reward_fn: F,
) -> Result<Vec<GoalTransition>>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let last = episode
        .last()
        .ok_or_else(|| Error::InvalidInput("cannot relabel an empty episode".into()))?;
    let n = episode.len();
    let relabel = |tr: &GoalTransition, goal: &[f64]| {
        let mut out = tr.clone();
        out.desired_goal = goal.to_vec();
        out.t.r = reward_fn(&tr.achieved_goal_next, goal);
        out
    };
    let mut out = Vec::new();
    match strategy {
        HerStrategy::Final => {
            for tr in episode {
                out.push(relabel(tr, &last.achieved_goal_next));
            }
        }
        HerStrategy::Future => {
            out.reserve(n * k_future);
            // Achieved goal of state s_j (s_n is the final outcome).
            let state_goal = |j: usize| {
                if j < n {
                    &episode[j].achieved_goal
                } else {
                    &last.achieved_goal_next
                }
            };
            for (t, tr) in episode.iter().enumerate() {
                for _ in 0..k_future {
                    let j = rng.random_range(t + 1..=n);
                    out.push(relabel(tr, state_goal(j)));
                }
            }
        }
    }
    Ok(out)
}

/// A demonstration: agent input (state‖goal) and the expert's action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub input: Vec<f64>,
    pub action: Vec<f64>,
}

/// Neighbor weights exp(-dist) normalized over the `k` nearest demos.
/// Returns (demo index, weight) pairs, nearest first.
pub fn knn_weights<'a, I>(demos: I, query: &[f64], k: usize) -> Result<Vec<(usize, f64)>>
where
    I: IntoIterator<Item = &'a Demo>,
{
    if k == 0 {
        return Err(Error::InvalidInput("k must be positive".into()));
    }
    let mut dist: Vec<(usize, f64)> = demos
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let d2: f64 = d.input.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (i, d2.sqrt())
        })
        .collect();
    if dist.len() < k {
        return Err(Error::InvalidInput(format!("need {k} demos, have {}", dist.len())));
    }
    let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if dist.len() > k {
        dist.select_nth_unstable_by(k - 1, cmp);
        dist.truncate(k);
    }
    dist.sort_by(cmp);
    // Shift by the nearest distance; the normalized weights are unchanged.
    let d0 = dist[0].1;
    let raw: Vec<f64> = dist.iter().map(|(_, d)| (d0 - d).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(dist.iter().zip(raw).map(|(&(i, _), w)| (i, w / total)).collect())
}

/// Distance-weighted average of the `k` nearest demonstrated actions.
pub fn knn_expert_action(demos: &ReplayBuffer<Demo>, query: &[f64], k: usize) -> Result<Vec<f64>> {
    let weights = knn_weights(demos.items.iter(), query, k)?;
    let dim = demos.items[0].action.len();
    let mut out = vec![0.0; dim];
    for (i, w) in weights {
        for (o, a) in out.iter_mut().zip(&demos.items[i].action) {
            *o += w * a;
        }
    }
    Ok(out)
}
