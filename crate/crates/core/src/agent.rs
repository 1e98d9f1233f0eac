//! Optimistic value iteration with a stagewise UCB bonus.
//!
//! Each episode runs three steps:
//!
//! 1. **plan**: a backward pass over the empirical kernel with the bonus
//!    added and every Q-value clipped at `H - h`;
//! 2. **act**: roll the greedy policy out on the true kernel;
//! 3. **update**: increment visit counts along the trajectory and renormalise
//!    the touched empirical rows.
//!
//! Two bonus schedules are supported. The K-dependent one (`KD`) spends a
//! fixed exploration budget `mu * K^alpha` in every episode. The
//! K-independent one (`KI`) grows the budget as `mu * (k + 1)^alpha` with the
//! current episode index `k`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{argmax_low, expect, MarkovPolicy, QTable, TabularMdp, ValueTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BonusSchedule {
    /// Budget depends on the total number of episodes.
    KD,
    /// Budget depends on the current episode index only.
    KI,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BonusConfig {
    pub schedule: BonusSchedule,
    pub alpha: f64,
    pub mu: f64,
    pub total_episodes: u64,
}

impl BonusConfig {
    pub fn new(schedule: BonusSchedule, alpha: f64, mu: f64, total_episodes: u64) -> Result<Self> {
        let cfg = Self {
            schedule,
            alpha,
            mu,
            total_episodes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Domain(format!("alpha = {} is outside [0, 1]", self.alpha)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Domain(format!("mu = {} must be positive", self.mu)));
        }
        if self.total_episodes == 0 {
            return Err(Error::Domain("total_episodes K must be at least 1".into()));
        }
        Ok(())
    }

    /// Exploration budget `mu * K^alpha` (KD) or `mu * (k+1)^alpha` (KI).
    pub fn budget(&self, k: u64) -> f64 {
        let base = match self.schedule {
            BonusSchedule::KD => self.total_episodes,
            BonusSchedule::KI => k + 1,
        };
        self.mu * pow_exact(base as f64, self.alpha)
    }
}

/// `base^exponent` with exponents 0 and 1 returned exactly.
pub fn pow_exact(base: f64, exponent: f64) -> f64 {
    if exponent == 0.0 {
        1.0
    } else if exponent == 1.0 {
        base
    } else {
        base.powf(exponent)
    }
}

/// Bonus `b_h^k(n)`; `f64::INFINITY` when `n = 0`.
pub fn bonus(cfg: &BonusConfig, h: usize, k: u64, n: u64, num_states: usize, horizon: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let multiplier = (horizon - h - 1) as f64;
    let radius = 0.5 * num_states as f64 * std::f64::consts::LN_2 + cfg.budget(k);
    multiplier * (radius / n as f64).sqrt()
}

/// Visit counts and the empirical kernel.
///
/// Triple counts and empirical rows exist for `h <= H-2`. Pair counts are
/// kept for every stage: at `h = H-1` they count plain visits, which the
/// bonus needs to leave its infinite `n = 0` branch.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    triple_counts: Vec<u64>,
    pair_counts: Vec<u64>,
    empirical: Vec<f64>,
    episode: u64,
}

impl AgentState {
    pub fn new(num_states: usize, num_actions: usize, horizon: usize) -> Self {
        let rows = horizon.saturating_sub(1) * num_states * num_actions;
        Self {
            num_states,
            num_actions,
            horizon,
            triple_counts: vec![0; rows * num_states],
            pair_counts: vec![0; horizon * num_states * num_actions],
            empirical: vec![1.0 / num_states as f64; rows * num_states],
            episode: 0,
        }
    }

    pub fn for_mdp(mdp: &TabularMdp) -> Self {
        Self::new(mdp.num_states(), mdp.num_actions(), mdp.horizon())
    }

    #[inline]
    fn pair_index(&self, h: usize, s: usize, a: usize) -> usize {
        (h * self.num_states + s) * self.num_actions + a
    }

    /// Number of completed episodes.
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn pair_count(&self, h: usize, s: usize, a: usize) -> u64 {
        self.pair_counts[self.pair_index(h, s, a)]
    }

    pub fn triple_count(&self, h: usize, s: usize, a: usize, next: usize) -> u64 {
        self.triple_counts[self.pair_index(h, s, a) * self.num_states + next]
    }

    /// `P_hat_h(. | s, a)` for `h <= H-2`.
    #[inline]
    pub fn empirical_row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.pair_index(h, s, a) * self.num_states;
        &self.empirical[start..start + self.num_states]
    }

    /// Records one episode.
    pub fn update(&mut self, trajectory: &Trajectory) {
        let s_len = self.num_states;
        for h in 0..self.horizon {
            let (s, a) = (trajectory.states[h], trajectory.actions[h]);
            let pair = self.pair_index(h, s, a);
            self.pair_counts[pair] += 1;
            if h + 1 < self.horizon {
                let next = trajectory.states[h + 1];
                self.triple_counts[pair * s_len + next] += 1;
                let n = self.pair_counts[pair] as f64;
                let start = pair * s_len;
                for sp in 0..s_len {
                    self.empirical[start + sp] = self.triple_counts[start + sp] as f64 / n;
                }
            }
        }
        self.episode += 1;
    }
}

/// Optimistic Q/V tables and the greedy policy for one episode.
#[derive(Debug, Clone)]
pub struct Plan {
    pub q: QTable,
    pub value: ValueTable,
    pub policy: MarkovPolicy,
}

/// Optimistic backward pass; only the rewards and dimensions of `mdp` are read.
pub fn plan(mdp: &TabularMdp, state: &AgentState, cfg: &BonusConfig) -> Plan {
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let k = state.episode();
    let mut q = QTable::zeros(h_len, s_len, a_len);
    let mut value = ValueTable::zeros(h_len, s_len);
    let mut policy = MarkovPolicy::constant(h_len, s_len, 0);
    for h in (0..h_len).rev() {
        let cap = (h_len - h) as f64;
        for s in 0..s_len {
            for a in 0..a_len {
                let n = state.pair_count(h, s, a);
                // an unvisited pair has an infinite bonus; skip straight to the clip
                let qa = if n == 0 {
                    cap
                } else {
                    let mut target = mdp.reward(h, s, a) + bonus(cfg, h, k, n, s_len, h_len);
                    if h + 1 < h_len {
                        target += expect(state.empirical_row(h, s, a), value.stage(h + 1));
                    }
                    target.min(cap)
                };
                q.set(h, s, a, qa);
            }
            let best = argmax_low(q.actions(h, s));
            policy.set_action(h, s, best);
            value.set(h, s, q.get(h, s, best));
        }
    }
    Plan { q, value, policy }
}

/// States `s[0..H]` and actions `a[0..H]` visited in one episode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

/// A trajectory plus its exact regret `V*_0(s0) - V^pi_0(s0)`.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub trajectory: Trajectory,
    pub regret: f64,
    pub policy_was_optimal: bool,
}

/// Inverse-CDF draw over `row` in index order.
pub fn sample_next<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, &p) in row.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return Some(i);
        }
    }
    if cumulative < 1.0 - 1e-9 {
        return None;
    }
    // u landed in the rounding sliver above the final partial sum
    row.iter().rposition(|&p| p > 0.0)
}

/// Rolls `policy` out on the true kernel from `s0`.
pub fn act_and_step<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &MarkovPolicy,
    rng: &mut R,
) -> Result<Trajectory> {
    let h_len = mdp.horizon();
    let mut states = Vec::with_capacity(h_len);
    let mut actions = Vec::with_capacity(h_len);
    let mut s = mdp.initial_state();
    for h in 0..h_len {
        let a = policy.action(h, s);
        states.push(s);
        actions.push(a);
        if h + 1 < h_len {
            let row = mdp.row(h, s, a);
            s = sample_next(row, rng).ok_or_else(|| Error::Sampling {
                h,
                s,
                a,
                mass: row.iter().sum(),
            })?;
        }
    }
    Ok(Trajectory { states, actions })
}
