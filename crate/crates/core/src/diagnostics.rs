//! Runtime checks mirroring the regret analysis.
//!
//! * [`good_event_check`]: every visited empirical row lies within L1 radius
//!   `2 b / (H-h-1)` of the truth.
//! * [`optimism_check`]: `V^k >= V*` entrywise.
//! * [`decompose_regret`]: burn-in / optimism-error / estimation-error split
//!   of the cumulative regret.
//! * [`l1_concentration_probe`]: Monte Carlo L1 deviation rate against
//!   `2^S exp(-n eps^2 / 2)`.
//! * [`lemma1_sum_check`], [`lemma2_transfer_check`]: numeric versions of the
//!   two supporting lemmas.
//! * [`n_bar_stopping_check`]: once every reachable count passes its visit
//!   threshold under the good event, only optimal policies are played.
//!
//! The good event is only checked for `h <= H-2`: the final stage has no
//! kernel, and its radius would read `0/0`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::agent::{bonus, AgentState, BonusConfig, BonusSchedule, Trajectory};
use crate::bounds::{ceil_pow, compute_n_bar, BoundInputs};
use crate::error::{Error, Result};
use crate::mdp::{backward_induction, expect, TabularMdp, ValueTable};

/// Absolute tolerance for value comparisons.
pub const VALUE_TOL: f64 = 1e-9;

/// L1 distance between two rows.
pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodEventReport {
    pub holds: bool,
    /// Largest `L1 / radius` over all checked rows; unvisited rows count as 0.
    pub worst_ratio: f64,
    /// `(s, a, h)` of the first row (in `h, s, a` order) that failed.
    pub first_violation: Option<(usize, usize, usize)>,
}

/// Checks the good event for the agent's current empirical kernel.
pub fn good_event_check(mdp: &TabularMdp, state: &AgentState, cfg: &BonusConfig) -> GoodEventReport {
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let k = state.episode();
    let mut worst_ratio = 0.0f64;
    let mut first_violation = None;
    for h in 0..h_len.saturating_sub(1) {
        for s in 0..s_len {
            for a in 0..a_len {
                let n = state.pair_count(h, s, a);
                if n == 0 {
                    continue;
                }
                let radius = 2.0 * bonus(cfg, h, k, n, s_len, h_len) / (h_len - h - 1) as f64;
                let ratio = l1_distance(mdp.row(h, s, a), state.empirical_row(h, s, a)) / radius;
                if ratio > 1.0 && first_violation.is_none() {
                    first_violation = Some((s, a, h));
                }
                worst_ratio = worst_ratio.max(ratio);
            }
        }
    }
    GoodEventReport {
        holds: worst_ratio <= 1.0,
        worst_ratio,
        first_violation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimismReport {
    pub holds: bool,
    /// `max_{h,s} V*_h(s) - V^k_h(s)`; non-positive when optimism holds strictly.
    pub worst_deficit: f64,
}

pub fn optimism_check(optimistic: &ValueTable, optimal: &ValueTable) -> OptimismReport {
    let mut worst = f64::NEG_INFINITY;
    for h in 0..=optimal.horizon() {
        for (vk, vs) in optimistic.stage(h).iter().zip(optimal.stage(h)) {
            worst = worst.max(vs - vk);
        }
    }
    OptimismReport {
        holds: worst <= VALUE_TOL,
        worst_deficit: worst,
    }
}

/// Per-episode record needed by the decomposition and stopping checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSnapshot {
    /// `V*_0(s0) - V^{pi^k}_0(s0)`.
    pub regret: f64,
    /// `V^k_0(s0)` from the optimistic plan.
    pub optimistic_value: f64,
    /// Stagewise membership of `pi^k` in the optimal set.
    pub policy_optimal: bool,
    /// Membership restricted to reachable `(h, s)` pairs.
    pub policy_optimal_reachable: bool,
    pub good_event: bool,
    pub optimism: bool,
    /// Per stage, the smallest visit count over reachable `(s, a)` at planning time.
    pub min_reachable_counts: Vec<u64>,
    /// Martingale increments for stages `1..H`, when recorded.
    pub eta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionTrace {
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
    pub burn_in_episodes: u64,
    /// Largest per-episode optimism-error contribution among good-event episodes.
    pub worst_good_event_r1: f64,
    pub eta_increments: Option<Vec<f64>>,
}

impl DecompositionTrace {
    pub fn total(&self) -> f64 {
        self.r0 + self.r1 + self.r2
    }
}

/// Splits the regret of a run into burn-in, optimism error and estimation error.
///
/// With `record_eta` set, every snapshot must carry its increments.
pub fn decompose_regret(
    history: &[EpisodeSnapshot],
    optimal_value: f64,
    gamma: f64,
    record_eta: bool,
) -> Result<DecompositionTrace> {
    if history.is_empty() {
        return Err(Error::Contract("decomposition needs at least one episode".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma = {gamma} is outside [0, 1]")));
    }
    let burn = ceil_pow(history.len() as u64, gamma);
    let mut trace = DecompositionTrace {
        r0: 0.0,
        r1: 0.0,
        r2: 0.0,
        burn_in_episodes: burn,
        worst_good_event_r1: f64::NEG_INFINITY,
        eta_increments: record_eta.then(Vec::new),
    };
    for (k, ep) in history.iter().enumerate() {
        if !ep.regret.is_finite() || !ep.optimistic_value.is_finite() {
            return Err(Error::Contract(format!("episode {k} has a non-finite value")));
        }
        if let Some(all) = trace.eta_increments.as_mut() {
            let eta = ep
                .eta
                .as_ref()
                .ok_or_else(|| Error::Contract(format!("episode {k} has no martingale increments")))?;
            all.extend_from_slice(eta);
        }
        if ep.policy_optimal {
            continue;
        }
        if (k as u64) < burn {
            trace.r0 += ep.regret;
        } else {
            let policy_value = optimal_value - ep.regret;
            let r1 = optimal_value - ep.optimistic_value;
            trace.r1 += r1;
            trace.r2 += ep.optimistic_value - policy_value;
            if ep.good_event {
                trace.worst_good_event_r1 = trace.worst_good_event_r1.max(r1);
            }
        }
    }
    Ok(trace)
}

/// Martingale increments `eta_{k,h}` for `h = 1..H-1` along one trajectory.
///
/// `Delta_h(s) = (V^k_h(s) - V^pi_h(s)) * 1{pi not optimal}` and
/// `eta_h = Delta_h(s_h) - sum_{s'} P*_{h-1}(s' | s_{h-1}, a_{h-1}) Delta_h(s')`.
pub fn eta_increments(
    mdp: &TabularMdp,
    optimistic: &ValueTable,
    policy_value: &ValueTable,
    trajectory: &Trajectory,
    policy_optimal: bool,
) -> Vec<f64> {
    let h_len = mdp.horizon();
    if policy_optimal {
        return vec![0.0; h_len.saturating_sub(1)];
    }
    (1..h_len)
        .map(|h| {
            let delta: Vec<f64> = optimistic
                .stage(h)
                .iter()
                .zip(policy_value.stage(h))
                .map(|(vk, vp)| vk - vp)
                .collect();
            let (prev_s, prev_a) = (trajectory.states[h - 1], trajectory.actions[h - 1]);
            delta[trajectory.states[h]] - expect(mdp.row(h - 1, prev_s, prev_a), &delta)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub exceed_rate: f64,
    pub weissman_bound: f64,
    pub trials: u64,
}

impl ProbeResult {
    /// Three binomial standard errors of the measured rate.
    pub fn slack(&self) -> f64 {
        3.0 * (self.exceed_rate * (1.0 - self.exceed_rate) / self.trials as f64).sqrt()
    }

    pub fn dominated(&self) -> bool {
        self.exceed_rate <= self.weissman_bound + self.slack()
    }
}

/// `min(1, 2^S exp(-n eps^2 / 2))`.
pub fn weissman_bound(num_states: usize, n: u64, eps: f64) -> f64 {
    (2f64.powi(num_states as i32) * (-(n as f64) * eps * eps / 2.0).exp()).min(1.0)
}

/// Fraction of `trials` empirical distributions (each from `n` draws of
/// `row`) whose L1 deviation exceeds `eps`.
///
/// Counts are drawn as a multinomial through sequential conditional
/// binomials. Deviations within 1e-12 of `eps` count as not exceeding, so
/// lattice points sitting exactly on the threshold are not lost to rounding.
pub fn l1_concentration_probe<R: Rng + ?Sized>(
    row: &[f64],
    n: u64,
    trials: u64,
    eps: f64,
    rng: &mut R,
) -> Result<ProbeResult> {
    if row.is_empty() || row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Domain("probe row must be a probability vector".into()));
    }
    if n == 0 || trials == 0 || !(eps > 0.0) {
        return Err(Error::Domain("probe needs n >= 1, trials >= 1 and eps > 0".into()));
    }
    let mut counts = vec![0u64; row.len()];
    let mut exceed = 0u64;
    for _ in 0..trials {
        let mut remaining = n;
        let mut mass = 1.0f64;
        for (i, &p) in row.iter().enumerate() {
            if i + 1 == row.len() {
                counts[i] = remaining;
                break;
            }
            let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
            counts[i] = if remaining == 0 || q == 0.0 {
                0
            } else {
                Binomial::new(remaining, q)
                    .map_err(|e| Error::Domain(e.to_string()))?
                    .sample(rng)
            };
            remaining -= counts[i];
            mass -= p;
        }
        let dev: f64 = counts
            .iter()
            .zip(row)
            .map(|(&c, &p)| (c as f64 / n as f64 - p).abs())
            .sum();
        if dev > eps + 1e-12 {
            exceed += 1;
        }
    }
    Ok(ProbeResult {
        exceed_rate: exceed as f64 / trials as f64,
        weissman_bound: weissman_bound(row.len(), n, eps),
        trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Result {
    pub lhs: f64,
    pub rhs: f64,
}

impl Lemma1Result {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + 1e-9)
    }

    pub fn ratio(&self) -> f64 {
        self.lhs / self.rhs
    }
}

/// Evaluates both sides of the union-bound sum over visit counts `n = 1..K`,
/// where the bonus at count `n` uses episode index `max(n, ceil(K^gamma))`.
///
/// At the last stage the bonus multiplier `H-h-1` cancels analytically, so the
/// exponent is formed directly from the bonus radius.
pub fn lemma1_sum_check(cfg: &BonusConfig, horizon: usize, num_states: usize, h: usize, gamma: f64) -> Result<Lemma1Result> {
    cfg.validate()?;
    if h >= horizon {
        return Err(Error::Domain(format!("stage {h} is outside 0..{horizon}")));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma = {gamma} is outside [0, 1]")));
    }
    let k_total = cfg.total_episodes;
    let burn = ceil_pow(k_total, gamma);
    let half_s_ln2 = 0.5 * num_states as f64 * std::f64::consts::LN_2;
    let lhs: f64 = (1..=k_total)
        .map(|n| {
            let episode = n.max(burn);
            let exponent = if h + 1 < horizon {
                let scaled = bonus(cfg, h, episode, n, num_states, horizon) / (horizon - h - 1) as f64;
                2.0 * n as f64 * scaled * scaled
            } else {
                2.0 * (half_s_ln2 + cfg.budget(episode))
            };
            (-exponent).exp()
        })
        .sum();
    let k = k_total as f64;
    let decay = match cfg.schedule {
        BonusSchedule::KD => crate::agent::pow_exact(k, cfg.alpha),
        BonusSchedule::KI => crate::agent::pow_exact(k, gamma * cfg.alpha),
    };
    let rhs = 2f64.powi(-(num_states as i32)) * k * (-2.0 * cfg.mu * decay).exp();
    Ok(Lemma1Result { lhs, rhs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Result {
    /// Perturbation lies inside both thresholds.
    pub conditions_hold: bool,
    /// Optimal actions of the perturbed model are optimal for the true model.
    pub subset_holds: bool,
    /// Largest kernel L1 distance over its threshold.
    pub worst_kernel_ratio: f64,
    /// Largest reward deviation over its threshold.
    pub worst_reward_ratio: f64,
}

impl Lemma2Result {
    pub fn implication_holds(&self) -> bool {
        !self.conditions_hold || self.subset_holds
    }
}

/// Checks whether a perturbed model `(kernel, rewards)` satisfies the
/// transfer thresholds and whether its optimal-action sets nest inside the
/// true ones. Last-stage rewards must be unchanged.
pub fn lemma2_transfer_check(mdp: &TabularMdp, kernel: &[f64], rewards: &[f64]) -> Result<Lemma2Result> {
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    if kernel.len() != mdp.kernel().len() || rewards.len() != mdp.rewards().len() {
        return Err(Error::Shape("perturbed model dimensions differ from the true model".into()));
    }
    let last = (h_len - 1) * s_len * a_len;
    if rewards[last..] != mdp.rewards()[last..] {
        return Err(Error::Contract("perturbed rewards must agree with the true ones at the last stage".into()));
    }
    let perturbed = mdp.with_model(rewards.to_vec(), kernel.to_vec())?;
    let truth = backward_induction(mdp);
    let tilde = backward_induction(&perturbed);
    let gap = truth.gaps.gap_star;
    let h_f = h_len as f64;

    let mut worst_kernel_ratio = 0.0f64;
    let mut worst_reward_ratio = 0.0f64;
    for h in 0..h_len {
        for s in 0..s_len {
            for a in 0..a_len {
                let dr = (perturbed.reward(h, s, a) - mdp.reward(h, s, a)).abs();
                worst_reward_ratio = worst_reward_ratio.max(ratio(dr, gap / (4.0 * h_f)));
                if h + 1 < h_len {
                    let dp = l1_distance(perturbed.row(h, s, a), mdp.row(h, s, a));
                    let threshold = gap / (2.0 * h_f * (h_len - h - 1) as f64);
                    worst_kernel_ratio = worst_kernel_ratio.max(ratio(dp, threshold));
                }
            }
        }
    }
    let subset_holds = (0..h_len).all(|h| {
        (0..s_len).all(|s| {
            tilde
                .gaps
                .optimal_set(h, s)
                .iter()
                .all(|a| truth.gaps.is_optimal_action(h, s, *a))
        })
    });
    Ok(Lemma2Result {
        conditions_hold: worst_kernel_ratio <= 1.0 && worst_reward_ratio <= 1.0,
        subset_holds,
        worst_kernel_ratio,
        worst_reward_ratio,
    })
}

fn ratio(value: f64, threshold: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else {
        value / threshold
    }
}

/// Draws a perturbation strictly inside the transfer thresholds.
///
/// Each kernel row moves towards a uniformly random point of the simplex by
/// an L1 distance drawn uniformly below its threshold, which keeps the row a
/// distribution. Rewards before the last stage move by a uniform amount below
/// `gap/(4H)` and are clipped to `[0, 1]`. Returns `(kernel, rewards)`.
pub fn sample_perturbation<R: Rng + ?Sized>(mdp: &TabularMdp, gap: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let h_f = h_len as f64;
    let shrink = 1.0 - 1e-9;
    let mut kernel = Vec::with_capacity(mdp.kernel().len());
    for h in 0..h_len.saturating_sub(1) {
        let threshold = gap / (2.0 * h_f * (h_len - h - 1) as f64);
        for s in 0..s_len {
            for a in 0..a_len {
                let row = mdp.row(h, s, a);
                let draws: Vec<f64> = (0..s_len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
                let total: f64 = draws.iter().sum();
                let target: Vec<f64> = draws.iter().map(|d| d / total).collect();
                let dist = l1_distance(row, &target);
                let magnitude = (rng.random::<f64>() * threshold * shrink).min(dist);
                let t = if dist > 0.0 { magnitude / dist } else { 0.0 };
                kernel.extend(row.iter().zip(&target).map(|(p, q)| (1.0 - t) * p + t * q));
            }
        }
    }
    let reward_threshold = gap / (4.0 * h_f) * shrink;
    let last = (h_len - 1) * s_len * a_len;
    let rewards = mdp
        .rewards()
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if i >= last {
                r
            } else {
                (r + (2.0 * rng.random::<f64>() - 1.0) * reward_threshold).clamp(0.0, 1.0)
            }
        })
        .collect();
    (kernel, rewards)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingReport {
    pub holds: bool,
    /// Episodes where every reachable count exceeded its threshold and the good event held.
    pub gated_episodes: u64,
    pub violations: u64,
}

/// Verifies that, past the visit thresholds and under the good event, the
/// played policy is optimal on every reachable `(h, s)`.
///
/// An infinite gap makes every policy optimal, so the check holds trivially.
pub fn n_bar_stopping_check(history: &[EpisodeSnapshot], inputs: &BoundInputs) -> Result<StoppingReport> {
    if inputs.gap_star.is_infinite() {
        return Ok(StoppingReport {
            holds: true,
            gated_episodes: 0,
            violations: 0,
        });
    }
    let n_bar = (0..inputs.horizon)
        .map(|h| compute_n_bar(inputs, h))
        .collect::<Result<Vec<_>>>()?;
    let mut gated = 0u64;
    let mut violations = 0u64;
    for (k, ep) in history.iter().enumerate() {
        if ep.min_reachable_counts.len() != inputs.horizon {
            return Err(Error::Contract(format!("episode {k} records counts for the wrong number of stages")));
        }
        let past = ep
            .min_reachable_counts
            .iter()
            .zip(&n_bar)
            .all(|(&n, &threshold)| n as f64 > threshold);
        if past && ep.good_event {
            gated += 1;
            if !ep.policy_optimal_reachable {
                violations += 1;
            }
        }
    }
    Ok(StoppingReport {
        holds: violations == 0,
        gated_episodes: gated,
        violations,
    })
}
