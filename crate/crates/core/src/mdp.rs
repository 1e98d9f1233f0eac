//! Finite-horizon tabular MDPs and exact dynamic programming.
//!
//! Stages are indexed `h = 0..H-1`. Transitions exist only for `h <= H-2`,
//! so an `H = 1` model carries an empty kernel. All tables are stored flat,
//! row-major in `(h, s, a, s')` order.
//!
//! Ties between actions are resolved towards the lowest action index
//! everywhere, and an action is declared optimal when its Q-value lies
//! within [`OPT_TOL`] of the stage maximum.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Actions whose Q-value is within this distance of the stage maximum are optimal.
pub const OPT_TOL: f64 = 1e-9;

/// Kernel rows must sum to one within this tolerance.
pub const ROW_TOL: f64 = 1e-12;

/// Upper limit on the number of policies the enumeration oracle will visit.
pub const ENUMERATION_LIMIT: u64 = 1_000_000;

/// A finite-horizon MDP with deterministic rewards in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    initial_state: usize,
    rewards: Vec<f64>,
    kernel: Vec<f64>,
}

impl TabularMdp {
    /// Builds a model from flat tables, enforcing every invariant.
    ///
    /// `rewards` has `H*S*A` entries, `kernel` has `(H-1)*S*A*S`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        initial_state: usize,
        rewards: Vec<f64>,
        kernel: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || horizon == 0 {
            return Err(Error::ModelValidation(format!(
                "S, A and H must be positive (got S={num_states}, A={num_actions}, H={horizon})"
            )));
        }
        if initial_state >= num_states {
            return Err(Error::ModelValidation(format!(
                "s0 = {initial_state} is not a state index (S = {num_states})"
            )));
        }
        let (s, a, h) = (num_states, num_actions, horizon);
        if rewards.len() != h * s * a {
            return Err(Error::ModelValidation(format!(
                "rewards has {} entries, expected H*S*A = {}",
                rewards.len(),
                h * s * a
            )));
        }
        let kernel_len = (h - 1) * s * a * s;
        if kernel.len() != kernel_len {
            return Err(Error::ModelValidation(format!(
                "kernel has {} entries, expected (H-1)*S*A*S = {kernel_len}",
                kernel.len()
            )));
        }
        for (i, &r) in rewards.iter().enumerate() {
            if !(0.0..=1.0).contains(&r) {
                let (hh, ss, aa) = (i / (s * a), (i / a) % s, i % a);
                return Err(Error::ModelValidation(format!(
                    "rewards[{hh}][{ss}][{aa}] = {r} lies outside [0, 1]"
                )));
            }
        }
        for (row_idx, row) in kernel.chunks(s).enumerate() {
            let (hh, ss, aa) = (row_idx / (s * a), (row_idx / a) % s, row_idx % a);
            if let Some((sp, &p)) = row.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
                return Err(Error::ModelValidation(format!(
                    "kernel[{hh}][{ss}][{aa}][{sp}] = {p} is negative or NaN"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > ROW_TOL {
                return Err(Error::ModelValidation(format!(
                    "kernel[{hh}][{ss}][{aa}] sums to {total}, not 1"
                )));
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            initial_state,
            rewards,
            kernel,
        })
    }

    /// Builds a model from nested arrays (`rewards[h][s][a]`, `kernel[h][s][a][s']`).
    pub fn from_nested(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        initial_state: usize,
        rewards: &[Vec<Vec<f64>>],
        kernel: &[Vec<Vec<Vec<f64>>>],
    ) -> Result<Self> {
        if rewards.len() != horizon {
            return Err(Error::ModelValidation(format!(
                "rewards has {} stages, expected H = {horizon}",
                rewards.len()
            )));
        }
        if kernel.len() != horizon.saturating_sub(1) {
            return Err(Error::ModelValidation(format!(
                "kernel has {} stages, expected H-1 = {}",
                kernel.len(),
                horizon.saturating_sub(1)
            )));
        }
        let mut flat_r = Vec::with_capacity(horizon * num_states * num_actions);
        for (h, stage) in rewards.iter().enumerate() {
            if stage.len() != num_states {
                return Err(Error::ModelValidation(format!(
                    "rewards[{h}] has {} states, expected S = {num_states}",
                    stage.len()
                )));
            }
            for (s, row) in stage.iter().enumerate() {
                if row.len() != num_actions {
                    return Err(Error::ModelValidation(format!(
                        "rewards[{h}][{s}] has {} actions, expected A = {num_actions}",
                        row.len()
                    )));
                }
                flat_r.extend_from_slice(row);
            }
        }
        let mut flat_p = Vec::with_capacity(kernel.len() * num_states * num_actions * num_states);
        for (h, stage) in kernel.iter().enumerate() {
            if stage.len() != num_states {
                return Err(Error::ModelValidation(format!(
                    "kernel[{h}] has {} states, expected S = {num_states}",
                    stage.len()
                )));
            }
            for (s, per_action) in stage.iter().enumerate() {
                if per_action.len() != num_actions {
                    return Err(Error::ModelValidation(format!(
                        "kernel[{h}][{s}] has {} actions, expected A = {num_actions}",
                        per_action.len()
                    )));
                }
                for (a, row) in per_action.iter().enumerate() {
                    if row.len() != num_states {
                        return Err(Error::ModelValidation(format!(
                            "kernel[{h}][{s}][{a}] has {} entries, expected S = {num_states}",
                            row.len()
                        )));
                    }
                    flat_p.extend_from_slice(row);
                }
            }
        }
        Self::new(num_states, num_actions, horizon, initial_state, flat_r, flat_p)
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

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    #[inline]
    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.rewards[(h * self.num_states + s) * self.num_actions + a]
    }

    /// Next-state distribution `P_h(. | s, a)`; only defined for `h <= H-2`.
    #[inline]
    pub fn row(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = ((h * self.num_states + s) * self.num_actions + a) * self.num_states;
        &self.kernel[start..start + self.num_states]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// Same dimensions and initial state, different kernel and rewards.
    pub fn with_model(&self, rewards: Vec<f64>, kernel: Vec<f64>) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.horizon,
            self.initial_state,
            rewards,
            kernel,
        )
    }

    pub fn to_file(&self) -> MdpFile {
        let (s, a) = (self.num_states, self.num_actions);
        let rewards = (0..self.horizon)
            .map(|h| {
                (0..s)
                    .map(|ss| (0..a).map(|aa| self.reward(h, ss, aa)).collect())
                    .collect()
            })
            .collect();
        let kernel = (0..self.horizon - 1)
            .map(|h| {
                (0..s)
                    .map(|ss| (0..a).map(|aa| self.row(h, ss, aa).to_vec()).collect())
                    .collect()
            })
            .collect();
        MdpFile {
            num_states: s,
            num_actions: a,
            horizon: self.horizon,
            initial_state: self.initial_state,
            rewards,
            kernel,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MdpFile = serde_json::from_str(text)?;
        file.into_mdp()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// On-disk JSON layout of a [`TabularMdp`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpFile {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "s0")]
    pub initial_state: usize,
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub kernel: Vec<Vec<Vec<Vec<f64>>>>,
}

impl MdpFile {
    pub fn into_mdp(self) -> Result<TabularMdp> {
        TabularMdp::from_nested(
            self.num_states,
            self.num_actions,
            self.horizon,
            self.initial_state,
            &self.rewards,
            &self.kernel,
        )
    }
}

/// Deterministic Markov policy `pi[h][s]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MarkovPolicy {
    horizon: usize,
    num_states: usize,
    actions: Vec<usize>,
}

impl MarkovPolicy {
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        actions: Vec<usize>,
    ) -> Result<Self> {
        if actions.len() != horizon * num_states {
            return Err(Error::Shape(format!(
                "policy has {} entries, expected H*S = {}",
                actions.len(),
                horizon * num_states
            )));
        }
        if let Some(i) = actions.iter().position(|&a| a >= num_actions) {
            return Err(Error::Shape(format!(
                "policy[{}][{}] = {} is not an action index (A = {num_actions})",
                i / num_states,
                i % num_states,
                actions[i]
            )));
        }
        Ok(Self {
            horizon,
            num_states,
            actions,
        })
    }

    /// The policy that plays `action` everywhere.
    pub fn constant(horizon: usize, num_states: usize, action: usize) -> Self {
        Self {
            horizon,
            num_states,
            actions: vec![action; horizon * num_states],
        }
    }

    #[inline]
    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.num_states + s]
    }

    pub fn set_action(&mut self, h: usize, s: usize, a: usize) {
        self.actions[h * self.num_states + s] = a;
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
}

/// Stagewise values `v[h][s]` for `h = 0..=H`, with row `H` identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    horizon: usize,
    num_states: usize,
    values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(horizon: usize, num_states: usize) -> Self {
        Self {
            horizon,
            num_states,
            values: vec![0.0; (horizon + 1) * num_states],
        }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize) -> f64 {
        self.values[h * self.num_states + s]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, v: f64) {
        self.values[h * self.num_states + s] = v;
    }

    /// Values of every state at stage `h`.
    pub fn stage(&self, h: usize) -> &[f64] {
        &self.values[h * self.num_states..(h + 1) * self.num_states]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
}

/// Stagewise action values `q[h][s][a]` for `h = 0..H-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            values: vec![0.0; horizon * num_states * num_actions],
        }
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> f64 {
        self.values[(h * self.num_states + s) * self.num_actions + a]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, a: usize, q: f64) {
        self.values[(h * self.num_states + s) * self.num_actions + a] = q;
    }

    /// Q-values of all actions at `(h, s)`.
    pub fn actions(&self, h: usize, s: usize) -> &[f64] {
        let start = (h * self.num_states + s) * self.num_actions;
        &self.values[start..start + self.num_actions]
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Optimal-action sets and the global Q*-gap of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSummary {
    /// Smallest Q*-separation to a suboptimal action, or `f64::INFINITY`
    /// when no suboptimal action exists anywhere.
    pub gap_star: f64,
    /// `A*[h][s]`, flattened over `h * S + s`; always non-empty.
    pub optimal_actions: Vec<Vec<usize>>,
    pub optimal_value: ValueTable,
}

impl GapSummary {
    pub fn optimal_set(&self, h: usize, s: usize) -> &[usize] {
        &self.optimal_actions[h * self.optimal_value.num_states() + s]
    }

    pub fn is_optimal_action(&self, h: usize, s: usize, a: usize) -> bool {
        self.optimal_set(h, s).contains(&a)
    }

    pub fn is_degenerate(&self) -> bool {
        self.gap_star.is_infinite()
    }

    /// `1 / gap*`, which is zero for the degenerate sentinel.
    pub fn inverse_gap(&self) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            1.0 / self.gap_star
        }
    }
}

/// Output of [`backward_induction`].
#[derive(Debug, Clone)]
pub struct OptimalSolution {
    pub value: ValueTable,
    pub q: QTable,
    pub gaps: GapSummary,
}

impl OptimalSolution {
    /// Greedy policy with lowest-index tie-breaking.
    pub fn greedy_policy(&self) -> MarkovPolicy {
        let h_len = self.value.horizon();
        let s_len = self.value.num_states();
        let mut policy = MarkovPolicy::constant(h_len, s_len, 0);
        for h in 0..h_len {
            for s in 0..s_len {
                policy.set_action(h, s, argmax_low(self.q.actions(h, s)));
            }
        }
        policy
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `sum_{s'} row[s'] * next[s']`.
#[inline]
pub(crate) fn expect(row: &[f64], next: &[f64]) -> f64 {
    row.iter().zip(next).map(|(p, v)| p * v).sum()
}

/// Optimal values, Q-values, optimal-action sets and `gap*` by backward recursion.
pub fn backward_induction(mdp: &TabularMdp) -> OptimalSolution {
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut value = ValueTable::zeros(h_len, s_len);
    let mut q = QTable::zeros(h_len, s_len, a_len);
    let mut optimal_actions = vec![Vec::new(); h_len * s_len];
    let mut gap_star = f64::INFINITY;

    for h in (0..h_len).rev() {
        for s in 0..s_len {
            for a in 0..a_len {
                let mut qa = mdp.reward(h, s, a);
                if h + 1 < h_len {
                    qa += expect(mdp.row(h, s, a), value.stage(h + 1));
                }
                q.set(h, s, a, qa);
            }
            let qs = q.actions(h, s);
            let best = qs[argmax_low(qs)];
            let set: Vec<usize> = (0..a_len).filter(|&a| qs[a] >= best - OPT_TOL).collect();
            for (a, &qa) in qs.iter().enumerate() {
                if !set.contains(&a) {
                    gap_star = gap_star.min(best - qa);
                }
            }
            optimal_actions[h * s_len + s] = set;
            value.set(h, s, best);
        }
    }

    OptimalSolution {
        gaps: GapSummary {
            gap_star,
            optimal_actions,
            optimal_value: value.clone(),
        },
        value,
        q,
    }
}

/// Exact value of a deterministic Markov policy.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &MarkovPolicy) -> Result<ValueTable> {
    if policy.horizon() != mdp.horizon() || policy.num_states() != mdp.num_states() {
        return Err(Error::Shape(format!(
            "policy is {}x{} (HxS) but the model is {}x{}",
            policy.horizon(),
            policy.num_states(),
            mdp.horizon(),
            mdp.num_states()
        )));
    }
    if let Some(&a) = policy.actions().iter().find(|&&a| a >= mdp.num_actions()) {
        return Err(Error::Shape(format!(
            "policy uses action {a} but the model has A = {}",
            mdp.num_actions()
        )));
    }
    let (s_len, h_len) = (mdp.num_states(), mdp.horizon());
    let mut value = ValueTable::zeros(h_len, s_len);
    for h in (0..h_len).rev() {
        for s in 0..s_len {
            let a = policy.action(h, s);
            let mut v = mdp.reward(h, s, a);
            if h + 1 < h_len {
                v += expect(mdp.row(h, s, a), value.stage(h + 1));
            }
            value.set(h, s, v);
        }
    }
    Ok(value)
}

/// Stagewise membership in the optimal policy set: `pi[h][s]` is an optimal
/// action at every `(s, h)`.
pub fn is_optimal_policy(policy: &MarkovPolicy, gaps: &GapSummary) -> bool {
    (0..policy.horizon()).all(|h| {
        (0..policy.num_states()).all(|s| gaps.is_optimal_action(h, s, policy.action(h, s)))
    })
}

/// Like [`is_optimal_policy`] but only at the `(h, s)` pairs flagged in `mask`
/// (flattened over `h * S + s`).
pub fn is_optimal_on(policy: &MarkovPolicy, gaps: &GapSummary, mask: &[bool]) -> bool {
    let s_len = policy.num_states();
    (0..policy.horizon()).all(|h| {
        (0..s_len).all(|s| {
            !mask[h * s_len + s] || gaps.is_optimal_action(h, s, policy.action(h, s))
        })
    })
}

/// `max - min` of one stage of values.
pub fn span(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// States reachable with positive probability at each stage under some
/// action sequence, flattened over `h * S + s`.
pub fn reachable_states(mdp: &TabularMdp) -> Vec<bool> {
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut mask = vec![false; h_len * s_len];
    mask[mdp.initial_state()] = true;
    for h in 0..h_len.saturating_sub(1) {
        for s in 0..s_len {
            if !mask[h * s_len + s] {
                continue;
            }
            for a in 0..a_len {
                for (sp, &p) in mdp.row(h, s, a).iter().enumerate() {
                    if p > 0.0 {
                        mask[(h + 1) * s_len + sp] = true;
                    }
                }
            }
        }
    }
    mask
}

/// Result of exhaustive policy enumeration.
#[derive(Debug, Clone)]
pub struct OracleResult {
    /// `max_pi V^pi_0(s0)`.
    pub best_value: f64,
    /// Every policy within [`OPT_TOL`] of `best_value`.
    pub witnesses: Vec<MarkovPolicy>,
    pub policies_enumerated: u64,
}

/// Visits every deterministic Markov policy, calling `visit` with the policy
/// and its exact value table. Refuses instances above [`ENUMERATION_LIMIT`].
pub fn for_each_policy(
    mdp: &TabularMdp,
    mut visit: impl FnMut(&MarkovPolicy, &ValueTable),
) -> Result<u64> {
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let slots = (s_len * h_len) as i32;
    let count = (a_len as f64).powi(slots);
    if count > ENUMERATION_LIMIT as f64 {
        return Err(Error::TooLarge {
            policies: count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut policy = MarkovPolicy::constant(h_len, s_len, 0);
    let mut visited = 0u64;
    loop {
        let value = evaluate_policy(mdp, &policy)?;
        visit(&policy, &value);
        visited += 1;
        // mixed-radix increment over the H*S action slots
        let mut slot = 0;
        loop {
            if slot == policy.actions.len() {
                return Ok(visited);
            }
            policy.actions[slot] += 1;
            if policy.actions[slot] < a_len {
                break;
            }
            policy.actions[slot] = 0;
            slot += 1;
        }
    }
}

/// Brute-force optimum over all `A^(S*H)` deterministic Markov policies.
pub fn enumerate_policies_oracle(mdp: &TabularMdp) -> Result<OracleResult> {
    let s0 = mdp.initial_state();
    let mut scored: Vec<(f64, MarkovPolicy)> = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let visited = for_each_policy(mdp, |policy, value| {
        let v = value.get(0, s0);
        best = best.max(v);
        scored.push((v, policy.clone()));
    })?;
    let witnesses = scored
        .into_iter()
        .filter(|(v, _)| *v >= best - OPT_TOL)
        .map(|(_, p)| p)
        .collect();
    Ok(OracleResult {
        best_value: best,
        witnesses,
        policies_enumerated: visited,
    })
}
