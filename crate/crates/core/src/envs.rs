//! Benchmark instances: seeded random models with a gap floor, plus fixed
//! analytic chain and bandit instances whose gaps are known in closed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{backward_induction, TabularMdp};

/// Maximum number of draws the gap-floor rejection sampler may take.
pub const MAX_ATTEMPTS: u32 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EnvKind {
    RandomGap,
    Chain,
    Bandit,
}

/// Recipe for a benchmark instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    /// Required for `RANDOM_GAP`, ignored otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap_floor: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl EnvSpec {
    pub fn chain(horizon: usize) -> Self {
        Self {
            kind: EnvKind::Chain,
            num_states: 2,
            num_actions: 2,
            horizon,
            gap_floor: None,
            seed: 0,
        }
    }

    pub fn bandit(num_arms: usize) -> Self {
        Self {
            kind: EnvKind::Bandit,
            num_states: 1,
            num_actions: num_arms,
            horizon: 1,
            gap_floor: None,
            seed: 0,
        }
    }

    pub fn random_gap(s: usize, a: usize, h: usize, gap_floor: f64, seed: u64) -> Self {
        Self {
            kind: EnvKind::RandomGap,
            num_states: s,
            num_actions: a,
            horizon: h,
            gap_floor: Some(gap_floor),
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 || self.horizon == 0 {
            return Err(Error::Domain("S, A and H must be positive".into()));
        }
        match self.kind {
            EnvKind::RandomGap => match self.gap_floor {
                Some(g) if g > 0.0 => Ok(()),
                _ => Err(Error::Domain("RANDOM_GAP needs a positive gap_floor".into())),
            },
            EnvKind::Chain if self.num_states != 2 || self.num_actions != 2 => Err(
                Error::Domain("CHAIN is a 2-state, 2-action instance (S = A = 2)".into()),
            ),
            EnvKind::Bandit if self.horizon != 1 => {
                Err(Error::Domain("BANDIT instances have H = 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Builds the instance described by `spec`; deterministic in `spec.seed`.
pub fn generate(spec: &EnvSpec) -> Result<TabularMdp> {
    spec.validate()?;
    match spec.kind {
        EnvKind::Chain => Ok(chain_mdp(spec.horizon)),
        EnvKind::Bandit => Ok(bandit_mdp(spec.num_states, spec.num_actions)),
        EnvKind::RandomGap => random_gap_mdp(
            spec.num_states,
            spec.num_actions,
            spec.horizon,
            spec.gap_floor.unwrap_or_default(),
            spec.seed,
        ),
    }
}

/// Two-state deterministic chain.
///
/// Before the last stage, from state 0 action 0 stays (reward 0.2) and
/// action 1 moves to state 1 (reward 0); state 1 is absorbing with reward 0.
/// At the last stage state 0 pays 0.1 and state 1 pays 1.0 for either action.
/// For `H = 2` the gap is 0.7.
pub fn chain_mdp(horizon: usize) -> TabularMdp {
    let (s_len, a_len) = (2, 2);
    let mut rewards = vec![0.0; horizon * s_len * a_len];
    let mut kernel = vec![0.0; horizon.saturating_sub(1) * s_len * a_len * s_len];
    let r_idx = |h: usize, s: usize, a: usize| (h * s_len + s) * a_len + a;
    let p_idx = |h: usize, s: usize, a: usize, sp: usize| ((h * s_len + s) * a_len + a) * s_len + sp;
    for h in 0..horizon - 1 {
        rewards[r_idx(h, 0, 0)] = 0.2;
        kernel[p_idx(h, 0, 0, 0)] = 1.0;
        kernel[p_idx(h, 0, 1, 1)] = 1.0;
        kernel[p_idx(h, 1, 0, 1)] = 1.0;
        kernel[p_idx(h, 1, 1, 1)] = 1.0;
    }
    let last = horizon - 1;
    for a in 0..a_len {
        rewards[r_idx(last, 0, a)] = 0.1;
        rewards[r_idx(last, 1, a)] = 1.0;
    }
    TabularMdp::new(s_len, a_len, horizon, 0, rewards, kernel).expect("chain instance is valid")
}

/// Reward of arm `i` in the fixed bandit grid: 1.0, then 0.3 / i.
pub fn bandit_arm_reward(arm: usize) -> f64 {
    if arm == 0 {
        1.0
    } else {
        0.3 / arm as f64
    }
}

/// One-stage bandit; every state carries the same arm rewards. Gap 0.7 for `A >= 2`.
pub fn bandit_mdp(num_states: usize, num_arms: usize) -> TabularMdp {
    let rewards = (0..num_states)
        .flat_map(|_| (0..num_arms).map(bandit_arm_reward))
        .collect();
    TabularMdp::new(num_states, num_arms, 1, 0, rewards, Vec::new())
        .expect("bandit instance is valid")
}

/// Two-state, two-stage instance whose first stage is a pure coin flip
/// (all actions tie) and whose second stage is a two-armed bandit in each
/// state: arm rewards (0.9, 0.2) in state 0 and (0.2, 0.9) in state 1.
/// Gap 0.7. Both first-stage actions stay optimal, so the agent keeps
/// visiting them and every reachable count grows linearly.
pub fn staged_bandit_mdp() -> TabularMdp {
    let rewards = vec![
        0.5, 0.5, 0.5, 0.5, // h = 0
        0.9, 0.2, 0.2, 0.9, // h = 1
    ];
    let kernel = [0.5, 0.5].repeat(4);
    TabularMdp::new(2, 2, 2, 0, rewards, kernel).expect("staged bandit is valid")
}

/// Random rows from normalised unit exponentials and uniform rewards,
/// redrawn until `gap* >= gap_floor`.
pub fn random_gap_mdp(
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    gap_floor: f64,
    seed: u64,
) -> Result<TabularMdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_gap = 0.0f64;
    for _ in 0..MAX_ATTEMPTS {
        let rewards: Vec<f64> = (0..horizon * num_states * num_actions)
            .map(|_| rng.random::<f64>())
            .collect();
        let mut kernel = Vec::with_capacity(horizon.saturating_sub(1) * num_states * num_actions * num_states);
        for _ in 0..horizon.saturating_sub(1) * num_states * num_actions {
            let draws: Vec<f64> = (0..num_states).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = draws.iter().sum();
            kernel.extend(draws.iter().map(|d| d / total));
        }
        let mdp = TabularMdp::new(num_states, num_actions, horizon, 0, rewards, kernel)?;
        let gap = backward_induction(&mdp).gaps.gap_star;
        if gap >= gap_floor {
            return Ok(mdp);
        }
        best_gap = best_gap.max(gap);
    }
    Err(Error::Generation {
        attempts: MAX_ATTEMPTS,
        best_gap,
    })
}
