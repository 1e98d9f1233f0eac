//! Parameter grids for the lemma and concentration checks.
//!
//! Each runner returns a [`GridOutcome`] with the number of cells, the number
//! that failed and the worst margin seen. A margin is positive when a cell
//! fails, so `worst_margin <= 0` means every cell passed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{BonusConfig, BonusSchedule};
use crate::diagnostics::{l1_concentration_probe, lemma1_sum_check, lemma2_transfer_check, sample_perturbation};
use crate::error::Result;
use crate::harness::mix_seed;
use crate::mdp::{backward_induction, enumerate_policies_oracle, evaluate_policy, TabularMdp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub check: String,
    pub cells: u64,
    pub failures: u64,
    pub worst_margin: f64,
}

impl GridOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

pub const LEMMA1_EPISODES: [u64; 4] = [1, 10, 100, 1000];
pub const LEMMA1_ALPHAS: [f64; 3] = [0.0, 0.5, 1.0];
pub const LEMMA1_GAMMAS: [f64; 3] = [0.0, 0.5, 1.0];
pub const LEMMA1_MUS: [f64; 3] = [0.5, 1.0, 2.0];

/// Union-bound sum check over `K x alpha x gamma x mu x schedule x h` with `H = 3`, `S = 2`.
///
/// Returns the dominance grid and, separately, the tightness check on the
/// KD `alpha = 0` cells (ratio 1 within 1e-12).
pub fn lemma1_grid() -> Result<(GridOutcome, GridOutcome)> {
    let (horizon, num_states) = (3, 2);
    let mut dominance = GridOutcome {
        check: "union sum lhs <= rhs".into(),
        cells: 0,
        failures: 0,
        worst_margin: f64::NEG_INFINITY,
    };
    let mut tight = GridOutcome {
        check: "union sum KD alpha=0 ratio = 1".into(),
        cells: 0,
        failures: 0,
        worst_margin: f64::NEG_INFINITY,
    };
    for schedule in [BonusSchedule::KD, BonusSchedule::KI] {
        for k in LEMMA1_EPISODES {
            for alpha in LEMMA1_ALPHAS {
                for mu in LEMMA1_MUS {
                    let cfg = BonusConfig::new(schedule, alpha, mu, k)?;
                    for gamma in LEMMA1_GAMMAS {
                        for h in 0..horizon {
                            let r = lemma1_sum_check(&cfg, horizon, num_states, h, gamma)?;
                            let margin = r.ratio() - (1.0 + 1e-9);
                            dominance.cells += 1;
                            dominance.failures += u64::from(!r.holds());
                            dominance.worst_margin = dominance.worst_margin.max(margin);
                            if schedule == BonusSchedule::KD && alpha == 0.0 {
                                let dev = (r.ratio() - 1.0).abs() - 1e-12;
                                tight.cells += 1;
                                tight.failures += u64::from(dev > 0.0);
                                tight.worst_margin = tight.worst_margin.max(dev);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dominance, tight))
}

pub const PROBE_STATES: [usize; 3] = [2, 3, 4];
pub const PROBE_COUNTS: [u64; 3] = [10, 50, 200];
pub const PROBE_EPS: [f64; 3] = [0.2, 0.5, 1.0];

/// Weissman probe over the `(S, n, eps)` grid on uniform rows.
///
/// Margin is `rate - bound - slack`.
pub fn weissman_grid(trials: u64, seed: u64) -> Result<GridOutcome> {
    let cells: Vec<(usize, u64, f64)> = PROBE_STATES
        .iter()
        .flat_map(|&s| PROBE_COUNTS.iter().flat_map(move |&n| PROBE_EPS.iter().map(move |&e| (s, n, e))))
        .collect();
    let margins = cells
        .par_iter()
        .enumerate()
        .map(|(i, &(s, n, eps))| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let row = vec![1.0 / s as f64; s];
            let r = l1_concentration_probe(&row, n, trials, eps, &mut rng)?;
            Ok(r.exceed_rate - r.weissman_bound - r.slack())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GridOutcome {
        check: "weissman rate <= bound + slack".into(),
        cells: margins.len() as u64,
        failures: margins.iter().filter(|m| **m > 0.0).count() as u64,
        worst_margin: margins.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Draws `trials` in-threshold perturbations of `mdp` and checks the
/// implication, confirming every subset claim by enumeration: each optimal
/// policy of the perturbed model must attain the true optimal value.
///
/// Margin is the largest true-value shortfall of a perturbed-optimal policy.
pub fn lemma2_trials(name: &str, mdp: &TabularMdp, trials: u64, seed: u64) -> Result<GridOutcome> {
    let truth = backward_induction(mdp);
    let gap = truth.gaps.gap_star;
    let v_star = truth.value.get(0, mdp.initial_state());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outcome = GridOutcome {
        check: format!("transfer implication ({name})"),
        cells: 0,
        failures: 0,
        worst_margin: f64::NEG_INFINITY,
    };
    for _ in 0..trials {
        let (kernel, rewards) = sample_perturbation(mdp, gap, &mut rng);
        let r = lemma2_transfer_check(mdp, &kernel, &rewards)?;
        let perturbed = mdp.with_model(rewards, kernel)?;
        let oracle = enumerate_policies_oracle(&perturbed)?;
        let mut shortfall = f64::NEG_INFINITY;
        for policy in &oracle.witnesses {
            let v = evaluate_policy(mdp, policy)?.get(0, mdp.initial_state());
            shortfall = shortfall.max(v_star - v);
        }
        let ok = r.conditions_hold && r.implication_holds() && shortfall <= 1e-9;
        outcome.cells += 1;
        outcome.failures += u64::from(!ok);
        outcome.worst_margin = outcome.worst_margin.max(shortfall - 1e-9);
    }
    Ok(outcome)
}

/// All grids used by the `verify` subcommand.
pub fn run_all(probe_trials: u64, lemma2_trials_per_instance: u64, seed: u64) -> Result<Vec<GridOutcome>> {
    let (dominance, tight) = lemma1_grid()?;
    let chain = crate::envs::chain_mdp(3);
    let random = crate::envs::random_gap_mdp(2, 2, 3, 0.05, seed)?;
    Ok(vec![
        dominance,
        tight,
        weissman_grid(probe_trials, seed)?,
        lemma2_trials("CHAIN", &chain, lemma2_trials_per_instance, seed)?,
        lemma2_trials("RANDOM_GAP", &random, lemma2_trials_per_instance, seed ^ 1)?,
    ])
}

/// Fixed-width pass/fail table.
pub fn format_table(rows: &[GridOutcome]) -> String {
    let width = rows.iter().map(|r| r.check.len()).max().unwrap_or(5).max(5);
    let mut out = format!("{:<width$}  {:>6}  {:>8}  {:>13}  result\n", "check", "cells", "failures", "worst_margin");
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>6}  {:>8}  {:>13.6e}  {}\n",
            r.check,
            r.cells,
            r.failures,
            r.worst_margin,
            if r.passed() { "PASS" } else { "FAIL" }
        ));
    }
    out
}
