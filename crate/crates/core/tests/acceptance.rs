//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use regret_lab::agent::{BonusConfig, BonusSchedule};
use regret_lab::bounds::{
    compute_delta_k, compute_m_k, compute_n_bar, expectation_from_parts, regime_threshold, tail_from_parts,
    BoundInputs,
};
use regret_lab::diagnostics::{l1_concentration_probe, n_bar_stopping_check};
use regret_lab::envs::{chain_mdp, random_gap_mdp, staged_bandit_mdp, EnvSpec};
use regret_lab::harness::{
    emit_results, load_adaptive_tail_csv, load_tail_csv, run_experiment_with_threads, run_replication, EnvSource,
    ExperimentConfig, ExperimentResult, RunOptions,
};
use regret_lab::mdp::{backward_induction, enumerate_policies_oracle, for_each_policy, ValueTable, OPT_TOL};
use regret_lab::verify::{lemma1_grid, lemma2_trials, weissman_grid};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn close_sig(actual: f64, expected: f64, digits: i32) -> bool {
    (actual - expected).abs() <= 0.5 * 10f64.powi(1 - digits) * expected.abs()
}

/// Gap recomputed from the enumeration: `V*` is the pointwise max of all
/// policy values, then Q-values are formed directly from the model.
fn oracle_gap(mdp: &regret_lab::TabularMdp) -> f64 {
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut best = ValueTable::zeros(h_len, s_len);
    for h in 0..h_len {
        for s in 0..s_len {
            best.set(h, s, f64::NEG_INFINITY);
        }
    }
    for_each_policy(mdp, |_, v| {
        for h in 0..h_len {
            for s in 0..s_len {
                if v.get(h, s) > best.get(h, s) {
                    best.set(h, s, v.get(h, s));
                }
            }
        }
    })
    .unwrap();
    let mut gap = f64::INFINITY;
    for h in 0..h_len {
        for s in 0..s_len {
            let qs: Vec<f64> = (0..a_len)
                .map(|a| {
                    let future = if h + 1 < h_len {
                        mdp.row(h, s, a).iter().enumerate().map(|(sp, p)| p * best.get(h + 1, sp)).sum()
                    } else {
                        0.0
                    };
                    mdp.reward(h, s, a) + future
                })
                .collect();
            let top = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for q in qs {
                if q < top - OPT_TOL {
                    gap = gap.min(top - q);
                }
            }
        }
    }
    gap
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_value = 0.0f64;
    let mut worst_gap = 0.0f64;
    for _ in 0..100 {
        let s = rng.random_range(1..=3);
        let a = rng.random_range(1..=2);
        let h = rng.random_range(1..=3);
        let mdp = random_gap_mdp(s, a, h, 1e-9, rng.random()).unwrap();
        let sol = backward_induction(&mdp);
        let oracle = enumerate_policies_oracle(&mdp).unwrap();
        worst_value = worst_value.max((sol.value.get(0, 0) - oracle.best_value).abs());
        let g = oracle_gap(&mdp);
        let dg = if g.is_infinite() && sol.gaps.gap_star.is_infinite() {
            0.0
        } else {
            (g - sol.gaps.gap_star).abs()
        };
        worst_gap = worst_gap.max(dg);
    }
    outcome(
        worst_value <= 1e-9 && worst_gap <= 1e-9,
        format!("100 instances, max |V* - oracle| = {worst_value:.2e}, max |gap - oracle| = {worst_gap:.2e}"),
    )
}

fn criterion_2() -> Outcome {
    let cfg = BonusConfig::new(BonusSchedule::KD, 0.5, 1.0, 500).unwrap();
    let opts = RunOptions {
        record_diagnostics: true,
        gamma: 0.0,
        ..RunOptions::default()
    };
    let instances = [("CHAIN", chain_mdp(3)), ("RANDOM_GAP", random_gap_mdp(2, 2, 3, 0.05, 7).unwrap())];
    let mut checks = 0u64;
    let mut failures = 0u64;
    let mut good = 0u64;
    let mut worst_residual = 0.0f64;
    let mut worst_r1 = f64::NEG_INFINITY;
    for (i, (_, mdp)) in instances.iter().enumerate() {
        for rep in 0..50u64 {
            let out = run_replication(mdp, &cfg, 1000 * i as u64 + rep, opts).unwrap();
            let d = out.diagnostics.unwrap();
            checks += d.history.len() as u64;
            good += d.history.iter().filter(|e| e.good_event).count() as u64;
            failures += d.conditional_optimism_failures();
            worst_residual = worst_residual.max(d.decomposition_residual);
            worst_r1 = worst_r1.max(d.decomposition.worst_good_event_r1);
        }
    }
    outcome(
        failures == 0 && checks >= 10_000 && worst_residual <= 1e-6 && worst_r1 <= 1e-9,
        format!(
            "{checks} episode checks ({good} under the good event), {failures} good-event episodes without optimism; \
             decomposition residual {worst_residual:.1e}, worst good-event R1 term {worst_r1:.2e}"
        ),
    )
}

fn experiment(schedule: BonusSchedule, dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        env: EnvSource::Spec(EnvSpec::chain(2)),
        bonus: BonusConfig::new(schedule, 0.5, 1.0, 200).unwrap(),
        gamma: 0.0,
        replications: 2000,
        master_seed: 20_241_019,
        output_dir: dir.to_path_buf(),
        record_diagnostics: false,
    }
}

fn run_and_emit(cfg: &ExperimentConfig, threads: Option<usize>) -> ExperimentResult {
    let result = run_experiment_with_threads(cfg, threads).unwrap();
    emit_results(&result, &cfg.output_dir).unwrap();
    result
}

fn criteria_3_4_9() -> (Outcome, Outcome, Outcome) {
    let root = tempfile::tempdir().unwrap();
    let slack = 3.0 * (0.25f64 / 2000.0).sqrt();

    let kd_dir = root.path().join("kd");
    let kd = run_and_emit(&experiment(BonusSchedule::KD, &kd_dir), None);
    let kd_rows = load_tail_csv(kd_dir.join("tail.csv")).unwrap();
    let ki_dir = root.path().join("ki");
    let ki = run_and_emit(&experiment(BonusSchedule::KI, &ki_dir), None);
    let ki_rows = load_adaptive_tail_csv(ki_dir.join("tail_gamma_x.csv")).unwrap();

    let kd_active = kd_rows.iter().filter(|r| r.clipped_bound < 1.0).count();
    let kd_bad = kd_rows
        .iter()
        .filter(|r| r.empirical_ccdf > 1.0 || (r.clipped_bound < 1.0 && r.empirical_ccdf > r.clipped_bound + slack))
        .count();
    let ki_active = ki_rows.iter().filter(|r| r.clipped_bound < 1.0).count();
    let ki_bad = ki_rows
        .iter()
        .filter(|r| r.empirical_ccdf > 1.0 || (r.clipped_bound < 1.0 && r.empirical_ccdf > r.clipped_bound + slack))
        .count();
    let c3 = outcome(
        kd_bad == 0 && ki_bad == 0,
        format!(
            "KD: {} grid points, {kd_active} with bound < 1, {kd_bad} violations; \
             KI (gamma per x): {} points, {ki_active} with bound < 1, {ki_bad} violations; \
             max regret {:.2} vs baseline H*ceil(K^gamma) + m_K = {:.1}",
            kd_rows.len(),
            ki_rows.len(),
            kd.empirical_ccdf.max(),
            kd.bound_report.burn_in + kd.bound_report.m_k
        ),
    );

    let c4_kd = kd.mean_regret() < kd.bound_report.expectation_bound;
    let c4_ki = ki.mean_regret() < ki.bound_report.expectation_bound;
    let c4 = outcome(
        c4_kd && c4_ki,
        format!(
            "KD mean {:.3} < {:.1} (loose by {:.0}x); KI mean {:.3} < {:.1}",
            kd.mean_regret(),
            kd.bound_report.expectation_bound,
            kd.bound_report.expectation_bound / kd.mean_regret().max(f64::MIN_POSITIVE),
            ki.mean_regret(),
            ki.bound_report.expectation_bound
        ),
    );

    // same configuration again, into a fresh directory and on a single worker
    let again_dir = root.path().join("kd-again");
    let mut again_cfg = experiment(BonusSchedule::KD, &again_dir);
    again_cfg.output_dir = again_dir.clone();
    run_and_emit(&again_cfg, Some(1));
    let same = |name: &str| std::fs::read(kd_dir.join(name)).unwrap() == std::fs::read(again_dir.join(name)).unwrap();
    let c9 = outcome(
        same("tail.csv") && same("summary.json"),
        format!(
            "tail.csv identical: {}, summary.json identical: {} (all cores vs one worker)",
            same("tail.csv"),
            same("summary.json")
        ),
    );
    (c3, c4, c9)
}

fn criterion_5() -> Outcome {
    let (dominance, tight) = lemma1_grid().unwrap();
    outcome(
        dominance.passed() && tight.passed() && dominance.cells == 648,
        format!(
            "{} cells, {} failures, max lhs/rhs - (1 + 1e-9) = {:.2e}; KD alpha=0: {} cells, max |ratio - 1| - 1e-12 = {:.2e}",
            dominance.cells, dominance.failures, dominance.worst_margin, tight.cells, tight.worst_margin
        ),
    )
}

fn criterion_6() -> Outcome {
    let chain = lemma2_trials("CHAIN", &chain_mdp(3), 200, 61).unwrap();
    let random = lemma2_trials("RANDOM_GAP", &random_gap_mdp(2, 2, 3, 0.05, 7).unwrap(), 200, 62).unwrap();
    let ok = chain.cells - chain.failures + random.cells - random.failures;
    outcome(
        chain.passed() && random.passed() && chain.cells + random.cells == 400,
        format!("{ok}/400 trials satisfy the implication with enumeration-confirmed subsets"),
    )
}

/// Exact `P(|X/n - 1/2| > eps/2)` for `X ~ Bin(n, 1/2)`, the L1 deviation of a two-cell row.
fn binomial_two_cell_tail(n: u64, eps: f64) -> f64 {
    let mut log_choose = 0.0f64;
    let mut total = 0.0;
    for k in 0..=n {
        if k > 0 {
            log_choose += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        let dev = 2.0 * ((k as f64) / (n as f64) - 0.5).abs();
        // exceed strictly; lattice points within rounding of eps count as equal
        if dev > eps + 1e-12 {
            total += (log_choose - n as f64 * std::f64::consts::LN_2).exp();
        }
    }
    total
}

fn criterion_7() -> Outcome {
    let trials = 100_000;
    let grid = weissman_grid(trials, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let probe = l1_concentration_probe(&[0.5, 0.5], 50, trials, 0.4, &mut rng).unwrap();
    let exact = binomial_two_cell_tail(50, 0.4);
    let se = (exact * (1.0 - exact) / trials as f64).sqrt();
    let oracle_ok = (probe.exceed_rate - exact).abs() <= 3.0 * se;
    outcome(
        grid.passed() && oracle_ok && probe.dominated(),
        format!(
            "{} cells, {} failures, worst rate - bound - slack = {:.3e}; (2, 50, 0.4): rate {:.5} vs exact {:.5} (3 se = {:.5}), bound {:.4}",
            grid.cells,
            grid.failures,
            grid.worst_margin,
            probe.exceed_rate,
            exact,
            3.0 * se,
            probe.weissman_bound
        ),
    )
}

fn criterion_8() -> Outcome {
    let mdp = staged_bandit_mdp();
    let sol = backward_induction(&mdp);
    let mut inputs = BoundInputs {
        num_states: 2,
        num_actions: 2,
        horizon: 2,
        episodes: 1,
        alpha: 0.0,
        mu: 1.0,
        gamma: 0.0,
        gap_star: sol.gaps.gap_star,
        schedule: BonusSchedule::KD,
    };
    // with alpha = 0 the thresholds do not depend on K
    let n_bar_max = (0..2).map(|h| compute_n_bar(&inputs, h).unwrap()).fold(0.0, f64::max);
    let episodes = 4 * 2 * n_bar_max.ceil() as u64;
    inputs.episodes = episodes;
    let cfg = BonusConfig::new(BonusSchedule::KD, 0.0, 1.0, episodes).unwrap();
    let opts = RunOptions {
        record_diagnostics: true,
        ..RunOptions::default()
    };
    let mut gated = 0;
    let mut holds = true;
    for seed in 0..5 {
        let d = run_replication(&mdp, &cfg, seed, opts).unwrap().diagnostics.unwrap();
        let report = n_bar_stopping_check(&d.history, &inputs).unwrap();
        holds &= report.holds;
        gated += report.gated_episodes;
    }
    outcome(
        holds && gated > 0,
        format!("max n_bar = {n_bar_max:.1}, K = {episodes}, 5 runs, {gated} gated episodes, all played optimal policies: {holds}"),
    )
}

fn criterion_10() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let base = BoundInputs {
        num_states: 2,
        num_actions: 2,
        horizon: 2,
        episodes: 100,
        alpha: 0.0,
        mu: 1.0,
        gamma: 0.0,
        gap_star: 0.5,
        schedule: BonusSchedule::KD,
    };
    let m_k = compute_m_k(&base).unwrap();
    let m_oracle = 48.0 * 4.0 * (2.0 * ln2 + 2.0) / 1.5;
    let delta = compute_delta_k(&BoundInputs { alpha: 0.5, ..base });
    let delta_oracle = 800.0 * (-20.0f64).exp();
    let n_bar = compute_n_bar(&BoundInputs { horizon: 3, ..base }, 0).unwrap();
    let n_bar_oracle = (4.0 * ln2 + 4.0) * 144.0 / 0.25;
    let x = m_k + 2.0 + 120.0;
    let tail = tail_from_parts(x, 2.0, m_k, delta, 2, 100);
    let tail_oracle = (-9.0f64).exp() + delta_oracle;
    let expectation = expectation_from_parts(m_k, 2, 100, 1, delta);
    let threshold = regime_threshold(&BoundInputs {
        episodes: 10_000,
        alpha: 0.5,
        ..base
    });

    let checks = [
        ("m_K", m_k, m_oracle, 433.45),
        ("delta_K", delta, delta_oracle, 1.649e-6),
        ("n_bar", n_bar, n_bar_oracle, 3901.0),
        ("tail", tail.raw, tail_oracle, 1.2341e-4 + 1.649e-6),
        ("E bound", expectation, m_oracle + 2.0 + 8.0 * 99.0 * delta_oracle, 435.45),
        ("regime", threshold, 2f64.powf(1.5) * 1e3, 2828.4),
    ];
    let mut failed = Vec::new();
    for (name, got, oracle, stated) in checks {
        if !(close_sig(got, oracle, 10) && close_sig(got, stated, 4)) {
            failed.push(format!("{name}: {got} (oracle {oracle}, stated {stated})"));
        }
    }
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("m_K = {m_k:.2}, delta_K = {delta:.4e}, n_bar = {n_bar:.1}, tail = {:.4e}, E = {expectation:.2}, regime = {threshold:.1}", tail.raw)
        } else {
            failed.join("; ")
        },
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let timed = |id: u32, name: &'static str, f: &dyn Fn() -> Outcome, results: &mut Vec<_>| {
        let start = Instant::now();
        let o = f();
        results.push((id, name, o, start.elapsed().as_secs_f64()));
    };
    timed(1, "DP correctness", &criterion_1, &mut results);
    timed(2, "conditional optimism", &criterion_2, &mut results);
    let start = Instant::now();
    let (c3, c4, c9) = criteria_3_4_9();
    let shared = start.elapsed().as_secs_f64();
    results.push((3, "tail dominance", c3, shared));
    results.push((4, "expectation dominance", c4, shared));
    timed(5, "union-bound sum grid", &criterion_5, &mut results);
    timed(6, "perturbation transfer", &criterion_6, &mut results);
    timed(7, "L1 concentration probe", &criterion_7, &mut results);
    timed(8, "visit-threshold stopping", &criterion_8, &mut results);
    results.push((9, "determinism", c9, shared));
    timed(10, "bound arithmetic", &criterion_10, &mut results);
    results.sort_by_key(|r| r.0);

    let mut failures = 0;
    for (id, name, o, secs) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        if !o.passed {
            failures += 1;
        }
        println!("criterion {id:>2} [{tag}] {name} ({secs:.1}s): {}", o.detail);
    }
    println!("acceptance: {} passed, {failures} failed", results.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
