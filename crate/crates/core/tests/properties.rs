use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use regret_lab::agent::{act_and_step, bonus, plan, AgentState, BonusConfig, BonusSchedule};
use regret_lab::bounds::{compute_delta_k, compute_m_k, compute_n_bar, tail_bound, BoundInputs};
use regret_lab::envs::random_gap_mdp;
use regret_lab::harness::EmpiricalCcdf;
use regret_lab::mdp::{backward_induction, enumerate_policies_oracle};

fn schedule() -> impl Strategy<Value = BonusSchedule> {
    prop_oneof![Just(BonusSchedule::KD), Just(BonusSchedule::KI)]
}

fn inputs() -> impl Strategy<Value = BoundInputs> {
    (1usize..5, 1usize..4, 1usize..6, 1u64..5000, 0.0f64..=1.0, 0.1f64..3.0, 0.0f64..=1.0, 0.01f64..1.0, schedule())
        .prop_map(|(s, a, h, k, alpha, mu, gamma, gap, schedule)| BoundInputs {
            num_states: s,
            num_actions: a,
            horizon: h,
            episodes: k,
            alpha,
            mu,
            gamma,
            gap_star: gap,
            schedule,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dp_matches_enumeration(s in 1usize..4, a in 1usize..3, h in 1usize..4, seed in any::<u64>()) {
        let mdp = random_gap_mdp(s, a, h, 1e-12, seed).unwrap();
        let sol = backward_induction(&mdp);
        let oracle = enumerate_policies_oracle(&mdp).unwrap();
        prop_assert!((sol.value.get(0, 0) - oracle.best_value).abs() <= 1e-9);
        let greedy = sol.greedy_policy();
        prop_assert!(oracle.witnesses.contains(&greedy));
    }

    #[test]
    fn bonus_shrinks_with_visits(cfg_k in 1u64..1000, alpha in 0.0f64..=1.0, mu in 0.1f64..3.0,
                                 sched in schedule(), n in 1u64..500, k in 0u64..1000) {
        let cfg = BonusConfig::new(sched, alpha, mu, cfg_k).unwrap();
        let b = bonus(&cfg, 0, k, n, 3, 4);
        prop_assert!(b > 0.0 && b.is_finite());
        prop_assert!(bonus(&cfg, 0, k, n + 1, 3, 4) <= b);
        prop_assert!(bonus(&cfg, 0, k, 0, 3, 4).is_infinite());
        if sched == BonusSchedule::KI {
            prop_assert!(bonus(&cfg, 0, k + 1, n, 3, 4) >= b);
        }
    }

    #[test]
    fn tail_is_a_non_increasing_probability(inp in inputs(), x in 0.0f64..1e6, dx in 0.0f64..1e5) {
        let t0 = tail_bound(&inp, x).unwrap();
        let t1 = tail_bound(&inp, x + dx).unwrap();
        prop_assert!((0.0..=1.0).contains(&t0.clipped));
        prop_assert!(t1.clipped <= t0.clipped);
        prop_assert!(t0.raw >= t0.clipped);
    }

    #[test]
    fn bounds_are_monotone_in_mu(inp in inputs(), factor in 1.01f64..4.0) {
        let bigger = BoundInputs { mu: inp.mu * factor, ..inp };
        prop_assert!(compute_m_k(&bigger).unwrap() >= compute_m_k(&inp).unwrap());
        prop_assert!(compute_delta_k(&bigger) <= compute_delta_k(&inp));
        prop_assert!(compute_n_bar(&bigger, 0).unwrap() >= compute_n_bar(&inp, 0).unwrap());
    }

    #[test]
    fn schedules_agree_at_gamma_one(inp in inputs()) {
        let kd = BoundInputs { gamma: 1.0, schedule: BonusSchedule::KD, ..inp };
        let ki = BoundInputs { schedule: BonusSchedule::KI, ..kd };
        prop_assert_eq!(compute_delta_k(&kd), compute_delta_k(&ki));
    }

    #[test]
    fn counts_are_conserved_and_q_is_clipped(s in 1usize..4, a in 1usize..3, h in 1usize..4,
                                             seed in any::<u64>(), episodes in 1u64..60) {
        let mdp = random_gap_mdp(s, a, h, 1e-12, seed).unwrap();
        let cfg = BonusConfig::new(BonusSchedule::KI, 0.5, 1.0, episodes).unwrap();
        let mut state = AgentState::for_mdp(&mdp);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..episodes {
            let p = plan(&mdp, &state, &cfg);
            for stage in 0..h {
                for st in 0..s {
                    for q in p.q.actions(stage, st) {
                        prop_assert!(*q <= (h - stage) as f64);
                    }
                }
            }
            let t = act_and_step(&mdp, &p.policy, &mut rng).unwrap();
            state.update(&t);
        }
        for stage in 0..h {
            let mut stage_total = 0;
            for st in 0..s {
                for ac in 0..a {
                    let n = state.pair_count(stage, st, ac);
                    stage_total += n;
                    if stage + 1 < h {
                        let next: u64 = (0..s).map(|sp| state.triple_count(stage, st, ac, sp)).sum();
                        prop_assert_eq!(next, n);
                        if n > 0 {
                            let mass: f64 = state.empirical_row(stage, st, ac).iter().sum();
                            prop_assert!((mass - 1.0).abs() < 1e-12);
                        }
                    }
                }
            }
            prop_assert_eq!(stage_total, episodes);
        }
    }

    #[test]
    fn ccdf_is_a_right_continuous_step(samples in prop::collection::vec(0.0f64..100.0, 1..50),
                                       x in -10.0f64..120.0, dx in 0.0f64..50.0) {
        let c = EmpiricalCcdf::new(&samples).unwrap();
        let v = c.eval(x);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(c.eval(x + dx) <= v);
        let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(c.eval(min), 1.0);
        prop_assert_eq!(c.eval(max + 1e-9), 0.0);
        let at_max = samples.iter().filter(|v| **v == max).count() as f64 / samples.len() as f64;
        prop_assert_eq!(c.eval(max), at_max);
    }
}
