//! Monte Carlo experiment orchestration.
//!
//! A run resolves the environment, executes `R` independent replications of
//! the agent (in parallel, gathered back into replication order), builds the
//! empirical CCDF of the final regrets and overlays the closed-form bounds.
//!
//! Replication `i` draws from `ChaCha8Rng::seed_from_u64(mix_seed(master, i))`
//! where [`mix_seed`] is the SplitMix64 finalizer applied to
//! `master ^ (i * 0x9E3779B97F4A7C15)`. The worker count is read from
//! `REGRET_LAB_THREADS` (unset or 0 = all cores) and never changes results.
//!
//! Output files:
//!
//! | file                  | header                                              |
//! |-----------------------|-----------------------------------------------------|
//! | `tail.csv`            | `x,empirical_ccdf,raw_bound,clipped_bound`          |
//! | `tail_gamma_x.csv`    | `x,empirical_ccdf,gamma_x,raw_bound,clipped_bound` (KI only) |
//! | `summary.json`        | bound report, diagnostics, config echo, seeds       |
//! | `trajectories.csv`    | `rep,episode,cumulative_regret` (diagnostics runs)  |

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{act_and_step, plan, AgentState, BonusConfig, BonusSchedule};
use crate::bounds::{tail_bound_adaptive, BoundInputs, BoundReport};
use crate::diagnostics::{
    decompose_regret, eta_increments, good_event_check, optimism_check, DecompositionTrace, EpisodeSnapshot,
};
use crate::envs::{generate, EnvSpec};
use crate::error::{Error, Result};
use crate::mdp::{backward_induction, evaluate_policy, is_optimal_on, is_optimal_policy, reachable_states, TabularMdp};

/// Environment variable capping the rayon worker count.
pub const THREADS_ENV: &str = "REGRET_LAB_THREADS";

/// Odd multiplier applied to the replication index before mixing.
pub const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Number of evenly spaced points in the tail grid (sample points are added on top).
pub const TAIL_GRID_POINTS: usize = 512;

/// Environment given either inline or as a path to an MDP file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvSource {
    Spec(EnvSpec),
    Path(PathBuf),
}

impl EnvSource {
    pub fn resolve(&self) -> Result<TabularMdp> {
        match self {
            EnvSource::Spec(spec) => generate(spec),
            EnvSource::Path(path) => TabularMdp::load(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSource,
    pub bonus: BonusConfig,
    /// Only used when evaluating bounds; the agent never sees it.
    pub gamma: f64,
    pub replications: u64,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub record_diagnostics: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.bonus.validate()?;
        if self.replications == 0 {
            return Err(Error::Domain("replications must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Domain(format!("gamma = {} is outside [0, 1]", self.gamma)));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON of the config without `output_dir`, so runs into
    /// different directories echo and hash identically.
    pub fn echo(&self) -> Result<serde_json::Value> {
        let mut value = serde_json::to_value(self)?;
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        Ok(value)
    }

    /// Hex SHA-256 of [`ExperimentConfig::echo`].
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_string(&self.echo()?)?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// SplitMix64 finalizer over `master ^ (rep * SEED_STRIDE)`.
pub fn mix_seed(master: u64, rep: u64) -> u64 {
    let mut z = (master ^ rep.wrapping_mul(SEED_STRIDE)).wrapping_add(SEED_STRIDE);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOptions {
    pub record_trajectory: bool,
    pub record_diagnostics: bool,
    pub record_eta: bool,
    /// Burn-in exponent used for the regret decomposition.
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationDiagnostics {
    pub history: Vec<EpisodeSnapshot>,
    pub decomposition: DecompositionTrace,
    /// `|R0 + R1 + R2 - R_K|`.
    pub decomposition_residual: f64,
}

impl ReplicationDiagnostics {
    pub fn good_event_violations(&self) -> u64 {
        self.history.iter().filter(|e| !e.good_event).count() as u64
    }

    pub fn optimism_violations(&self) -> u64 {
        self.history.iter().filter(|e| !e.optimism).count() as u64
    }

    /// Episodes where the good event held yet optimism failed.
    pub fn conditional_optimism_failures(&self) -> u64 {
        self.history.iter().filter(|e| e.good_event && !e.optimism).count() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub seed: u64,
    pub final_regret: f64,
    /// Cumulative regret after each episode.
    pub trajectory: Option<Vec<f64>>,
    pub diagnostics: Option<ReplicationDiagnostics>,
}

/// Runs `cfg.total_episodes` episodes of plan, act and update on `mdp`.
///
/// Regret is measured by exact evaluation of each played policy.
pub fn run_replication(mdp: &TabularMdp, cfg: &BonusConfig, seed: u64, opts: RunOptions) -> Result<ReplicationOutcome> {
    cfg.validate()?;
    let star = backward_induction(mdp);
    let s0 = mdp.initial_state();
    let v_star0 = star.value.get(0, s0);
    let (s_len, a_len, h_len) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let reachable = reachable_states(mdp);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = AgentState::for_mdp(mdp);
    let mut total = 0.0;
    let mut trajectory = opts.record_trajectory.then(|| Vec::with_capacity(cfg.total_episodes as usize));
    let mut history = Vec::new();

    for k in 0..cfg.total_episodes {
        let planned = plan(mdp, &state, cfg);
        let mut snapshot = None;
        if opts.record_diagnostics {
            let min_reachable_counts = (0..h_len)
                .map(|h| {
                    (0..s_len)
                        .filter(|&s| reachable[h * s_len + s])
                        .flat_map(|s| (0..a_len).map(move |a| (s, a)))
                        .map(|(s, a)| state.pair_count(h, s, a))
                        .min()
                        .unwrap_or(u64::MAX)
                })
                .collect();
            snapshot = Some(EpisodeSnapshot {
                regret: 0.0,
                optimistic_value: planned.value.get(0, s0),
                policy_optimal: is_optimal_policy(&planned.policy, &star.gaps),
                policy_optimal_reachable: is_optimal_on(&planned.policy, &star.gaps, &reachable),
                good_event: good_event_check(mdp, &state, cfg).holds,
                optimism: optimism_check(&planned.value, &star.value).holds,
                min_reachable_counts,
                eta: None,
            });
        }

        let path = act_and_step(mdp, &planned.policy, &mut rng)?;
        let policy_value = evaluate_policy(mdp, &planned.policy)?;
        let mut regret = v_star0 - policy_value.get(0, s0);
        if regret < -1e-9 {
            return Err(Error::Contract(format!("episode {k} has negative regret {regret}")));
        }
        // rounding noise from evaluating an optimal policy
        regret = regret.max(0.0);
        total += regret;
        if let Some(t) = trajectory.as_mut() {
            t.push(total);
        }
        if let Some(mut snap) = snapshot {
            snap.regret = regret;
            if opts.record_eta {
                snap.eta = Some(eta_increments(
                    mdp,
                    &planned.value,
                    &policy_value,
                    &path,
                    snap.policy_optimal,
                ));
            }
            history.push(snap);
        }
        state.update(&path);
    }

    let diagnostics = if opts.record_diagnostics {
        let decomposition = decompose_regret(&history, v_star0, opts.gamma, opts.record_eta)?;
        Some(ReplicationDiagnostics {
            decomposition_residual: (decomposition.total() - total).abs(),
            decomposition,
            history,
        })
    } else {
        None
    };
    Ok(ReplicationOutcome {
        seed,
        final_regret: total,
        trajectory,
        diagnostics,
    })
}

/// Sorted samples; evaluates `x -> fraction of samples >= x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCcdf {
    sorted: Vec<f64>,
}

impl EmpiricalCcdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("empirical CCDF needs at least one sample".into()));
        }
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::Domain("samples contain NaN".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let below = self.sorted.partition_point(|v| *v < x);
        (self.sorted.len() - below) as f64 / self.sorted.len() as f64
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    pub fn max(&self) -> f64 {
        *self.sorted.last().expect("non-empty by construction")
    }
}

pub fn empirical_ccdf(samples: &[f64], x: f64) -> Result<f64> {
    Ok(EmpiricalCcdf::new(samples)?.eval(x))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub episodes_checked: u64,
    pub good_event_violations: u64,
    pub optimism_violations: u64,
    pub conditional_optimism_failures: u64,
    pub max_decomposition_residual: f64,
    /// Largest optimism-error term over good-event episodes; at most 1e-9 in theory.
    pub max_good_event_r1: f64,
    pub mean_r0: f64,
    pub mean_r1: f64,
    pub mean_r2: f64,
}

impl DiagnosticsSummary {
    fn from_replications(reps: &[ReplicationDiagnostics]) -> Self {
        let mut out = Self {
            max_good_event_r1: f64::NEG_INFINITY,
            ..Self::default()
        };
        for d in reps {
            out.episodes_checked += d.history.len() as u64;
            out.good_event_violations += d.good_event_violations();
            out.optimism_violations += d.optimism_violations();
            out.conditional_optimism_failures += d.conditional_optimism_failures();
            out.max_decomposition_residual = out.max_decomposition_residual.max(d.decomposition_residual);
            out.max_good_event_r1 = out.max_good_event_r1.max(d.decomposition.worst_good_event_r1);
            out.mean_r0 += d.decomposition.r0;
            out.mean_r1 += d.decomposition.r1;
            out.mean_r2 += d.decomposition.r2;
        }
        let n = reps.len().max(1) as f64;
        out.mean_r0 /= n;
        out.mean_r1 /= n;
        out.mean_r2 /= n;
        if !out.max_good_event_r1.is_finite() {
            // no suboptimal good-event episode past the burn-in
            out.max_good_event_r1 = 0.0;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub optimal_value: f64,
    pub regret_samples: Vec<f64>,
    pub seeds: Vec<u64>,
    pub trajectories: Option<Vec<Vec<f64>>>,
    pub empirical_ccdf: EmpiricalCcdf,
    pub bound_report: BoundReport,
    pub diagnostics: Option<DiagnosticsSummary>,
}

impl ExperimentResult {
    pub fn mean_regret(&self) -> f64 {
        self.regret_samples.iter().sum::<f64>() / self.regret_samples.len() as f64
    }
}

/// Worker count from [`THREADS_ENV`]; `None` means rayon's default.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with_threads(config, threads_from_env())
}

/// As [`run_experiment`] with an explicit worker count (`None` = all cores).
pub fn run_experiment_with_threads(config: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentResult> {
    config.validate()?;
    ensure_writable(&config.output_dir)?;
    let mdp = config.env.resolve()?;
    let star = backward_induction(&mdp);

    let opts = RunOptions {
        record_trajectory: config.record_diagnostics,
        record_diagnostics: config.record_diagnostics,
        record_eta: false,
        gamma: config.gamma,
    };
    let seeds: Vec<u64> = (0..config.replications).map(|i| mix_seed(config.master_seed, i)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    let outcomes: Vec<ReplicationOutcome> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| run_replication(&mdp, &config.bonus, seed, opts))
            .collect::<Result<Vec<_>>>()
    })?;

    let regret_samples: Vec<f64> = outcomes.iter().map(|o| o.final_regret).collect();
    let inputs = BoundInputs {
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        horizon: mdp.horizon(),
        episodes: config.bonus.total_episodes,
        alpha: config.bonus.alpha,
        mu: config.bonus.mu,
        gamma: config.gamma,
        gap_star: star.gaps.gap_star,
        schedule: config.bonus.schedule,
    };
    let diagnostics = config.record_diagnostics.then(|| {
        let reps: Vec<ReplicationDiagnostics> = outcomes.iter().filter_map(|o| o.diagnostics.clone()).collect();
        DiagnosticsSummary::from_replications(&reps)
    });
    let trajectories = config
        .record_diagnostics
        .then(|| outcomes.iter().filter_map(|o| o.trajectory.clone()).collect());
    Ok(ExperimentResult {
        config_hash: config.hash()?,
        config: config.clone(),
        optimal_value: star.value.get(0, mdp.initial_state()),
        empirical_ccdf: EmpiricalCcdf::new(&regret_samples)?,
        regret_samples,
        seeds,
        trajectories,
        bound_report: BoundReport::compute(&inputs)?,
        diagnostics,
    })
}

fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".regret-lab-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Evenly spaced grid on `[0, 1.1 * max]` merged with the sample points.
pub fn tail_grid(ccdf: &EmpiricalCcdf) -> Vec<f64> {
    let upper = 1.1 * ccdf.max().max(0.0);
    let step = upper / (TAIL_GRID_POINTS - 1) as f64;
    let mut grid: Vec<f64> = (0..TAIL_GRID_POINTS).map(|i| i as f64 * step).collect();
    grid.extend(ccdf.samples().iter().copied().filter(|x| *x >= 0.0));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// One row of `tail.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub x: f64,
    pub empirical_ccdf: f64,
    pub raw_bound: f64,
    pub clipped_bound: f64,
}

/// One row of `tail_gamma_x.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveTailRow {
    pub x: f64,
    pub empirical_ccdf: f64,
    pub gamma_x: f64,
    pub raw_bound: f64,
    pub clipped_bound: f64,
}

pub fn tail_rows(result: &ExperimentResult) -> Vec<TailRow> {
    tail_grid(&result.empirical_ccdf)
        .into_iter()
        .map(|x| {
            let bound = result.bound_report.tail(x);
            TailRow {
                x,
                empirical_ccdf: result.empirical_ccdf.eval(x),
                raw_bound: bound.raw,
                clipped_bound: bound.clipped,
            }
        })
        .collect()
}

pub fn adaptive_tail_rows(result: &ExperimentResult) -> Result<Vec<AdaptiveTailRow>> {
    tail_grid(&result.empirical_ccdf)
        .into_iter()
        .map(|x| {
            let (gamma_x, bound) = tail_bound_adaptive(&result.bound_report.inputs, x)?;
            Ok(AdaptiveTailRow {
                x,
                empirical_ccdf: result.empirical_ccdf.eval(x),
                gamma_x,
                raw_bound: bound.raw,
                clipped_bound: bound.clipped,
            })
        })
        .collect()
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub optimal_value: f64,
    pub replications: u64,
    pub mean_regret: f64,
    pub max_regret: f64,
    pub bound_report: BoundReport,
    pub diagnostics: Option<DiagnosticsSummary>,
    pub seeds: Vec<u64>,
    pub regret_samples: Vec<f64>,
}

impl Summary {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// Formats a real with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_text(header: &str, rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Writes the result files into `dir` and returns their paths.
///
/// Each file is staged under a temporary name and renamed into place; on any
/// failure every file written by this call is removed.
pub fn emit_results(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files: Vec<(&str, String)> = Vec::new();

    let tail = tail_rows(result);
    files.push((
        "tail.csv",
        csv_text(
            "x,empirical_ccdf,raw_bound,clipped_bound",
            tail.iter().map(|r| {
                vec![fmt_real(r.x), fmt_real(r.empirical_ccdf), fmt_real(r.raw_bound), fmt_real(r.clipped_bound)]
            }),
        ),
    ));
    if result.bound_report.inputs.schedule == BonusSchedule::KI {
        let adaptive = adaptive_tail_rows(result)?;
        files.push((
            "tail_gamma_x.csv",
            csv_text(
                "x,empirical_ccdf,gamma_x,raw_bound,clipped_bound",
                adaptive.iter().map(|r| {
                    vec![
                        fmt_real(r.x),
                        fmt_real(r.empirical_ccdf),
                        fmt_real(r.gamma_x),
                        fmt_real(r.raw_bound),
                        fmt_real(r.clipped_bound),
                    ]
                }),
            ),
        ));
    }
    let summary = Summary {
        config: result.config.echo()?,
        config_hash: result.config_hash.clone(),
        optimal_value: result.optimal_value,
        replications: result.regret_samples.len() as u64,
        mean_regret: result.mean_regret(),
        max_regret: result.empirical_ccdf.max(),
        bound_report: result.bound_report.clone(),
        diagnostics: result.diagnostics.clone(),
        seeds: result.seeds.clone(),
        regret_samples: result.regret_samples.clone(),
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    files.push(("summary.json", json));
    if let Some(trajectories) = &result.trajectories {
        let mut text = String::from("rep,episode,cumulative_regret\n");
        for (rep, t) in trajectories.iter().enumerate() {
            for (episode, v) in t.iter().enumerate() {
                let _ = writeln!(text, "{rep},{episode},{}", fmt_real(*v));
            }
        }
        files.push(("trajectories.csv", text));
    }

    let mut written = Vec::new();
    for (name, contents) in &files {
        let target = dir.join(name);
        let staging = dir.join(format!(".{name}.tmp"));
        let outcome = fs::write(&staging, contents).and_then(|_| fs::rename(&staging, &target));
        if let Err(e) = outcome {
            let _ = fs::remove_file(&staging);
            for path in &written {
                let _ = fs::remove_file(path);
            }
            return Err(e.into());
        }
        written.push(target);
    }
    Ok(written)
}

/// Parses a `tail.csv` file back into rows.
pub fn load_tail_csv(path: impl AsRef<Path>) -> Result<Vec<TailRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("x,empirical_ccdf,raw_bound,clipped_bound") {
        return Err(Error::Contract("unexpected tail.csv header".into()));
    }
    lines
        .map(|line| {
            let v = parse_reals(line, 4)?;
            Ok(TailRow {
                x: v[0],
                empirical_ccdf: v[1],
                raw_bound: v[2],
                clipped_bound: v[3],
            })
        })
        .collect()
}

/// Parses a `tail_gamma_x.csv` file back into rows.
pub fn load_adaptive_tail_csv(path: impl AsRef<Path>) -> Result<Vec<AdaptiveTailRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("x,empirical_ccdf,gamma_x,raw_bound,clipped_bound") {
        return Err(Error::Contract("unexpected tail_gamma_x.csv header".into()));
    }
    lines
        .map(|line| {
            let v = parse_reals(line, 5)?;
            Ok(AdaptiveTailRow {
                x: v[0],
                empirical_ccdf: v[1],
                gamma_x: v[2],
                raw_bound: v[3],
                clipped_bound: v[4],
            })
        })
        .collect()
}

fn parse_reals(line: &str, expected: usize) -> Result<Vec<f64>> {
    let values = line
        .split(',')
        .map(|f| f.parse::<f64>().map_err(|e| Error::Contract(format!("bad CSV field {f:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(Error::Contract(format!("expected {expected} CSV fields, got {}", values.len())));
    }
    Ok(values)
}
