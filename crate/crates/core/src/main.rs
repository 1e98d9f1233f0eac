use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use regret_lab::bounds::{tail_bound, tail_bound_adaptive, BoundInputs, BoundReport};
use regret_lab::envs::{generate, EnvKind, EnvSpec};
use regret_lab::harness::{emit_results, fmt_real, run_experiment, ExperimentConfig};
use regret_lab::mdp::{backward_induction, TabularMdp};
use regret_lab::verify;
use regret_lab::BonusSchedule;

#[derive(Parser)]
#[command(name = "regret-lab", version, about = "UCBVI regret-tail experiments and bound evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment described by a JSON config file.
    Run {
        config: PathBuf,
        /// Write results here instead of the config's output_dir.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print the bound report as a key-value table.
    Bounds {
        #[command(flatten)]
        inputs: InputArgs,
        /// Also write a tail curve CSV (x,raw_bound,clipped_bound).
        #[arg(long)]
        tail_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        points: usize,
        /// Right end of the tail grid; defaults to twice the point where the bound drops below 1e-6.
        #[arg(long)]
        x_max: Option<f64>,
    },
    /// Print only the tail curve as CSV on stdout.
    Tail {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long, default_value_t = 512)]
        points: usize,
        #[arg(long)]
        x_max: Option<f64>,
        /// Choose gamma per x (K-independent schedule); adds a gamma_x column.
        #[arg(long)]
        adaptive: bool,
    },
    /// Generate a benchmark instance and write it as an MDP file.
    GenEnv {
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, default_value_t = 2)]
        states: usize,
        #[arg(long, default_value_t = 2)]
        actions: usize,
        #[arg(long, default_value_t = 2)]
        horizon: usize,
        #[arg(long)]
        gap_floor: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the lemma and concentration grids; exits nonzero on any failure.
    Verify {
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 200)]
        lemma2_trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    RandomGap,
    Chain,
    Bandit,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Kd,
    Ki,
}

#[derive(Args)]
struct InputArgs {
    /// Read S, A, H and the gap from this MDP file.
    #[arg(long, conflicts_with_all = ["states", "actions", "horizon", "gap"])]
    mdp: Option<PathBuf>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Gap; `inf` for the degenerate all-optimal case.
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    episodes: u64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma: f64,
    #[arg(long, value_enum, default_value = "kd")]
    schedule: ScheduleArg,
}

impl InputArgs {
    fn resolve(&self) -> anyhow::Result<BoundInputs> {
        let (num_states, num_actions, horizon, gap_star) = match &self.mdp {
            Some(path) => {
                let mdp = TabularMdp::load(path).with_context(|| format!("loading {}", path.display()))?;
                let gap = backward_induction(&mdp).gaps.gap_star;
                (mdp.num_states(), mdp.num_actions(), mdp.horizon(), gap)
            }
            None => match (self.states, self.actions, self.horizon, self.gap) {
                (Some(s), Some(a), Some(h), Some(g)) => (s, a, h, g),
                _ => bail!("give either --mdp or all of --states, --actions, --horizon and --gap"),
            },
        };
        let inputs = BoundInputs {
            num_states,
            num_actions,
            horizon,
            episodes: self.episodes,
            alpha: self.alpha,
            mu: self.mu,
            gamma: self.gamma,
            gap_star,
            schedule: match self.schedule {
                ScheduleArg::Kd => BonusSchedule::KD,
                ScheduleArg::Ki => BonusSchedule::KI,
            },
        };
        inputs.validate()?;
        Ok(inputs)
    }
}

fn default_x_max(inputs: &BoundInputs) -> anyhow::Result<f64> {
    // the bound is 1 up to the baseline, then decays like a Gaussian of variance H^3 K
    let report = BoundReport::compute(inputs)?;
    let width = ((inputs.horizon as f64).powi(3) * inputs.episodes as f64 * 2.0 * 6.0 * 10f64.ln()).sqrt();
    Ok(2.0 * (report.burn_in + report.m_k + width))
}

fn grid(x_max: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points).map(|i| x_max * i as f64 / (points - 1) as f64).collect()
}

fn tail_csv(inputs: &BoundInputs, xs: &[f64], adaptive: bool) -> anyhow::Result<String> {
    let mut out = String::new();
    if adaptive {
        out.push_str("x,gamma_x,raw_bound,clipped_bound\n");
        for &x in xs {
            let (g, t) = tail_bound_adaptive(inputs, x)?;
            out.push_str(&format!("{},{},{},{}\n", fmt_real(x), fmt_real(g), fmt_real(t.raw), fmt_real(t.clipped)));
        }
    } else {
        out.push_str("x,raw_bound,clipped_bound\n");
        for &x in xs {
            let t = tail_bound(inputs, x)?;
            out.push_str(&format!("{},{},{}\n", fmt_real(x), fmt_real(t.raw), fmt_real(t.clipped)));
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, output_dir } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let result = run_experiment(&cfg)?;
            let files = emit_results(&result, &cfg.output_dir)?;
            println!("replications     {}", result.regret_samples.len());
            println!("mean_regret      {:.6e}", result.mean_regret());
            println!("expectation_bnd  {:.6e}", result.bound_report.expectation_bound);
            println!("config_hash      {}", result.config_hash);
            for f in files {
                println!("wrote            {}", f.display());
            }
        }
        Command::Bounds {
            inputs,
            tail_csv: csv_path,
            points,
            x_max,
        } => {
            let inputs = inputs.resolve()?;
            let report = BoundReport::compute(&inputs)?;
            print!("{}", report.to_table());
            if let Some(path) = csv_path {
                let x_max = match x_max {
                    Some(x) => x,
                    None => default_x_max(&inputs)?,
                };
                std::fs::write(&path, tail_csv(&inputs, &grid(x_max, points), false)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Tail {
            inputs,
            points,
            x_max,
            adaptive,
        } => {
            let inputs = inputs.resolve()?;
            let x_max = match x_max {
                Some(x) => x,
                None => default_x_max(&inputs)?,
            };
            let text = tail_csv(&inputs, &grid(x_max, points), adaptive)?;
            std::io::stdout().write_all(text.as_bytes())?;
        }
        Command::GenEnv {
            kind,
            states,
            actions,
            horizon,
            gap_floor,
            seed,
            out,
        } => {
            let spec = EnvSpec {
                kind: match kind {
                    KindArg::RandomGap => EnvKind::RandomGap,
                    KindArg::Chain => EnvKind::Chain,
                    KindArg::Bandit => EnvKind::Bandit,
                },
                num_states: states,
                num_actions: actions,
                horizon,
                gap_floor,
                seed,
            };
            let mdp = generate(&spec)?;
            mdp.save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("gap_star {}", backward_induction(&mdp).gaps.gap_star);
        }
        Command::Verify {
            trials,
            lemma2_trials,
            seed,
        } => {
            let rows = verify::run_all(trials, lemma2_trials, seed)?;
            print!("{}", verify::format_table(&rows));
            if rows.iter().any(|r| !r.passed()) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
