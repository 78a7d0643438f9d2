use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dppg_core::accountant::{epsilon_of_z, z_of_epsilon};
use dppg_core::config::ExperimentConfig;
use dppg_core::dppg::{linear_noise_multiplier, LinearVariant};
use dppg_core::envs::{EnvId, RiverswimConfig};
use dppg_core::harness::{
    default_out, evaluate_params, format_report, privacy_banner, run_sweep, run_train,
    run_train_riverswim, uniform_regret, RuleInputs,
};
use dppg_core::policies::PolicyParams;
use dppg_core::trust_region::{ClipRule, FisherMatrix};
use dppg_core::Error;

/// Differentially private policy-gradient training and analysis.
#[derive(Parser)]
#[command(name = "dppg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a neural policy with the private federated protocol.
    Train {
        config: PathBuf,
        /// Output directory [default: runs/train].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the log-linear Riverswim policy with a trust-region clipping norm.
    TrainRiverswim {
        config: PathBuf,
        /// Overrides `linear.variant` from the config.
        #[arg(long, value_parser = parse_variant)]
        variant: Option<LinearVariant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train over the config's grid of noise multipliers and seeds.
    Sweep {
        config: PathBuf,
        /// Comma-separated noise multipliers replacing `sweep.z_grid`.
        #[arg(long, value_delimiter = ',')]
        z: Option<Vec<f64>>,
        /// Replaces `sweep.seeds`.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample episodes from a saved policy and report mean and std of the return.
    Evaluate {
        checkpoint: PathBuf,
        #[arg(long)]
        env: EnvId,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Convert between the noise multiplier z and the privacy budget epsilon.
    Accountant(AccountantArgs),
    /// Print the clipping norm of a trust-region rule.
    Clipnorm(RuleArgs),
    /// Check a clipping-norm rule's containment guarantee by simulation.
    VerifyTr {
        #[command(flatten)]
        rule: RuleArgs,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct AccountantArgs {
    #[arg(long, conflicts_with = "epsilon", required_unless_present = "epsilon")]
    z: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    /// Clipping norm used to report the noise scale `z S`.
    #[arg(long, default_value_t = 1.0)]
    clip_norm: f64,
}

#[derive(Args)]
struct RuleArgs {
    #[arg(long)]
    rule: ClipRule,
    #[arg(long, default_value_t = 3.5)]
    alpha: f64,
    /// Failure probability; for `loss-gap` this is the gap probability.
    #[arg(long, default_value_t = 0.4)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    z: f64,
    #[arg(long, default_value_t = 7)]
    d: usize,
    /// Fisher matrix for the `kl` rule: a `d=<n>` line followed by n rows.
    #[arg(long)]
    fisher: Option<PathBuf>,
    /// Objective slack for the `loss-gap` rule.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Gradient norm for the `loss-gap` rule.
    #[arg(long, default_value_t = 1.0)]
    grad_norm: f64,
}

fn parse_variant(s: &str) -> Result<LinearVariant, String> {
    match s {
        "l2" => Ok(LinearVariant::L2),
        "kl" => Ok(LinearVariant::Kl),
        _ => Err(format!("unknown variant {s:?}; expected l2 or kl")),
    }
}

impl RuleArgs {
    fn inputs(&self) -> dppg_core::Result<RuleInputs> {
        let fisher = self.fisher.as_deref().map(FisherMatrix::load).transpose()?;
        let d = fisher.as_ref().map_or(self.d, FisherMatrix::dim);
        Ok(RuleInputs {
            rule: self.rule,
            alpha: self.alpha,
            beta: self.beta,
            eta: self.eta,
            z: self.z,
            d,
            fisher,
            lambda_slack: self.lambda,
            grad_norm: self.grad_norm,
        })
    }
}

fn load_config(path: &Path) -> dppg_core::Result<ExperimentConfig> {
    let cfg = ExperimentConfig::load(path)?;
    eprintln!("{}", privacy_banner(cfg.privacy.z, cfg.privacy.delta)?);
    Ok(cfg)
}

fn run(cli: Cli) -> dppg_core::Result<ExitCode> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = load_config(&config)?;
            let out = out.unwrap_or_else(|| default_out("train"));
            let (_, s) = run_train(&cfg, &out)?;
            println!(
                "final return {:.2} +/- {:.2} over {} episodes; best evaluation {:.2}",
                s.final_mean_return,
                s.final_std_return,
                s.final_returns.len(),
                s.best_eval_return
            );
            println!("wrote {}", out.display());
        }
        Command::TrainRiverswim {
            config,
            variant,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(v) = variant {
                cfg.linear.variant = v;
            }
            let z = linear_noise_multiplier(&cfg)?;
            eprintln!("{}", privacy_banner(z, cfg.privacy.delta)?);
            let out = out.unwrap_or_else(|| default_out("riverswim"));
            let (run, s) = run_train_riverswim(&cfg, cfg.linear.variant, &out)?;
            println!(
                "cumulative regret {:.4} over {} episodes (uniform policy: {:.4}); final policy always right: {}",
                run.total_regret(),
                run.regret.len(),
                uniform_regret(&cfg)?,
                run.always_right
            );
            if let Some(ep) = run.first_always_right {
                println!("policy first preferred right in every state at episode {ep}");
            }
            println!(
                "final return {:.3} +/- {:.3}",
                s.final_mean_return, s.final_std_return
            );
            println!("wrote {}", out.display());
        }
        Command::Sweep {
            config,
            z,
            seeds,
            out,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(z) = z {
                cfg.sweep.z_grid = z;
            }
            if let Some(n) = seeds {
                cfg.sweep.seeds = n;
            }
            cfg.validate()?;
            let out = out.unwrap_or_else(|| default_out("sweep"));
            run_sweep(&cfg, &out, |r| {
                let eps = r.epsilon.map_or("inf".to_string(), |e| format!("{e:.4}"));
                eprintln!(
                    "z = {} (epsilon {eps}) seed {}: final return {:.2}",
                    r.z, r.seed, r.final_mean_return
                );
            })?;
            println!("wrote {}", out.display());
        }
        Command::Evaluate {
            checkpoint,
            env,
            episodes,
            seed,
        } => {
            let params = PolicyParams::load(&checkpoint)?;
            let r = evaluate_params(&params, env, &RiverswimConfig::default(), episodes, seed)?;
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64;
            println!("{mean} +/- {} over {episodes} episodes", var.sqrt());
        }
        Command::Accountant(a) => match (a.z, a.epsilon) {
            (Some(z), _) => {
                let b = epsilon_of_z(z, a.delta)?;
                println!("epsilon = {}", b.epsilon);
                println!("delta = {}", a.delta);
                println!("mechanism = {}", b.mechanism_used);
                println!("sigma = {} (z S with S = {})", z * a.clip_norm, a.clip_norm);
            }
            (None, Some(eps)) => {
                println!("z = {}", z_of_epsilon(eps, a.delta)?);
            }
            (None, None) => unreachable!("clap requires one of --z and --epsilon"),
        },
        Command::Clipnorm(r) => {
            println!("{}", r.inputs()?.clip_norm()?);
        }
        Command::VerifyTr { rule, trials, seed } => {
            let report = rule.inputs()?.verify(trials, seed)?;
            println!("{}", format_report(rule.rule, &report));
            if !report.passes() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
