//! Experiment drivers behind the `dppg` command line: training runs with
//! their on-disk artifacts, privacy/utility sweeps, evaluation of saved
//! policies and Monte Carlo checks of the clipping-norm rules.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::accountant::{epsilon_of_z, Mechanism, PrivacyBudget};
use crate::config::ExperimentConfig;
use crate::dppg::{
    train_deep_with, train_linear_riverswim, uniform_policy_regret, DeepRun, IterationMetrics,
    LinearRun, LinearVariant,
};
use crate::envs::{evaluate_policy, EnvId, RiverswimConfig};
use crate::error::{Error, Result};
use crate::policies::PolicyParams;
use crate::rng::Streams;
use crate::trust_region::{
    clip_norm_kl, clip_norm_l2_markov, clip_norm_l2_quantile, clip_norm_loss_gap, containment_kl,
    containment_l2, containment_loss_gap, ClipRule, ContainmentReport, FisherMatrix, LossGapParams,
    TrustRegionParams,
};

/// Version tag written into every summary.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "policy.ckpt";
pub const EVALS_FILE: &str = "evals.csv";
pub const REGRET_FILE: &str = "regret.csv";
pub const PRIVACY_UTILITY_FILE: &str = "privacy_utility.csv";
pub const SWEEP_RUNS_FILE: &str = "sweep_runs.csv";
pub const Z_EPS_FILE: &str = "z_eps.csv";

/// Contents of `summary.json`.
///
/// `config` holds the exact TOML of the run, so
/// `ExperimentConfig::from_toml(&summary.config)` rebuilds it bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub env: EnvId,
    pub seed: u64,
    pub z: f64,
    pub delta: f64,
    /// `None` for a run without noise.
    pub epsilon: Option<f64>,
    pub mechanism: Option<Mechanism>,
    pub final_returns: Vec<f64>,
    pub final_mean_return: f64,
    pub final_std_return: f64,
    /// Best periodic evaluation; equals the final mean when there is only one.
    pub best_eval_return: f64,
    /// Present for linear Riverswim runs.
    pub cumulative_regret: Option<f64>,
    pub always_right: Option<bool>,
    /// First episode at which the deployed policy preferred right in every state.
    pub first_always_right_episode: Option<usize>,
    pub wall_clock_seconds: f64,
    pub config: String,
}

impl RunSummary {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// The config the run was started with.
    pub fn experiment_config(&self) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(&self.config, Path::new(SUMMARY_FILE))
    }
}

/// Formats a float for CSV output; infinities become `inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x}")
    }
}

fn fmt_eps(e: Option<f64>) -> String {
    e.map_or_else(|| "inf".to_string(), fmt_f64)
}

/// Writes a CSV file from a header and pre-formatted rows.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// The privacy banner printed before a run touches any data.
pub fn privacy_banner(z: f64, delta: f64) -> Result<String> {
    if z == 0.0 {
        return Ok(format!(
            "privacy: z = 0 (no noise), epsilon = inf at delta = {delta}"
        ));
    }
    let b = epsilon_of_z(z, delta)?;
    Ok(format!(
        "privacy: z = {z}, epsilon = {} at delta = {delta} (mechanism {})",
        b.epsilon, b.mechanism_used
    ))
}

fn metrics_row(m: &IterationMetrics) -> Vec<String> {
    vec![
        m.iteration.to_string(),
        m.users_seen.to_string(),
        m.env_steps.to_string(),
        fmt_f64(m.mean_return),
        fmt_f64(m.grad_norm),
        fmt_f64(m.clip_fraction),
        fmt_f64(m.clip_norm),
        fmt_eps(m.epsilon),
    ]
}

pub const METRICS_HEADER: [&str; 8] = [
    "iteration",
    "users_seen",
    "env_steps",
    "mean_return",
    "grad_norm",
    "clip_fraction",
    "S",
    "epsilon",
];

fn std_of(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn budget_parts(b: Option<PrivacyBudget>) -> (Option<f64>, Option<Mechanism>) {
    (b.map(|b| b.epsilon), b.map(|b| b.mechanism_used))
}

/// Trains a deep policy and writes metrics, evaluations, checkpoint and summary into `out`.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<(DeepRun, RunSummary)> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let run = train_deep_with(cfg, &mut |m| rows.push(metrics_row(m)))?;
    write_csv(&out.join(METRICS_FILE), &METRICS_HEADER, rows)?;
    write_csv(
        &out.join(EVALS_FILE),
        &["env_steps", "mean_return", "std_return"],
        run.evals.iter().map(|e| {
            vec![
                e.env_steps.to_string(),
                fmt_f64(e.mean_return),
                fmt_f64(e.std_return),
            ]
        }),
    )?;
    run.params.save(&out.join(CHECKPOINT_FILE))?;
    let (epsilon, mechanism) = budget_parts(run.budget);
    let summary = RunSummary {
        version: VERSION.into(),
        env: cfg.env,
        seed: cfg.seed,
        z: cfg.privacy.z,
        delta: cfg.privacy.delta,
        epsilon,
        mechanism,
        final_mean_return: run.final_mean(),
        final_std_return: std_of(&run.final_returns),
        final_returns: run.final_returns.clone(),
        best_eval_return: run.best_eval_mean(),
        cumulative_regret: None,
        always_right: None,
        first_always_right_episode: None,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        config: cfg.to_toml(),
    };
    fs::write(
        out.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok((run, summary))
}

/// Runs the linear Riverswim experiment and writes its artifacts into `out`.
pub fn run_train_riverswim(
    cfg: &ExperimentConfig,
    variant: LinearVariant,
    out: &Path,
) -> Result<(LinearRun, RunSummary)> {
    cfg.validate()?;
    if cfg.env != EnvId::Riverswim {
        return Err(Error::Config(format!(
            "env: train-riverswim needs env = \"riverswim\", got {:?}",
            cfg.env.name()
        )));
    }
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let run = train_linear_riverswim(cfg, variant)?;
    write_csv(
        &out.join(REGRET_FILE),
        &["episode", "cumulative_regret", "S_used"],
        run.regret.iter().map(|r| {
            vec![
                r.episode.to_string(),
                fmt_f64(r.cumulative_regret),
                fmt_f64(r.s_used),
            ]
        }),
    )?;
    run.params.save(&out.join(CHECKPOINT_FILE))?;
    let final_returns = evaluate_params(
        &run.params,
        cfg.env,
        &cfg.riverswim,
        cfg.eval.episodes,
        cfg.seed,
    )?;
    let (epsilon, mechanism) = budget_parts(run.budget);
    let final_mean = mean_of(&final_returns);
    let summary = RunSummary {
        version: VERSION.into(),
        env: cfg.env,
        seed: cfg.seed,
        z: run.z,
        delta: cfg.privacy.delta,
        epsilon,
        mechanism,
        final_std_return: std_of(&final_returns),
        final_mean_return: final_mean,
        final_returns,
        best_eval_return: final_mean,
        cumulative_regret: Some(run.total_regret()),
        always_right: Some(run.always_right),
        first_always_right_episode: run.first_always_right,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        config: cfg.to_toml(),
    };
    fs::write(
        out.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok((run, summary))
}

/// Regret a uniformly random policy accumulates over the configured episodes.
pub fn uniform_regret(cfg: &ExperimentConfig) -> Result<f64> {
    uniform_policy_regret(&cfg.riverswim, cfg.linear.episodes)
}

/// Returns of `episodes` episodes sampled from a saved policy.
pub fn evaluate_params(
    params: &PolicyParams,
    env: EnvId,
    riverswim: &RiverswimConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(Error::Config("episodes: must be >= 1".into()));
    }
    let arch = &params.arch;
    if arch.obs_dim() != env.obs_dim(riverswim) || arch.n_actions() != env.n_actions() {
        return Err(Error::Domain(format!(
            "policy architecture {arch} does not match environment {env}"
        )));
    }
    let streams = Streams::new(seed);
    evaluate_policy(
        env.make(riverswim)?,
        arch,
        &params.theta,
        episodes,
        streams.stream("eval-env", 0),
        &mut streams.stream("eval-act", 0),
    )
}

/// One `(z, seed)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRun {
    pub z: f64,
    pub seed: u64,
    pub epsilon: Option<f64>,
    pub final_mean_return: f64,
    pub best_eval_return: f64,
}

/// Aggregate over seeds for one noise multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub z: f64,
    pub epsilon: Option<f64>,
    pub mean_return: f64,
    pub std_return: f64,
    pub median_return: f64,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains once per `(z, seed)` in the sweep grid, seeds counting up from the config seed.
///
/// Each cell is summarized by the mean of its final evaluation. Results go
/// to `privacy_utility.csv` (aggregates), `sweep_runs.csv` (every cell) and
/// `z_eps.csv` (the accountant curve).
pub fn run_sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    mut progress: impl FnMut(&SweepRun),
) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut runs = Vec::new();
    let mut points = Vec::new();
    for &z in &cfg.sweep.z_grid {
        let mut finals = Vec::new();
        let mut epsilon = None;
        for s in 0..cfg.sweep.seeds as u64 {
            let mut c = cfg.clone();
            c.privacy.z = z;
            c.seed = cfg.seed + s;
            if z == 0.0 {
                c.privacy.clip_norm = f64::INFINITY;
            }
            let run = train_deep_with(&c, &mut |_| {})?;
            epsilon = run.budget.map(|b| b.epsilon);
            let r = SweepRun {
                z,
                seed: c.seed,
                epsilon,
                final_mean_return: run.final_mean(),
                best_eval_return: run.best_eval_mean(),
            };
            progress(&r);
            finals.push(r.final_mean_return);
            runs.push(r);
        }
        points.push(SweepPoint {
            z,
            epsilon,
            mean_return: mean_of(&finals),
            std_return: std_of(&finals),
            median_return: median(&finals),
        });
    }
    write_csv(
        &out.join(PRIVACY_UTILITY_FILE),
        &["z", "epsilon", "mean_return", "std_return"],
        points.iter().map(|p| {
            vec![
                fmt_f64(p.z),
                fmt_eps(p.epsilon),
                fmt_f64(p.mean_return),
                fmt_f64(p.std_return),
            ]
        }),
    )?;
    write_csv(
        &out.join(SWEEP_RUNS_FILE),
        &[
            "z",
            "seed",
            "epsilon",
            "final_mean_return",
            "best_eval_return",
        ],
        runs.iter().map(|r| {
            vec![
                fmt_f64(r.z),
                r.seed.to_string(),
                fmt_eps(r.epsilon),
                fmt_f64(r.final_mean_return),
                fmt_f64(r.best_eval_return),
            ]
        }),
    )?;
    write_z_eps(&out.join(Z_EPS_FILE), cfg.privacy.delta, &cfg.sweep.z_grid)?;
    Ok(points)
}

/// The accountant curve: a log-spaced grid on `[0.1, 10]` merged with `extra`.
pub fn z_eps_curve(delta: f64, extra: &[f64]) -> Result<Vec<(f64, PrivacyBudget)>> {
    let n = 200;
    let mut zs: Vec<f64> = (0..n)
        .map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / (n - 1) as f64))
        .collect();
    zs.extend(extra.iter().copied().filter(|z| *z > 0.0));
    zs.sort_by(f64::total_cmp);
    zs.dedup();
    zs.into_iter()
        .map(|z| Ok((z, epsilon_of_z(z, delta)?)))
        .collect()
}

pub fn write_z_eps(path: &Path, delta: f64, extra: &[f64]) -> Result<()> {
    let curve = z_eps_curve(delta, extra)?;
    write_csv(
        path,
        &["z", "epsilon", "mechanism"],
        curve.iter().map(|(z, b)| {
            vec![
                fmt_f64(*z),
                fmt_f64(b.epsilon),
                b.mechanism_used.to_string(),
            ]
        }),
    )
}

/// Inputs of a clipping-norm computation or containment check.
#[derive(Debug, Clone)]
pub struct RuleInputs {
    pub rule: ClipRule,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub z: f64,
    pub d: usize,
    /// Used by the `kl` rule; identity when absent.
    pub fisher: Option<FisherMatrix>,
    /// Used by the `loss-gap` rule.
    pub lambda_slack: f64,
    pub grad_norm: f64,
}

impl RuleInputs {
    fn tr(&self) -> Result<TrustRegionParams> {
        TrustRegionParams::new(self.alpha, self.beta, self.eta, self.z, self.d)
    }

    fn fisher(&self) -> FisherMatrix {
        self.fisher
            .clone()
            .unwrap_or_else(|| FisherMatrix::identity(self.d))
    }

    fn loss_gap(&self) -> Result<LossGapParams> {
        LossGapParams::new(self.lambda_slack, self.beta, self.grad_norm)
    }

    /// The clipping norm the rule prescribes.
    pub fn clip_norm(&self) -> Result<f64> {
        match self.rule {
            ClipRule::L2Quantile => clip_norm_l2_quantile(&self.tr()?),
            ClipRule::L2Markov => clip_norm_l2_markov(&self.tr()?),
            ClipRule::Kl => clip_norm_kl(&self.tr()?, &self.fisher()),
            ClipRule::LossGap => clip_norm_loss_gap(&self.loss_gap()?, self.eta, self.z),
        }
    }

    /// Monte Carlo containment at the prescribed clipping norm.
    pub fn verify(&self, trials: usize, seed: u64) -> Result<ContainmentReport> {
        if trials == 0 {
            return Err(Error::Config("trials: must be >= 1".into()));
        }
        let s = self.clip_norm()?;
        let mut rng = Streams::new(seed).stream("verify-tr", 0);
        match self.rule {
            ClipRule::L2Quantile => containment_l2(&self.tr()?, s, trials, &mut rng),
            // the Markov bound holds for the Fisher-weighted size with F = I
            ClipRule::L2Markov => containment_kl(
                &self.tr()?,
                &FisherMatrix::identity(self.d),
                s,
                trials,
                &mut rng,
            ),
            ClipRule::Kl => containment_kl(&self.tr()?, &self.fisher(), s, trials, &mut rng),
            ClipRule::LossGap => containment_loss_gap(
                &self.loss_gap()?,
                self.eta,
                self.z,
                self.d,
                s,
                trials,
                &mut rng,
            ),
        }
    }
}

/// Human-readable containment report.
pub fn format_report(rule: ClipRule, r: &ContainmentReport) -> String {
    format!(
        "rule = {rule}\nS = {}\ntrials = {}\ncontained = {}\nfrequency = {:.6}\ntarget = {:.6}\nstandard_error = {:.6}\nthreshold = {:.6}\nresult = {}",
        r.clip_norm,
        r.trials,
        r.hits,
        r.frequency(),
        r.target,
        r.standard_error(),
        r.target - 3.0 * r.standard_error(),
        if r.passes() { "PASS" } else { "FAIL" }
    )
}

/// Default output directory for a command.
pub fn default_out(kind: &str) -> PathBuf {
    PathBuf::from("runs").join(kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(rule: ClipRule) -> RuleInputs {
        RuleInputs {
            rule,
            alpha: 3.5,
            beta: 0.4,
            eta: 1.0,
            z: 1.0,
            d: 7,
            fisher: None,
            lambda_slack: 1.0,
            grad_norm: 1.0,
        }
    }

    #[test]
    fn kl_with_identity_reports_like_markov() {
        let a = inputs(ClipRule::L2Markov).verify(20_000, 5).unwrap();
        let b = inputs(ClipRule::Kl).verify(20_000, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.passes());
    }

    #[test]
    fn noiseless_bound_contains_always() {
        let mut i = inputs(ClipRule::L2Quantile);
        i.z = 0.0;
        let r = i.verify(1000, 1).unwrap();
        assert_eq!(r.hits, 1000);
    }

    #[test]
    fn z_eps_curve_decreases_within_each_regime() {
        let curve = z_eps_curve(1e-5, &[0.25, 0.5, 1.0]).unwrap();
        for w in curve.windows(2) {
            if w[0].1.mechanism_used == w[1].1.mechanism_used {
                assert!(w[1].1.epsilon < w[0].1.epsilon);
            }
        }
        assert!(curve.iter().any(|c| c.1.mechanism_used == Mechanism::M1));
        assert!(curve.iter().any(|c| c.1.mechanism_used == Mechanism::M2));
    }

    #[test]
    fn csv_formats_infinity() {
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_eps(None), "inf");
        assert_eq!(fmt_f64(0.5), "0.5");
    }

    #[test]
    fn median_handles_even_lengths() {
        assert_eq!(median(&[3.0, 1.0, 2.0, 10.0]), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }
}
