use serde::Serialize;

use super::{aggregate_and_privatize, compute_local_update_ppo, Adam, LocalUpdate};
use crate::accountant::{l2_norm, PrivacyBudget};
use crate::config::ExperimentConfig;
use crate::envs::{evaluate_policy, rollout, Runner, Trajectory};
use crate::error::{Error, Result};
use crate::policies::{gae, Architecture, Critic, CriticKind, PolicyParams};
use crate::rng::{Rng, Streams};

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub users_seen: u64,
    pub env_steps: u64,
    /// Mean return of episodes finished during this iteration, or the most
    /// recent such mean if none finished.
    pub mean_return: f64,
    /// `|gbar|` before noise.
    pub grad_norm: f64,
    pub clip_fraction: f64,
    #[serde(rename = "S")]
    pub clip_norm: f64,
    /// `None` when training without noise.
    pub epsilon: Option<f64>,
}

/// Periodic evaluation of the released policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPoint {
    pub env_steps: u64,
    pub mean_return: f64,
    pub std_return: f64,
}

/// Everything a deep run produces.
#[derive(Debug, Clone)]
pub struct DeepRun {
    pub params: PolicyParams,
    pub metrics: Vec<IterationMetrics>,
    pub evals: Vec<EvalPoint>,
    /// Returns of the evaluation episodes run after the last iteration.
    pub final_returns: Vec<f64>,
    pub budget: Option<PrivacyBudget>,
}

impl DeepRun {
    pub fn final_mean(&self) -> f64 {
        mean(&self.final_returns)
    }

    /// Highest mean over all evaluation points, including the final one.
    pub fn best_eval_mean(&self) -> f64 {
        self.evals
            .iter()
            .map(|e| e.mean_return)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub(crate) fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    if xs.len() < 2 {
        return 0.0;
    }
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn architecture(cfg: &ExperimentConfig) -> Architecture {
    Architecture::Mlp {
        obs_dim: cfg.env.obs_dim(&cfg.riverswim),
        hidden: [cfg.train.hidden, cfg.train.hidden],
        n_actions: cfg.env.n_actions(),
    }
}

fn evaluate(
    cfg: &ExperimentConfig,
    arch: &Architecture,
    theta: &[f64],
    streams: &Streams,
    tag: u64,
) -> Result<Vec<f64>> {
    evaluate_policy(
        cfg.env.make(&cfg.riverswim)?,
        arch,
        theta,
        cfg.eval.episodes,
        streams.stream("eval-env", tag),
        &mut streams.stream("eval-act", tag),
    )
}

/// Descends the critic's value loss on one iteration's data.
fn fit_critic(
    critic: &mut Critic,
    adam: &mut Adam,
    batch: &[Trajectory],
    targets: &[Vec<f64>],
    cfg: &ExperimentConfig,
    rng: &mut Rng,
) -> Result<()> {
    use rand::seq::SliceRandom;
    let obs: Vec<&[f64]> = batch
        .iter()
        .flat_map(|t| t.transitions.iter().map(|x| x.obs.as_slice()))
        .collect();
    let ys: Vec<f64> = targets.iter().flatten().copied().collect();
    let mut order: Vec<usize> = (0..obs.len()).collect();
    for _ in 0..cfg.critic.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.critic.minibatch_size) {
            let o: Vec<&[f64]> = chunk.iter().map(|&i| obs[i]).collect();
            let y: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let (_, grad) = critic.value_loss_grad(&o, &y)?;
            adam.descend(critic.params_mut(), &grad, cfg.critic.lr);
        }
    }
    Ok(())
}

pub fn train_deep(cfg: &ExperimentConfig) -> Result<DeepRun> {
    train_deep_with(cfg, &mut |_| {})
}

/// The private training loop; `on_iteration` sees each metrics row as it is produced.
pub fn train_deep_with(
    cfg: &ExperimentConfig,
    on_iteration: &mut dyn FnMut(&IterationMetrics),
) -> Result<DeepRun> {
    cfg.validate()?;
    let budget = cfg.privacy.budget()?;
    let streams = Streams::new(cfg.seed);
    let arch = architecture(cfg);
    let dim = arch.param_dim();
    let mut theta = arch.init(&mut streams.stream("init", 0));
    let obs_dim = arch.obs_dim();
    let mut critic = Critic::new(
        CriticKind::Mlp {
            obs_dim,
            hidden: [cfg.train.hidden, cfg.train.hidden],
        },
        &mut streams.stream("init", 1),
    );
    let local = cfg.local_update();
    let mut adam = Adam::new(dim, local.adam_beta1, local.adam_beta2, local.adam_eps);
    let mut critic_adam = Adam::new(critic.param_count(), 0.9, 0.999, 1e-8);

    let k = cfg.train.users_per_update;
    let t_steps = cfg.train.steps_per_user;
    let iterations = cfg.train.total_steps / (k * t_steps);
    let local_steps_per_user = (local.epochs * t_steps.div_ceil(local.minibatch_size)) as u64;
    let mut runners: Vec<Runner> = (0..k)
        .map(|u| {
            Ok(Runner::new(
                cfg.env.make(&cfg.riverswim)?,
                streams.stream("env", u as u64),
            ))
        })
        .collect::<Result<_>>()?;

    let mut metrics = Vec::with_capacity(iterations);
    let mut evals = Vec::new();
    let mut last_return = f64::NAN;
    let mut released: Option<Vec<f64>> = None;
    let mut next_eval = cfg.eval.every_steps;

    for it in 0..iterations as u64 {
        if let Some(g) = &released {
            adam.substitute(g);
        }
        let theta_old = theta.clone();
        let mut updates: Vec<LocalUpdate> = Vec::with_capacity(k);
        let mut batch: Vec<Trajectory> = Vec::with_capacity(k);
        let mut targets: Vec<Vec<f64>> = Vec::with_capacity(k);
        let mut returns = Vec::new();
        for (u, runner) in runners.iter_mut().enumerate() {
            let user = it * k as u64 + u as u64;
            let traj = rollout(
                runner,
                &arch,
                &theta_old,
                Some(&critic),
                t_steps,
                user,
                it,
                &mut streams.stream("rollout", user),
            )?;
            let (rewards, values, dones) = traj.gae_inputs(cfg.train.gamma);
            let est = gae(
                &rewards,
                &values,
                &dones,
                traj.bootstrap_value,
                cfg.train.gamma,
                cfg.train.gae_lambda,
            )?;
            let mut user_adam = adam.clone();
            updates.push(compute_local_update_ppo(
                &arch,
                &theta_old,
                &traj,
                &est.advantages,
                &local,
                &mut user_adam,
                &mut streams.stream("local", user),
            )?);
            returns.extend_from_slice(&traj.completed_returns);
            targets.push(est.returns);
            batch.push(traj);
        }
        adam.t += local_steps_per_user;

        let agg = aggregate_and_privatize(
            &updates,
            k,
            cfg.privacy.z,
            cfg.privacy.clip_norm,
            &mut streams.stream("noise", it),
        )?;
        let expected_sigma = if cfg.privacy.z == 0.0 {
            0.0
        } else {
            cfg.privacy.z * cfg.privacy.clip_norm / k as f64
        };
        if agg.sigma != expected_sigma {
            return Err(Error::Contract(format!(
                "applied noise {} differs from zS/K = {expected_sigma}",
                agg.sigma
            )));
        }
        for (t, g) in theta.iter_mut().zip(&agg.noisy) {
            *t += cfg.train.global_lr * g;
        }

        for traj in &batch {
            if let Some(first) = traj.transitions.first() {
                let total: f64 = arch
                    .log_probs(&theta, &first.obs)
                    .iter()
                    .map(|l| l.exp())
                    .sum();
                if !((total - 1.0).abs() <= 1e-9) {
                    return Err(Error::Contract(format!(
                        "action probabilities sum to {total} after iteration {it}"
                    )));
                }
            }
        }
        if batch.iter().any(|t| t.iteration != it) {
            return Err(Error::Contract(
                "a trajectory from another iteration reached the update".into(),
            ));
        }
        fit_critic(
            &mut critic,
            &mut critic_adam,
            &batch,
            &targets,
            cfg,
            &mut streams.stream("critic", it),
        )?;
        drop(batch);

        if !returns.is_empty() {
            last_return = mean(&returns);
        }
        let row = IterationMetrics {
            iteration: it,
            users_seen: (it + 1) * k as u64,
            env_steps: (it + 1) * (k * t_steps) as u64,
            mean_return: last_return,
            grad_norm: l2_norm(&agg.mean),
            clip_fraction: agg.clip_fraction,
            clip_norm: cfg.privacy.clip_norm,
            epsilon: budget.map(|b| b.epsilon),
        };
        on_iteration(&row);
        if cfg.eval.every_steps > 0
            && row.env_steps as usize >= next_eval
            && (it + 1) < iterations as u64
        {
            let r = evaluate(cfg, &arch, &theta, &streams, it)?;
            evals.push(EvalPoint {
                env_steps: row.env_steps,
                mean_return: mean(&r),
                std_return: std_dev(&r),
            });
            while next_eval <= row.env_steps as usize {
                next_eval += cfg.eval.every_steps;
            }
        }
        metrics.push(row);
        released = Some(agg.noisy);
    }

    let final_returns = evaluate(cfg, &arch, &theta, &streams, u64::MAX)?;
    evals.push(EvalPoint {
        env_steps: metrics.last().map_or(0, |m| m.env_steps),
        mean_return: mean(&final_returns),
        std_return: std_dev(&final_returns),
    });
    Ok(DeepRun {
        params: PolicyParams::new(arch, theta)?,
        metrics,
        evals,
        final_returns,
        budget,
    })
}
