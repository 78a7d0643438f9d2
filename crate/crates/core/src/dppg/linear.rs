use serde::{Deserialize, Serialize};

use super::lr_schedule;
use crate::accountant::{clip_l2, gaussian_perturb, z_of_epsilon, PrivacyBudget};
use crate::config::ExperimentConfig;
use crate::envs::{
    riverswim_optimal_value, riverswim_policy_value, rollout, EnvId, Riverswim, RiverswimConfig,
    Runner, RIGHT,
};
use crate::error::Result;
use crate::policies::{pg_estimate, Architecture, Critic, CriticKind, PolicyParams};
use crate::rng::Streams;
use crate::trust_region::{
    clip_norm_kl, clip_norm_l2_quantile, fisher_estimate, FisherMatrix, TrustRegionParams,
};

/// Which trust region sets the clipping norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearVariant {
    /// Quantile bound on `|dtheta|^2 / 2`.
    L2,
    /// Markov bound on the Fisher quadratic form.
    Kl,
}

/// One row of `regret.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretPoint {
    pub episode: usize,
    pub cumulative_regret: f64,
    #[serde(rename = "S_used")]
    pub s_used: f64,
}

#[derive(Debug, Clone)]
pub struct LinearRun {
    pub params: PolicyParams,
    pub regret: Vec<RegretPoint>,
    pub z: f64,
    pub budget: Option<PrivacyBudget>,
    /// Returns of the training episodes, in order.
    pub returns: Vec<f64>,
    /// Whether the final policy prefers swimming right in every state.
    pub always_right: bool,
    /// First episode whose deployed policy preferred right everywhere.
    pub first_always_right: Option<usize>,
}

impl LinearRun {
    pub fn total_regret(&self) -> f64 {
        self.regret.last().map_or(0.0, |r| r.cumulative_regret)
    }
}

fn policy_table(arch: &Architecture, theta: &[f64], cfg: &RiverswimConfig) -> Vec<Vec<f64>> {
    (0..cfg.n_states)
        .map(|s| {
            arch.log_probs(theta, &cfg.onehot(s))
                .iter()
                .map(|l| l.exp())
                .collect()
        })
        .collect()
}

/// Whether `argmax_a pi(a | s)` is "right" in every state.
pub fn prefers_right_everywhere(arch: &Architecture, theta: &[f64], cfg: &RiverswimConfig) -> bool {
    policy_table(arch, theta, cfg)
        .iter()
        .all(|p| p[RIGHT] > p[1 - RIGHT])
}

/// Cumulative regret of the uniform-random policy over `episodes` episodes.
pub fn uniform_policy_regret(cfg: &RiverswimConfig, episodes: usize) -> Result<f64> {
    let best = riverswim_optimal_value(cfg)?.start_value;
    let uniform = riverswim_policy_value(cfg, &vec![vec![0.5, 0.5]; cfg.n_states])?.start_value;
    Ok(episodes as f64 * (best - uniform))
}

/// Noise multiplier implied by the config: derived from `linear.epsilon`
/// when set, otherwise `privacy.z`.
pub fn linear_noise_multiplier(cfg: &ExperimentConfig) -> Result<f64> {
    match cfg.linear.epsilon {
        Some(eps) => z_of_epsilon(eps, cfg.privacy.delta),
        None => Ok(cfg.privacy.z),
    }
}

/// One private policy-gradient step per episode with the clipping norm
/// recomputed from the trust-region bound at the current learning rate.
pub fn train_linear_riverswim(cfg: &ExperimentConfig, variant: LinearVariant) -> Result<LinearRun> {
    cfg.validate()?;
    let river = cfg.riverswim.clone();
    let lin = &cfg.linear;
    let z = linear_noise_multiplier(cfg)?;
    let budget = if z == 0.0 {
        None
    } else {
        Some(crate::accountant::epsilon_of_z(z, cfg.privacy.delta)?)
    };
    let streams = Streams::new(cfg.seed);
    let arch = Architecture::LogLinear {
        obs_dim: river.n_states,
        n_actions: 2,
        features: lin.features,
    };
    let d = arch.param_dim();
    let mut theta = arch.init(&mut streams.stream("init", 0));
    let mut baseline = Critic::from_params(
        CriticKind::Linear {
            obs_dim: river.n_states,
        },
        vec![0.0; river.n_states],
    )?;
    let best = riverswim_optimal_value(&river)?.start_value;
    let gamma = cfg.train.gamma;
    let horizon = river.horizon;
    let mut runner = Runner::new(
        Box::new(Riverswim::new(river.clone())?),
        streams.stream("env", 0),
    );

    let mut fisher: Option<FisherMatrix> = None;
    let mut fisher_lr = f64::NAN;
    let mut regret = Vec::with_capacity(lin.episodes);
    let mut returns = Vec::with_capacity(lin.episodes);
    let mut cumulative = 0.0;
    let mut first_always_right = None;
    for ep in 0..lin.episodes {
        let eta = lr_schedule(ep, &lin.schedule);
        let table = policy_table(&arch, &theta, &river);
        if first_always_right.is_none() && table.iter().all(|p| p[RIGHT] > p[1 - RIGHT]) {
            first_always_right = Some(ep);
        }
        let deployed = riverswim_policy_value(&river, &table)?.start_value;
        cumulative += best - deployed;

        let traj = rollout(
            &mut runner,
            &arch,
            &theta,
            None,
            horizon,
            ep as u64,
            ep as u64,
            &mut streams.stream("rollout", ep as u64),
        )?;
        returns.push(traj.transitions.iter().map(|t| t.reward).sum());
        let mut discounted = vec![0.0; horizon];
        let mut acc = 0.0;
        for t in (0..horizon).rev() {
            acc = traj.transitions[t].reward + gamma * acc;
            discounted[t] = acc;
        }
        let obs: Vec<&[f64]> = traj.transitions.iter().map(|t| t.obs.as_slice()).collect();
        let actions: Vec<usize> = traj.transitions.iter().map(|t| t.action).collect();
        let adv: Vec<f64> = obs
            .iter()
            .zip(&discounted)
            .map(|(o, g)| g - baseline.value(o))
            .collect();
        let ghat = pg_estimate(&arch, &theta, &obs, &actions, &adv)?;
        let (_, vgrad) = baseline.value_loss_grad(&obs, &discounted)?;
        for (p, g) in baseline.params_mut().iter_mut().zip(&vgrad) {
            *p -= lin.baseline_lr * g;
        }

        let tr = TrustRegionParams::new(lin.alpha, lin.beta, eta, z, d)?;
        let clip_norm = match variant {
            LinearVariant::L2 => clip_norm_l2_quantile(&tr)?,
            LinearVariant::Kl => {
                let due = match lin.fisher_refresh {
                    Some(every) => ep % every == 0,
                    None => eta != fisher_lr,
                };
                if fisher.is_none() || due {
                    fisher = Some(estimate_fisher(cfg, &arch, &theta, &streams, ep)?);
                    fisher_lr = eta;
                }
                clip_norm_kl(&tr, fisher.as_ref().unwrap())?
            }
        };
        let (clipped, _) = clip_l2(&ghat, clip_norm);
        let noisy = gaussian_perturb(
            &clipped,
            z * clip_norm,
            &mut streams.stream("noise", ep as u64),
        )?;
        for (t, g) in theta.iter_mut().zip(&noisy) {
            *t += eta * g;
        }
        regret.push(RegretPoint {
            episode: ep,
            cumulative_regret: cumulative,
            s_used: clip_norm,
        });
    }
    let always_right = prefers_right_everywhere(&arch, &theta, &river);
    if always_right && first_always_right.is_none() {
        first_always_right = Some(lin.episodes);
    }
    Ok(LinearRun {
        params: PolicyParams::new(arch, theta)?,
        regret,
        z,
        budget,
        returns,
        always_right,
        first_always_right,
    })
}

/// Fisher matrix from fresh non-private episodes of the current policy.
fn estimate_fisher(
    cfg: &ExperimentConfig,
    arch: &Architecture,
    theta: &[f64],
    streams: &Streams,
    ep: usize,
) -> Result<FisherMatrix> {
    let river = &cfg.riverswim;
    let mut runner = Runner::new(
        EnvId::Riverswim.make(river)?,
        streams.stream("fisher-env", ep as u64),
    );
    let traj = rollout(
        &mut runner,
        arch,
        theta,
        None,
        river.horizon * cfg.linear.fisher_episodes,
        0,
        ep as u64,
        &mut streams.stream("fisher-act", ep as u64),
    )?;
    fisher_estimate(
        arch,
        theta,
        traj.transitions
            .iter()
            .map(|t| (t.obs.as_slice(), t.action)),
        cfg.linear.fisher_regularizer,
    )
}
