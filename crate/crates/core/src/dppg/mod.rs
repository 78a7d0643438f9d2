//! Private policy-gradient training: per-user local updates clipped to a
//! ball of radius `S`, averaged over `K` users with a fixed divisor, and
//! perturbed with Gaussian noise of standard deviation `z S / K`.

mod deep;
mod linear;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::accountant::{clip_l2_in_place, gaussian_perturb, l2_norm};
use crate::envs::Trajectory;
use crate::error::{check_dim, domain, Error, Result};
use crate::policies::{entropy_dlogits, entropy_of, log_softmax, Architecture};
use crate::rng::Rng;

pub use deep::{train_deep, train_deep_with, DeepRun, IterationMetrics};
pub use linear::{
    linear_noise_multiplier, train_linear_riverswim, uniform_policy_regret, LinearRun,
    LinearVariant, RegretPoint,
};

/// Slack allowed when checking `|g_u| <= S` after projection.
const NORM_SLACK: f64 = 1e-9;

/// Piecewise-constant learning-rate decay with a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial: f64,
    /// Episodes between decays.
    pub every: usize,
    pub factor: f64,
    pub min: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 12.0,
            every: 50,
            factor: 5.0,
            min: 0.06,
        }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.min > 0.0 && self.factor >= 1.0) || self.every == 0 {
            return Err(Error::Config(format!(
                "invalid learning-rate schedule {self:?}"
            )));
        }
        Ok(())
    }
}

/// `max(initial / factor^(episode / every), min)`.
pub fn lr_schedule(episode: usize, s: &LrSchedule) -> f64 {
    let decays = (episode / s.every) as i32;
    (s.initial / s.factor.powi(decays)).max(s.min)
}

/// Adam moments with the ascent convention (`theta += lr * m / sqrt(v)`).
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Steps taken so far; drives bias correction.
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(dim: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// Replace the moments with a released update and its elementwise square.
    pub fn substitute(&mut self, released: &[f64]) {
        self.m.copy_from_slice(released);
        for (v, g) in self.v.iter_mut().zip(released) {
            *v = g * g;
        }
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t.min(i32::MAX as u64) as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] += lr * mhat / (vhat.sqrt() + self.eps);
        }
    }

    pub fn descend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        self.ascend(params, &neg, lr);
    }
}

/// Inputs of one user's local optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalUpdateConfig {
    pub epochs: usize,
    pub minibatch_size: usize,
    pub lr: f64,
    /// Radius of the ball the local update is projected into.
    #[serde(skip)]
    pub clip_norm: f64,
    pub entropy_coef: f64,
    /// Standardize advantages within each minibatch.
    pub normalize_advantages: bool,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for LocalUpdateConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            minibatch_size: 32,
            lr: 7.26e-4,
            clip_norm: f64::INFINITY,
            entropy_coef: 0.36,
            normalize_advantages: true,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl LocalUpdateConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("local.{m}")));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.minibatch_size == 0 {
            return bad("minibatch_size must be >= 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip norm must be > 0");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be >= 0");
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("adam constants out of range");
        }
        Ok(())
    }
}

/// A user's clipped update `theta - theta_old`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub delta: Vec<f64>,
    /// Whether the projection onto the `S`-ball was active at the end.
    pub clipped: bool,
}

/// `mean(ratio * A) + c * mean(entropy)` over a minibatch, where
/// `ratio = pi_theta(a|s) / pi_old(a|s)`.
pub fn ppo_surrogate(
    arch: &Architecture,
    theta: &[f64],
    traj: &Trajectory,
    advantages: &[f64],
    batch: &[usize],
    entropy_coef: f64,
) -> f64 {
    let inv = 1.0 / batch.len() as f64;
    batch
        .iter()
        .map(|&i| {
            let t = &traj.transitions[i];
            let lp = arch.log_probs(theta, &t.obs);
            let ratio = (lp[t.action] - t.log_prob).exp();
            inv * (ratio * advantages[i] + entropy_coef * entropy_of(&lp))
        })
        .sum()
}

/// Gradient of [`ppo_surrogate`] with respect to `theta`.
pub fn ppo_surrogate_grad(
    arch: &Architecture,
    theta: &[f64],
    traj: &Trajectory,
    advantages: &[f64],
    batch: &[usize],
    entropy_coef: f64,
) -> Vec<f64> {
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; arch.param_dim()];
    for &i in batch {
        let t = &traj.transitions[i];
        let adv = advantages[i];
        arch.backprop(theta, &t.obs, &mut grad, &mut |logits, d| {
            let lp = log_softmax(logits);
            let ratio = (lp[t.action] - t.log_prob).exp();
            for (k, dk) in d.iter_mut().enumerate() {
                let onehot = if k == t.action { 1.0 } else { 0.0 };
                *dk = inv * ratio * adv * (onehot - lp[k].exp());
            }
            if entropy_coef > 0.0 {
                entropy_dlogits(&lp, inv * entropy_coef, d);
            }
        });
    }
    grad
}

fn normalized(adv: &[f64], batch: &[usize]) -> Vec<f64> {
    let n = batch.len() as f64;
    let mean = batch.iter().map(|&i| adv[i]).sum::<f64>() / n;
    let var = batch.iter().map(|&i| (adv[i] - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt() + 1e-8;
    let mut out = adv.to_vec();
    for &i in batch {
        out[i] = (adv[i] - mean) / sd;
    }
    out
}

/// Local ascent on the ratio-weighted surrogate with projection of
/// `theta - theta_old` onto the `S`-ball after every step.
pub fn compute_local_update_ppo(
    arch: &Architecture,
    theta_old: &[f64],
    traj: &Trajectory,
    advantages: &[f64],
    cfg: &LocalUpdateConfig,
    adam: &mut Adam,
    rng: &mut Rng,
) -> Result<LocalUpdate> {
    cfg.validate()?;
    check_dim(arch.param_dim(), theta_old.len())?;
    check_dim(traj.len(), advantages.len())?;
    if traj.is_empty() {
        return Err(domain("local update needs a nonempty trajectory"));
    }
    for (i, t) in traj.transitions.iter().enumerate() {
        let lp = arch.log_prob(theta_old, &t.obs, t.action);
        if (lp - t.log_prob).abs() > 1e-10 {
            return Err(Error::Contract(format!(
                "step {i} of user {} was not generated by the current parameters (log-prob {} vs {lp})",
                traj.user, t.log_prob
            )));
        }
    }
    let mut theta = theta_old.to_vec();
    let mut delta = vec![0.0; theta.len()];
    let mut order: Vec<usize> = (0..traj.len()).collect();
    let mut clipped = false;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.minibatch_size) {
            let adv = if cfg.normalize_advantages && batch.len() > 1 {
                normalized(advantages, batch)
            } else {
                advantages.to_vec()
            };
            let grad = ppo_surrogate_grad(arch, &theta, traj, &adv, batch, cfg.entropy_coef);
            adam.ascend(&mut theta, &grad, cfg.lr);
            for ((d, t), t0) in delta.iter_mut().zip(&theta).zip(theta_old) {
                *d = t - t0;
            }
            clipped = clip_l2_in_place(&mut delta, cfg.clip_norm) < 1.0;
            if clipped {
                for ((t, t0), d) in theta.iter_mut().zip(theta_old).zip(&delta) {
                    *t = t0 + d;
                }
            }
        }
    }
    let norm = l2_norm(&delta);
    if norm > cfg.clip_norm * (1.0 + NORM_SLACK) {
        return Err(Error::Contract(format!(
            "local update norm {norm} exceeds S = {}",
            cfg.clip_norm
        )));
    }
    Ok(LocalUpdate { delta, clipped })
}

/// Result of aggregating one iteration's local updates.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateResult {
    /// Fixed-divisor mean of the clipped local updates.
    pub mean: Vec<f64>,
    /// `mean` plus Gaussian noise; the only released quantity.
    pub noisy: Vec<f64>,
    /// Per-coordinate noise standard deviation actually applied.
    pub sigma: f64,
    pub clip_fraction: f64,
}

/// `gbar = sum(g_u) / K` and `g~ = gbar + N(0, (z S / K)^2 I)`.
pub fn aggregate_and_privatize(
    updates: &[LocalUpdate],
    users_per_update: usize,
    z: f64,
    clip_norm: f64,
    rng: &mut Rng,
) -> Result<UpdateResult> {
    if users_per_update == 0 || updates.len() != users_per_update {
        return Err(Error::Contract(format!(
            "expected {users_per_update} local updates, got {}",
            updates.len()
        )));
    }
    if !(z >= 0.0) || !(clip_norm > 0.0) {
        return Err(domain(format!(
            "need z >= 0 and S > 0, got z = {z}, S = {clip_norm}"
        )));
    }
    let dim = updates[0].delta.len();
    let mut mean = vec![0.0; dim];
    for (u, upd) in updates.iter().enumerate() {
        check_dim(dim, upd.delta.len())?;
        let n = l2_norm(&upd.delta);
        if n > clip_norm * (1.0 + NORM_SLACK) {
            return Err(Error::Contract(format!(
                "local update {u} has norm {n} > S = {clip_norm}"
            )));
        }
        for (m, d) in mean.iter_mut().zip(&upd.delta) {
            *m += d;
        }
    }
    let k = users_per_update as f64;
    for m in &mut mean {
        *m /= k;
    }
    let sigma = if z == 0.0 { 0.0 } else { z * clip_norm / k };
    if sigma.is_nan() || sigma.is_infinite() {
        return Err(domain("noise needs a finite clip norm"));
    }
    let noisy = gaussian_perturb(&mean, sigma, rng)?;
    let clip_fraction = updates.iter().filter(|u| u.clipped).count() as f64 / k;
    Ok(UpdateResult {
        mean,
        noisy,
        sigma,
        clip_fraction,
    })
}
