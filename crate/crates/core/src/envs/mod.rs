//! Seeded episodic environments and on-policy rollout collection.

mod acrobot;
mod cartpole;
mod riverswim;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::policies::{sample_action, Architecture, Critic};
use crate::rng::Rng;

pub use acrobot::Acrobot;
pub use cartpole::CartPole;
pub use riverswim::{
    riverswim_optimal_value, riverswim_policy_value, riverswim_step, FiniteHorizonValues,
    Riverswim, RiverswimConfig, LEFT, RIGHT,
};

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The episode reached an absorbing state.
    pub terminated: bool,
    /// The episode hit its step limit.
    pub truncated: bool,
}

/// Episodic environment with a discrete action set.
pub trait Env: Send {
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;
    fn step(&mut self, action: usize, rng: &mut Rng) -> Step;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    Riverswim,
    Cartpole,
    Acrobot,
}

impl EnvId {
    pub fn name(self) -> &'static str {
        match self {
            EnvId::Riverswim => "riverswim",
            EnvId::Cartpole => "cartpole",
            EnvId::Acrobot => "acrobot",
        }
    }

    pub fn make(self, riverswim: &RiverswimConfig) -> Result<Box<dyn Env>> {
        Ok(match self {
            EnvId::Riverswim => Box::new(Riverswim::new(riverswim.clone())?),
            EnvId::Cartpole => Box::new(CartPole::new()),
            EnvId::Acrobot => Box::new(Acrobot::new()),
        })
    }

    pub fn obs_dim(self, riverswim: &RiverswimConfig) -> usize {
        match self {
            EnvId::Riverswim => riverswim.n_states,
            EnvId::Cartpole => 4,
            EnvId::Acrobot => 6,
        }
    }

    pub fn n_actions(self) -> usize {
        match self {
            EnvId::Riverswim | EnvId::Cartpole => 2,
            EnvId::Acrobot => 3,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "riverswim" => Ok(EnvId::Riverswim),
            "cartpole" => Ok(EnvId::Cartpole),
            "acrobot" => Ok(EnvId::Acrobot),
            other => Err(format!(
                "unknown env {other:?}; expected riverswim, cartpole or acrobot"
            )),
        }
    }
}

/// Progress of the episode currently running in an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub done: bool,
    pub t: usize,
    pub episode_return: f64,
}

/// One step of experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    /// `log pi(action | obs)` under the behaviour parameters.
    pub log_prob: f64,
    /// Critic value of `obs`.
    pub value: f64,
    /// Critic value of the final observation when `truncated`.
    pub truncation_value: f64,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// A user's contiguous segment of experience.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub user: u64,
    pub iteration: u64,
    pub transitions: Vec<Transition>,
    /// Critic value of the observation following the last transition.
    pub bootstrap_value: f64,
    /// Returns of episodes that finished inside this segment.
    pub completed_returns: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Inputs to advantage estimation with truncations folded into the
    /// reward: `r + gamma V(final obs)` and a cut bootstrap.
    pub fn gae_inputs(&self, gamma: f64) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let rewards = self
            .transitions
            .iter()
            .map(|t| {
                if t.truncated {
                    t.reward + gamma * t.truncation_value
                } else {
                    t.reward
                }
            })
            .collect();
        let values = self.transitions.iter().map(|t| t.value).collect();
        let dones = self.transitions.iter().map(Transition::done).collect();
        (rewards, values, dones)
    }
}

/// An environment plus its running episode and private random stream.
pub struct Runner {
    env: Box<dyn Env>,
    state: EnvState,
    rng: Rng,
}

impl Runner {
    pub fn new(mut env: Box<dyn Env>, mut rng: Rng) -> Self {
        let observation = env.reset(&mut rng);
        Self {
            env,
            state: EnvState {
                observation,
                done: false,
                t: 0,
                episode_return: 0.0,
            },
            rng,
        }
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn obs_dim(&self) -> usize {
        self.env.obs_dim()
    }

    pub fn n_actions(&self) -> usize {
        self.env.n_actions()
    }

    /// Steps the environment; resets it after a terminal or truncated step.
    /// Returns the step and, if an episode finished, its return.
    pub fn advance(&mut self, action: usize) -> (Step, Option<f64>) {
        let step = self.env.step(action, &mut self.rng);
        self.state.t += 1;
        self.state.episode_return += step.reward;
        if step.terminated || step.truncated {
            let ret = self.state.episode_return;
            self.state.observation = self.env.reset(&mut self.rng);
            self.state.t = 0;
            self.state.episode_return = 0.0;
            (step, Some(ret))
        } else {
            self.state.observation.clone_from(&step.obs);
            (step, None)
        }
    }

    /// Starts a fresh episode regardless of the current one.
    pub fn restart(&mut self) {
        self.state = EnvState {
            observation: self.env.reset(&mut self.rng),
            done: false,
            t: 0,
            episode_return: 0.0,
        };
    }
}

/// Collects exactly `steps` transitions under `theta`, resetting inside the
/// segment whenever an episode ends.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    runner: &mut Runner,
    arch: &Architecture,
    theta: &[f64],
    critic: Option<&Critic>,
    steps: usize,
    user: u64,
    iteration: u64,
    rng: &mut Rng,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(domain("rollout length must be >= 1"));
    }
    if arch.obs_dim() != runner.obs_dim() || arch.n_actions() != runner.n_actions() {
        return Err(domain(format!(
            "policy {arch} does not fit an environment with {} observations and {} actions",
            runner.obs_dim(),
            runner.n_actions()
        )));
    }
    let value_of = |obs: &[f64]| critic.map_or(0.0, |c| c.value(obs));
    let mut transitions = Vec::with_capacity(steps);
    let mut completed_returns = Vec::new();
    for _ in 0..steps {
        let obs = runner.state.observation.clone();
        let log_probs = arch.log_probs(theta, &obs);
        let action = sample_action(&log_probs, rng);
        let value = value_of(&obs);
        let (step, finished) = runner.advance(action);
        let truncation_value = if step.truncated && !step.terminated {
            value_of(&step.obs)
        } else {
            0.0
        };
        transitions.push(Transition {
            obs,
            action,
            reward: step.reward,
            terminated: step.terminated,
            truncated: step.truncated && !step.terminated,
            log_prob: log_probs[action],
            value,
            truncation_value,
        });
        if let Some(r) = finished {
            completed_returns.push(r);
        }
    }
    let bootstrap_value = value_of(&runner.state.observation);
    Ok(Trajectory {
        user,
        iteration,
        transitions,
        bootstrap_value,
        completed_returns,
    })
}

/// Undiscounted returns of `episodes` full episodes sampled from the policy.
pub fn evaluate_policy(
    env: Box<dyn Env>,
    arch: &Architecture,
    theta: &[f64],
    episodes: usize,
    env_rng: Rng,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if episodes == 0 {
        return Err(domain("evaluation needs at least one episode"));
    }
    let mut runner = Runner::new(env, env_rng);
    if arch.obs_dim() != runner.obs_dim() || arch.n_actions() != runner.n_actions() {
        return Err(domain(format!(
            "policy {arch} does not fit an environment with {} observations and {} actions",
            runner.obs_dim(),
            runner.n_actions()
        )));
    }
    let mut returns = Vec::with_capacity(episodes);
    while returns.len() < episodes {
        let lp = arch.log_probs(theta, &runner.state.observation);
        let a = sample_action(&lp, rng);
        if let (_, Some(r)) = runner.advance(a) {
            returns.push(r);
        }
    }
    Ok(returns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::FeatureMap;
    use crate::rng::Streams;

    fn cartpole_setup(seed: u64) -> (Runner, Architecture, Vec<f64>) {
        let s = Streams::new(seed);
        let arch = Architecture::Mlp {
            obs_dim: 4,
            hidden: [64, 64],
            n_actions: 2,
        };
        let theta = arch.init(&mut s.stream("init", 0));
        (
            Runner::new(
                EnvId::Cartpole.make(&RiverswimConfig::default()).unwrap(),
                s.stream("env", 0),
            ),
            arch,
            theta,
        )
    }

    #[test]
    fn rollout_has_exact_length_and_resets() {
        let (mut runner, arch, theta) = cartpole_setup(1);
        let mut rng = Streams::new(1).stream("act", 0);
        let traj = rollout(&mut runner, &arch, &theta, None, 64, 0, 0, &mut rng).unwrap();
        assert_eq!(traj.len(), 64);
        let long = rollout(&mut runner, &arch, &theta, None, 2000, 0, 0, &mut rng).unwrap();
        assert_eq!(long.len(), 2000);
        assert!(long.transitions.iter().any(|t| t.terminated));
        assert!(!long.completed_returns.is_empty());
    }

    #[test]
    fn rollouts_are_deterministic_per_seed() {
        let run = || {
            let (mut runner, arch, theta) = cartpole_setup(7);
            let mut rng = Streams::new(7).stream("act", 0);
            rollout(&mut runner, &arch, &theta, None, 300, 0, 0, &mut rng)
                .unwrap()
                .transitions
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn log_probs_add_up_to_joint_likelihood() {
        let (mut runner, arch, theta) = cartpole_setup(3);
        let mut rng = Streams::new(3).stream("act", 0);
        let traj = rollout(&mut runner, &arch, &theta, None, 64, 0, 0, &mut rng).unwrap();
        let stored: f64 = traj.transitions.iter().map(|t| t.log_prob).sum();
        let recomputed: f64 = traj
            .transitions
            .iter()
            .map(|t| arch.log_prob(&theta, &t.obs, t.action))
            .sum();
        assert!((stored - recomputed).abs() < 1e-10);
    }

    #[test]
    fn riverswim_episodes_truncate_at_horizon() {
        let cfg = RiverswimConfig::default();
        let arch = Architecture::LogLinear {
            obs_dim: 6,
            n_actions: 2,
            features: FeatureMap::Product,
        };
        let s = Streams::new(2);
        let mut runner = Runner::new(EnvId::Riverswim.make(&cfg).unwrap(), s.stream("env", 0));
        let traj = rollout(
            &mut runner,
            &arch,
            &[0.0; 12],
            None,
            60,
            0,
            0,
            &mut s.stream("act", 0),
        )
        .unwrap();
        let cuts: Vec<usize> = (0..60).filter(|&i| traj.transitions[i].truncated).collect();
        assert_eq!(cuts, vec![19, 39, 59]);
        for t in &traj.transitions {
            assert!([0.0, 0.005, 1.0].contains(&t.reward));
        }
    }

    #[test]
    fn observations_stay_finite_under_random_actions() {
        let s = Streams::new(5);
        let mut rng = s.stream("act", 0);
        for id in [EnvId::Cartpole, EnvId::Acrobot] {
            let mut runner = Runner::new(
                id.make(&RiverswimConfig::default()).unwrap(),
                s.stream("env", 0),
            );
            for _ in 0..1_000_000 {
                let a = rand::Rng::random_range(&mut rng, 0..id.n_actions());
                let (step, _) = runner.advance(a);
                assert!(step.obs.iter().all(|x| x.is_finite()));
            }
        }
    }

    #[test]
    fn mismatched_policy_is_rejected() {
        let (mut runner, _, _) = cartpole_setup(1);
        let arch = Architecture::Mlp {
            obs_dim: 6,
            hidden: [8, 8],
            n_actions: 3,
        };
        let theta = vec![0.0; arch.param_dim()];
        let mut rng = Streams::new(1).stream("act", 0);
        assert!(rollout(&mut runner, &arch, &theta, None, 4, 0, 0, &mut rng).is_err());
    }
}
