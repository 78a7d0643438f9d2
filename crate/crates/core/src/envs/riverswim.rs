//! A chain MDP where swimming left is easy and pays a pittance, and swimming
//! right against the current is slow but leads to the large reward.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Env, Step};
use crate::error::{domain, Result};
use crate::rng::Rng;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Chain layout, rewards, and every transition probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiverswimConfig {
    pub n_states: usize,
    pub horizon: usize,
    /// Chance that swimming right at the last state pays `right_reward`.
    pub right_reward_prob: f64,
    pub left_reward: f64,
    pub right_reward: f64,
    /// Swimming right from an interior state.
    pub right_advance: f64,
    pub right_stay: f64,
    pub right_retreat: f64,
    /// Swimming right from the leftmost state; the remainder stays.
    pub start_advance: f64,
    /// Swimming right from the rightmost state; the remainder retreats.
    pub end_stay: f64,
    pub start_state: usize,
}

impl Default for RiverswimConfig {
    fn default() -> Self {
        Self {
            n_states: 6,
            horizon: 20,
            right_reward_prob: 0.6,
            left_reward: 0.005,
            right_reward: 1.0,
            right_advance: 0.6,
            right_stay: 0.35,
            right_retreat: 0.05,
            start_advance: 0.6,
            end_stay: 0.6,
            start_state: 0,
        }
    }
}

impl RiverswimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(domain("riverswim needs at least 2 states"));
        }
        if self.horizon == 0 {
            return Err(domain("riverswim horizon must be >= 1"));
        }
        if self.start_state >= self.n_states {
            return Err(domain("riverswim start state out of range"));
        }
        let probs = [
            ("right_reward_prob", self.right_reward_prob),
            ("right_advance", self.right_advance),
            ("right_stay", self.right_stay),
            ("right_retreat", self.right_retreat),
            ("start_advance", self.start_advance),
            ("end_stay", self.end_stay),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(domain(format!(
                    "riverswim {name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if !(self.right_reward_prob > 0.0) {
            return Err(domain("riverswim right_reward_prob must be > 0"));
        }
        let interior = self.right_advance + self.right_stay + self.right_retreat;
        if (interior - 1.0).abs() > 1e-12 {
            return Err(domain(format!(
                "interior right-move probabilities sum to {interior}, not 1"
            )));
        }
        for (name, r) in [
            ("left_reward", self.left_reward),
            ("right_reward", self.right_reward),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(domain(format!(
                    "riverswim {name} must lie in [0, 1], got {r}"
                )));
            }
        }
        Ok(())
    }

    /// Categorical next-state distribution as `(next_state, probability)`.
    pub fn kernel(&self, state: usize, action: usize) -> Vec<(usize, f64)> {
        let last = self.n_states - 1;
        if action == LEFT {
            return vec![(state.saturating_sub(1), 1.0)];
        }
        if state == 0 {
            vec![(1, self.start_advance), (0, 1.0 - self.start_advance)]
        } else if state == last {
            vec![(last, self.end_stay), (last - 1, 1.0 - self.end_stay)]
        } else {
            vec![
                (state + 1, self.right_advance),
                (state, self.right_stay),
                (state - 1, self.right_retreat),
            ]
        }
    }

    pub fn expected_reward(&self, state: usize, action: usize) -> f64 {
        if action == LEFT && state == 0 {
            self.left_reward
        } else if action == RIGHT && state == self.n_states - 1 {
            self.right_reward_prob * self.right_reward
        } else {
            0.0
        }
    }

    pub fn onehot(&self, state: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[state] = 1.0;
        v
    }
}

/// One step of the chain from `state`.
pub fn riverswim_step(
    cfg: &RiverswimConfig,
    state: usize,
    action: usize,
    rng: &mut Rng,
) -> (usize, f64) {
    let reward = if action == LEFT && state == 0 {
        cfg.left_reward
    } else if action == RIGHT && state == cfg.n_states - 1 {
        if rng.random::<f64>() < cfg.right_reward_prob {
            cfg.right_reward
        } else {
            0.0
        }
    } else {
        0.0
    };
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let kernel = cfg.kernel(state, action);
    for &(next, p) in &kernel {
        acc += p;
        if u < acc {
            return (next, reward);
        }
    }
    (kernel.last().unwrap().0, reward)
}

/// Finite-horizon values: `values[h][s]` is the value with `h` steps elapsed.
#[derive(Debug, Clone)]
pub struct FiniteHorizonValues {
    pub values: Vec<Vec<f64>>,
    /// Greedy action per `(h, s)`; present only for optimal values.
    pub actions: Vec<Vec<usize>>,
    /// Value of the start state at `h = 0`.
    pub start_value: f64,
}

/// Backward induction over `horizon` steps.
pub fn riverswim_optimal_value(cfg: &RiverswimConfig) -> Result<FiniteHorizonValues> {
    cfg.validate()?;
    let n = cfg.n_states;
    let mut values = vec![vec![0.0; n]; cfg.horizon + 1];
    let mut actions = vec![vec![LEFT; n]; cfg.horizon];
    for h in (0..cfg.horizon).rev() {
        for s in 0..n {
            let q = |a: usize| {
                cfg.expected_reward(s, a)
                    + cfg
                        .kernel(s, a)
                        .iter()
                        .map(|&(ns, p)| p * values[h + 1][ns])
                        .sum::<f64>()
            };
            let (ql, qr) = (q(LEFT), q(RIGHT));
            let (best, a) = if qr > ql { (qr, RIGHT) } else { (ql, LEFT) };
            values[h][s] = best;
            actions[h][s] = a;
        }
    }
    let start_value = values[0][cfg.start_state];
    Ok(FiniteHorizonValues {
        values,
        actions,
        start_value,
    })
}

/// Exact expected return of the stationary policy `pi[s][a]`.
pub fn riverswim_policy_value(
    cfg: &RiverswimConfig,
    pi: &[Vec<f64>],
) -> Result<FiniteHorizonValues> {
    cfg.validate()?;
    let n = cfg.n_states;
    if pi.len() != n || pi.iter().any(|row| row.len() != 2) {
        return Err(domain("policy table must be n_states x 2"));
    }
    let mut values = vec![vec![0.0; n]; cfg.horizon + 1];
    for h in (0..cfg.horizon).rev() {
        for s in 0..n {
            values[h][s] = (0..2)
                .map(|a| {
                    pi[s][a]
                        * (cfg.expected_reward(s, a)
                            + cfg
                                .kernel(s, a)
                                .iter()
                                .map(|&(ns, p)| p * values[h + 1][ns])
                                .sum::<f64>())
                })
                .sum();
        }
    }
    let start_value = values[0][cfg.start_state];
    Ok(FiniteHorizonValues {
        values,
        actions: Vec::new(),
        start_value,
    })
}

/// The chain as an episodic environment with one-hot observations.
#[derive(Debug, Clone)]
pub struct Riverswim {
    cfg: RiverswimConfig,
    state: usize,
    t: usize,
}

impl Riverswim {
    pub fn new(cfg: RiverswimConfig) -> Result<Self> {
        cfg.validate()?;
        let state = cfg.start_state;
        Ok(Self { cfg, state, t: 0 })
    }

    pub fn config(&self) -> &RiverswimConfig {
        &self.cfg
    }

    pub fn state(&self) -> usize {
        self.state
    }
}

impl Env for Riverswim {
    fn obs_dim(&self) -> usize {
        self.cfg.n_states
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, _rng: &mut Rng) -> Vec<f64> {
        self.state = self.cfg.start_state;
        self.t = 0;
        self.cfg.onehot(self.state)
    }

    fn step(&mut self, action: usize, rng: &mut Rng) -> Step {
        let (next, reward) = riverswim_step(&self.cfg, self.state, action, rng);
        self.state = next;
        self.t += 1;
        Step {
            obs: self.cfg.onehot(next),
            reward,
            terminated: false,
            truncated: self.t >= self.cfg.horizon,
        }
    }
}
