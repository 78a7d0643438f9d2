//! Cart-pole balancing with the classic-control constants.

use rand::Rng as _;

use super::{Env, Step};
use crate::rng::Rng;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const X_LIMIT: f64 = 2.4;
pub const MAX_STEPS: usize = 500;

/// State `(x, x_dot, theta, theta_dot)`; reward 1 per step.
#[derive(Debug, Clone, Default)]
pub struct CartPole {
    state: [f64; 4],
    t: usize,
}

impl CartPole {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_state(state: [f64; 4]) -> Self {
        Self { state, t: 0 }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }
}

impl Env for CartPole {
    fn obs_dim(&self) -> usize {
        4
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        for s in &mut self.state {
            *s = rng.random_range(-0.05..0.05);
        }
        self.t = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize, _rng: &mut Rng) -> Step {
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { FORCE_MAG } else { -FORCE_MAG };
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        self.t += 1;
        let terminated = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        Step {
            obs: self.state.to_vec(),
            reward: 1.0,
            terminated,
            truncated: !terminated && self.t >= MAX_STEPS,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Streams;

    #[test]
    fn upright_start_survives_a_step() {
        let mut rng = Streams::new(0).stream("env", 0);
        for a in 0..2 {
            let mut env = CartPole::with_state([0.0; 4]);
            assert!(!env.step(a, &mut rng).terminated);
        }
    }

    #[test]
    fn one_step_matches_hand_computation() {
        let mut rng = Streams::new(0).stream("env", 0);
        let mut env = CartPole::with_state([0.0; 4]);
        env.step(1, &mut rng);
        // theta_acc = -(10/1.1) / (0.5 (4/3 - 0.1/1.1))
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        let s = env.state();
        assert_eq!(s[0], 0.0);
        assert!((s[1] - 0.02 * x_acc).abs() < 1e-15);
        assert!((s[3] - 0.02 * theta_acc).abs() < 1e-15);
    }

    #[test]
    fn random_policy_fails_quickly() {
        let mut rng = Streams::new(1).stream("env", 0);
        let mut env = CartPole::new();
        let mut total = 0.0;
        for _ in 0..100 {
            env.reset(&mut rng);
            loop {
                let st = env.step(rng.random_range(0..2), &mut rng);
                total += st.reward;
                if st.terminated || st.truncated {
                    break;
                }
            }
        }
        assert!(total / 100.0 < 50.0);
    }
}
