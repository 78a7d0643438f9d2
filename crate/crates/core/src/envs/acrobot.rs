//! Two-link underactuated pendulum (book dynamics, RK4 integration).

use std::f64::consts::PI;

use rand::Rng as _;

use super::{Env, Step};
use crate::rng::Rng;

const DT: f64 = 0.2;
const LINK_LENGTH_1: f64 = 1.0;
const LINK_MASS_1: f64 = 1.0;
const LINK_MASS_2: f64 = 1.0;
const LINK_COM_1: f64 = 0.5;
const LINK_COM_2: f64 = 0.5;
const LINK_MOI: f64 = 1.0;
const GRAVITY: f64 = 9.8;
const MAX_VEL_1: f64 = 4.0 * PI;
const MAX_VEL_2: f64 = 9.0 * PI;
const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];
pub const MAX_STEPS: usize = 500;

/// State `(theta1, theta2, dtheta1, dtheta2)`; reward -1 until the tip
/// clears one link length above the pivot.
#[derive(Debug, Clone, Default)]
pub struct Acrobot {
    state: [f64; 4],
    t: usize,
}

impl Acrobot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_state(state: [f64; 4]) -> Self {
        Self { state, t: 0 }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// Tip height relative to the pivot, in link lengths.
    pub fn tip_height(&self) -> f64 {
        let [t1, t2, ..] = self.state;
        -t1.cos() - (t1 + t2).cos()
    }

    fn observation(&self) -> Vec<f64> {
        let [t1, t2, d1, d2] = self.state;
        vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), d1, d2]
    }
}

fn derivs(s: [f64; 4], torque: f64) -> [f64; 4] {
    let (m1, m2, l1, lc1, lc2) = (
        LINK_MASS_1,
        LINK_MASS_2,
        LINK_LENGTH_1,
        LINK_COM_1,
        LINK_COM_2,
    );
    let (i1, i2, g) = (LINK_MOI, LINK_MOI, GRAVITY);
    let [theta1, theta2, dtheta1, dtheta2] = s;
    let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
    let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
    let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
    let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
        - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
        + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
        + phi2;
    let ddtheta2 =
        (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
            / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    [dtheta1, dtheta2, ddtheta1, ddtheta2]
}

fn rk4(s: [f64; 4], torque: f64, h: f64) -> [f64; 4] {
    let add = |a: [f64; 4], b: [f64; 4], c: f64| {
        [
            a[0] + c * b[0],
            a[1] + c * b[1],
            a[2] + c * b[2],
            a[3] + c * b[3],
        ]
    };
    let k1 = derivs(s, torque);
    let k2 = derivs(add(s, k1, h / 2.0), torque);
    let k3 = derivs(add(s, k2, h / 2.0), torque);
    let k4 = derivs(add(s, k3, h), torque);
    let mut out = s;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn wrap(x: f64) -> f64 {
    let span = 2.0 * PI;
    let mut y = x;
    while y > PI {
        y -= span;
    }
    while y < -PI {
        y += span;
    }
    y
}

impl Env for Acrobot {
    fn obs_dim(&self) -> usize {
        6
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        for s in &mut self.state {
            *s = rng.random_range(-0.1..0.1);
        }
        self.t = 0;
        self.observation()
    }

    fn step(&mut self, action: usize, _rng: &mut Rng) -> Step {
        let ns = rk4(self.state, TORQUES[action], DT);
        self.state = [
            wrap(ns[0]),
            wrap(ns[1]),
            ns[2].clamp(-MAX_VEL_1, MAX_VEL_1),
            ns[3].clamp(-MAX_VEL_2, MAX_VEL_2),
        ];
        self.t += 1;
        let terminated = self.tip_height() > 1.0;
        Step {
            obs: self.observation(),
            reward: if terminated { 0.0 } else { -1.0 },
            terminated,
            truncated: !terminated && self.t >= MAX_STEPS,
        }
    }
}
