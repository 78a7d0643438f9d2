//! Gaussian-mechanism accounting.
//!
//! Two calibrations are used. For `epsilon < 1` the classical mechanism
//! (`M1`) adds noise with scale `C1(delta) * S / epsilon`. For `epsilon >= 1`
//! the classical bound is invalid and the improved mechanism (`M2`) with
//! `sigma = (C2 + sqrt(C2^2 + epsilon)) * S / (epsilon * sqrt 2)` takes over.
//! Inverting these for a noise multiplier `z = sigma / S` gives the
//! `epsilon(z)` curve, which has a visible break at `epsilon = 1`.

use std::f64::consts::SQRT_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::rng::std_normal;

/// Which Gaussian mechanism certifies a budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mechanism {
    /// Classical calibration, valid only for `epsilon < 1`.
    M1,
    /// Improved calibration for `epsilon >= 1`.
    M2,
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mechanism::M1 => f.write_str("M1"),
            Mechanism::M2 => f.write_str("M2"),
        }
    }
}

/// Everything the accountant needs about one privatized update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    /// Noise multiplier: noise std divided by sensitivity.
    pub z: f64,
    pub delta: f64,
    /// Per-user clipping norm `S`.
    pub clip_norm: f64,
    /// Users aggregated per update `K`.
    pub users_per_update: usize,
}

impl PrivacyParams {
    pub fn new(z: f64, delta: f64, clip_norm: f64, users_per_update: usize) -> Result<Self> {
        let p = Self {
            z,
            delta,
            clip_norm,
            users_per_update,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.z > 0.0) || !self.z.is_finite() {
            return Err(domain(format!(
                "noise multiplier z must be > 0, got {}",
                self.z
            )));
        }
        check_delta(self.delta)?;
        if !(self.clip_norm > 0.0) {
            return Err(domain(format!(
                "clip norm must be > 0, got {}",
                self.clip_norm
            )));
        }
        if self.users_per_update == 0 {
            return Err(domain("users per update K must be >= 1"));
        }
        Ok(())
    }

    /// Sensitivity of the fixed-divisor mean, `S / K`.
    pub fn sensitivity(&self) -> f64 {
        self.clip_norm / self.users_per_update as f64
    }

    /// Per-coordinate noise std on the aggregate, `z * S / K`.
    pub fn noise_std(&self) -> f64 {
        self.z * self.sensitivity()
    }

    pub fn budget(&self) -> Result<PrivacyBudget> {
        epsilon_of_z(self.z, self.delta)
    }
}

/// A certified `(epsilon, delta)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub mechanism_used: Mechanism,
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(domain(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// `C1(delta) = sqrt(2 ln(1.25 / delta))`.
pub fn c1(delta: f64) -> Result<f64> {
    check_delta(delta)?;
    Ok((2.0 * (1.25 / delta).ln()).sqrt())
}

/// `C2(delta) = sqrt(ln(2 / (sqrt(16 delta + 1) - 1)))`.
pub fn c2(delta: f64) -> Result<f64> {
    check_delta(delta)?;
    // sqrt(16d+1) - 1 == 16d / (sqrt(16d+1) + 1), without cancellation for tiny d.
    let denom = 16.0 * delta / ((16.0 * delta + 1.0).sqrt() + 1.0);
    let arg = 2.0 / denom;
    if arg <= 1.0 {
        return Err(domain(format!(
            "C2 undefined for delta = {delta} (log argument {arg} <= 1)"
        )));
    }
    Ok(arg.ln().sqrt())
}

/// Privacy budget spent by one Gaussian update with noise multiplier `z`.
///
/// `M1` is used strictly when `C1(delta) / z < 1`. Otherwise `M2` is used,
/// and near the regime boundary it can report `epsilon` slightly below 1.
pub fn epsilon_of_z(z: f64, delta: f64) -> Result<PrivacyBudget> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(domain(format!(
            "noise multiplier z must be finite and > 0, got {z}"
        )));
    }
    let c1 = c1(delta)?;
    let eps_m1 = c1 / z;
    if eps_m1 < 1.0 {
        return Ok(PrivacyBudget {
            epsilon: eps_m1,
            delta,
            mechanism_used: Mechanism::M1,
        });
    }
    let c2 = c2(delta)?;
    Ok(PrivacyBudget {
        epsilon: (1.0 + 2.0 * SQRT_2 * c2 * z) / (2.0 * z * z),
        delta,
        mechanism_used: Mechanism::M2,
    })
}

/// Noise multiplier that certifies `(epsilon, delta)`.
pub fn z_of_epsilon(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(domain(format!(
            "epsilon must be finite and > 0, got {epsilon}"
        )));
    }
    if epsilon < 1.0 {
        Ok(c1(delta)? / epsilon)
    } else {
        let c2 = c2(delta)?;
        Ok((c2 + (c2 * c2 + epsilon).sqrt()) / (epsilon * SQRT_2))
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scale `v` down to L2 norm at most `clip_norm`.
///
/// Returns the clipped vector and the effective factor `1 / max(|v| / S, 1)`.
pub fn clip_l2(v: &[f64], clip_norm: f64) -> (Vec<f64>, f64) {
    let mut out = v.to_vec();
    let factor = clip_l2_in_place(&mut out, clip_norm);
    (out, factor)
}

pub fn clip_l2_in_place(v: &mut [f64], clip_norm: f64) -> f64 {
    let norm = l2_norm(v);
    if norm <= clip_norm {
        return 1.0;
    }
    let factor = clip_norm / norm;
    for x in v.iter_mut() {
        *x *= factor;
    }
    // Rounding can leave the product a hair above S; shave it so the bound is exact.
    let mut n = l2_norm(v);
    while n > clip_norm {
        let shrink = 1.0 - f64::EPSILON;
        for x in v.iter_mut() {
            *x *= shrink;
        }
        n = l2_norm(v);
    }
    factor
}

/// `v + xi` with `xi ~ N(0, sigma^2 I)`.
pub fn gaussian_perturb<R: rand::Rng + ?Sized>(
    v: &[f64],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) {
        return Err(domain(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(v.to_vec());
    }
    Ok(v.iter().map(|x| x + sigma * std_normal(rng)).collect())
}
