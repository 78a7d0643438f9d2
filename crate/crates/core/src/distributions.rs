//! Trust-region size distributions.
//!
//! The L2 trust-region size of a noisy clipped update is a scaled
//! non-central chi-squared variable; under a Fisher metric it becomes a
//! weighted sum of one-degree non-central chi-squared variables.

use crate::accountant::l2_norm;
use crate::error::{check_dim, domain, Result};
use crate::linalg::dot;
use crate::rng::{std_normal, Streams};
use crate::special::{chi2_cdf, ln_gamma};
use crate::trust_region::FisherMatrix;

/// Relative slack allowed on `|gbar| <= S` before a sampler rejects its input.
const CLIP_SLACK: f64 = 1e-9;

/// `chi2(d, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoncentralChiSq {
    dof: usize,
    noncentrality: f64,
}

impl NoncentralChiSq {
    pub fn new(dof: usize, noncentrality: f64) -> Result<Self> {
        if dof == 0 {
            return Err(domain("degrees of freedom must be >= 1"));
        }
        if !(noncentrality >= 0.0) || !noncentrality.is_finite() {
            return Err(domain(format!(
                "noncentrality must be finite and >= 0, got {noncentrality}"
            )));
        }
        Ok(Self { dof, noncentrality })
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn noncentrality(&self) -> f64 {
        self.noncentrality
    }

    pub fn mean(&self) -> f64 {
        self.dof as f64 + self.noncentrality
    }

    pub fn variance(&self) -> f64 {
        2.0 * (self.dof as f64 + 2.0 * self.noncentrality)
    }
}

/// Poisson weights below this are dropped once past the mode.
const POISSON_TAIL: f64 = 1e-17;

/// `P[chi2(d, lambda) <= x]` as a Poisson(lambda / 2) mixture of central CDFs.
pub fn ncx2_cdf(dist: &NoncentralChiSq, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let d = dist.dof as f64;
    let half = 0.5 * dist.noncentrality;
    if half == 0.0 {
        return chi2_cdf(d, x);
    }
    let mode = half.floor();
    let log_w = |j: f64| -half + j * half.ln() - ln_gamma(j + 1.0);
    let mut total = 0.0;
    // upward from the mode
    let mut j = mode;
    loop {
        let w = log_w(j).exp();
        total += w * chi2_cdf(d + 2.0 * j, x);
        if j > mode && w < POISSON_TAIL {
            break;
        }
        j += 1.0;
    }
    // downward
    let mut j = mode - 1.0;
    while j >= 0.0 {
        let w = log_w(j).exp();
        total += w * chi2_cdf(d + 2.0 * j, x);
        if w < POISSON_TAIL {
            break;
        }
        j -= 1.0;
    }
    total.clamp(0.0, 1.0)
}

/// Quantile of `chi2(d, lambda)` by bracketed bisection on [`ncx2_cdf`].
pub fn ncx2_quantile(dist: &NoncentralChiSq, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!(
            "quantile order must lie in (0, 1), got {p}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = dist.mean() + 10.0 * dist.variance().sqrt();
    while ncx2_cdf(dist, hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ncx2_cdf(dist, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `sum_i w_i * chi2(1, nu_i^2)` with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedChiSq {
    weights: Vec<f64>,
    noncentralities: Vec<f64>,
}

impl GeneralizedChiSq {
    pub fn new(weights: Vec<f64>, noncentralities: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(domain("generalized chi-squared needs at least one term"));
        }
        if weights.len() != noncentralities.len() {
            return Err(domain(format!(
                "{} weights but {} noncentralities",
                weights.len(),
                noncentralities.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(domain(format!("weights must be finite and > 0, got {w}")));
        }
        if let Some(n) = noncentralities
            .iter()
            .find(|n| !(**n >= 0.0) || !n.is_finite())
        {
            return Err(domain(format!(
                "noncentralities must be finite and >= 0, got {n}"
            )));
        }
        Ok(Self {
            weights,
            noncentralities,
        })
    }

    /// Spectral form of `(gbar + xi)^T F (gbar + xi) / (z S)^2` for
    /// `xi ~ N(0, (zS)^2 I)`: weights are the eigenvalues of `F` and
    /// `nu_i = <p_i, gbar> / (zS)` for eigenvector `p_i`.
    ///
    /// Eigen-directions with eigenvalue at or below `1e-12 * max` carry no
    /// mass and are dropped.
    pub fn from_fisher(fisher: &FisherMatrix, gbar: &[f64], noise_scale: f64) -> Result<Self> {
        if !(noise_scale > 0.0) {
            return Err(domain("noise scale z*S must be > 0"));
        }
        check_dim(fisher.dim(), gbar.len())?;
        let top = fisher.max_eigenvalue();
        let mut weights = Vec::new();
        let mut nc = Vec::new();
        for (i, &s) in fisher.eigenvalues().iter().enumerate() {
            if s > 1e-12 * top {
                let proj = dot(fisher.eigenvectors().row(i), gbar) / noise_scale;
                weights.push(s);
                nc.push(proj * proj);
            }
        }
        Self::new(weights, nc)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn noncentralities(&self) -> &[f64] {
        &self.noncentralities
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.noncentralities)
            .map(|(w, n)| w * (1.0 + n))
            .sum()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.weights
            .iter()
            .zip(&self.noncentralities)
            .map(|(w, n)| {
                let v = std_normal(rng) + n.sqrt();
                w * v * v
            })
            .sum()
    }
}

/// Terms allowed in the Ruben expansion before falling back to sampling.
const RUBEN_MAX_TERMS: usize = 10_000;
/// Sample count of the Monte Carlo fallback in [`gx2_cdf`].
pub const GX2_MC_SAMPLES: usize = 1_000_000;
const GX2_MC_SEED: u64 = 0x6778_3263_6466;

/// `P[sum_i w_i chi2(1, nu_i^2) <= x]`.
///
/// Evaluated with Ruben's mixture of central chi-squared CDFs,
/// `sum_k a_k P[chi2(n + 2k) <= x / b]` with `b = min w_i`. If the series
/// has not converged after a fixed number of terms (badly conditioned
/// weights), a seeded Monte Carlo estimate with [`GX2_MC_SAMPLES`] draws is
/// returned instead.
pub fn gx2_cdf(dist: &GeneralizedChiSq, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    match gx2_cdf_series(dist, x) {
        Some(p) => p,
        None => {
            let mut rng = Streams::new(GX2_MC_SEED).stream("gx2", 0);
            gx2_cdf_mc(dist, x, GX2_MC_SAMPLES, &mut rng)
        }
    }
}

/// Ruben's series; `None` if it fails to converge within the term budget.
pub fn gx2_cdf_series(dist: &GeneralizedChiSq, x: f64) -> Option<f64> {
    if x <= 0.0 {
        return Some(0.0);
    }
    let n = dist.weights.len() as f64;
    let beta = dist.weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let gammas: Vec<f64> = dist.weights.iter().map(|w| 1.0 - beta / w).collect();
    let log_a0 = -0.5 * dist.noncentralities.iter().sum::<f64>()
        + dist
            .weights
            .iter()
            .map(|w| 0.5 * (beta / w).ln())
            .sum::<f64>();
    if log_a0 < -700.0 {
        return None;
    }
    let y = x / beta;
    let mut a = vec![log_a0.exp()];
    let mut g: Vec<f64> = vec![0.0];
    // gamma_j^(m-1)
    let mut pow_prev = vec![1.0; gammas.len()];
    let mut mass = a[0];
    let mut cdf = a[0] * chi2_cdf(n, y);
    for k in 1..RUBEN_MAX_TERMS {
        let m = k as f64;
        let mut gk = 0.0;
        for (j, &gam) in gammas.iter().enumerate() {
            let pm1 = pow_prev[j];
            gk += gam * pm1 + m * dist.noncentralities[j] * (1.0 - gam) * pm1;
            pow_prev[j] = pm1 * gam;
        }
        g.push(gk);
        let ak = (0..k).map(|r| g[k - r] * a[r]).sum::<f64>() / (2.0 * m);
        a.push(ak);
        mass += ak;
        let fk = chi2_cdf(n + 2.0 * m, y);
        cdf += ak * fk;
        let remaining = (1.0 - mass).max(0.0);
        // the central CDFs decrease in k, so the tail contributes at most remaining * fk
        if remaining * fk < 1e-12 || remaining < 1e-14 {
            return Some(cdf.clamp(0.0, 1.0));
        }
    }
    None
}

/// Empirical CDF from `samples` draws.
pub fn gx2_cdf_mc<R: rand::Rng + ?Sized>(
    dist: &GeneralizedChiSq,
    x: f64,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let hits = (0..samples).filter(|_| dist.sample(rng) <= x).count();
    hits as f64 / samples as f64
}

fn check_clipped(gbar: &[f64], clip_norm: f64) -> Result<()> {
    let n = l2_norm(gbar);
    if n > clip_norm * (1.0 + CLIP_SLACK) {
        return Err(domain(format!(
            "|gbar| = {n} exceeds clip norm {clip_norm}"
        )));
    }
    Ok(())
}

/// One draw of `(eta^2 / 2) |gbar + xi|^2` with `xi ~ N(0, z^2 S^2 I)`.
pub fn sample_tr_size_l2<R: rand::Rng + ?Sized>(
    eta: f64,
    z: f64,
    clip_norm: f64,
    gbar: &[f64],
    rng: &mut R,
) -> Result<f64> {
    check_clipped(gbar, clip_norm)?;
    let sd = z * clip_norm;
    let mut acc = 0.0;
    if sd == 0.0 {
        for g in gbar {
            acc += g * g;
        }
    } else {
        for g in gbar {
            let x = g + sd * std_normal(rng);
            acc += x * x;
        }
    }
    Ok(0.5 * eta * eta * acc)
}

/// One draw of `(eta^2 / 2) (gbar + xi)^T F (gbar + xi)`.
pub fn sample_tr_size_kl<R: rand::Rng + ?Sized>(
    eta: f64,
    z: f64,
    clip_norm: f64,
    gbar: &[f64],
    fisher: &FisherMatrix,
    rng: &mut R,
) -> Result<f64> {
    check_dim(fisher.dim(), gbar.len())?;
    check_clipped(gbar, clip_norm)?;
    let sd = z * clip_norm;
    let x: Vec<f64> = if sd == 0.0 {
        gbar.to_vec()
    } else {
        gbar.iter().map(|g| g + sd * std_normal(rng)).collect()
    };
    Ok(0.5 * eta * eta * fisher.matrix().quad_form(&x))
}

/// `(eta^2/2)(gbar^T F gbar + z^2 S^2 tr F)`, the mean of [`sample_tr_size_kl`].
pub fn kl_size_mean(eta: f64, z: f64, clip_norm: f64, gbar: &[f64], fisher: &FisherMatrix) -> f64 {
    let zs = z * clip_norm;
    0.5 * eta * eta * (fisher.matrix().quad_form(gbar) + zs * zs * fisher.trace())
}

/// Variance of [`sample_tr_size_kl`].
///
/// With `xi = zS * zeta`, the size is `(eta^2/2)(c + 2 zS X + (zS)^2 Y)` where
/// `X = zeta^T F gbar` has variance `|F gbar|^2`, `Y = zeta^T F zeta` has
/// variance `2 tr(F^2)`, and `Cov[X, Y] = 0`.
pub fn kl_size_variance(
    eta: f64,
    z: f64,
    clip_norm: f64,
    gbar: &[f64],
    fisher: &FisherMatrix,
) -> f64 {
    let zs = z * clip_norm;
    let fg = fisher.matrix().mul_vec(gbar);
    let var_x: f64 = fg.iter().map(|v| v * v).sum();
    let var_y = 2.0 * fisher.trace_of_square();
    let e4 = eta.powi(4) / 4.0;
    e4 * (4.0 * zs * zs * var_x + zs.powi(4) * var_y)
}
