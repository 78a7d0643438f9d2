//! Clipping-norm calculators that keep a noisy update inside a trust region.
//!
//! An update `dtheta = eta * (gbar + xi)` with `|gbar| <= S` and
//! `xi ~ N(0, z^2 S^2 I)` lands in the region `{size <= alpha}` with
//! probability at least `1 - beta` when `S` is chosen by one of the rules
//! below. The L2 rules bound `size = |dtheta|^2 / 2`, the KL rule bounds the
//! quadratic KL approximation `dtheta^T F dtheta / 2`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::accountant::l2_norm;
use crate::distributions::{ncx2_quantile, sample_tr_size_kl, sample_tr_size_l2, NoncentralChiSq};
use crate::error::{check_dim, domain, Error, Result};
use crate::linalg::{dot, symmetric_eigen, SquareMatrix};
use crate::policies::Architecture;
use crate::rng::std_normal;

/// Inputs shared by the trust-region calculators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionParams {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    /// Noise multiplier; `0` gives the noiseless limit of each rule.
    pub z: f64,
    pub d: usize,
}

impl TrustRegionParams {
    pub fn new(alpha: f64, beta: f64, eta: f64, z: f64, d: usize) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            eta,
            z,
            d,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(domain(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(domain(format!(
                "beta must lie in (0, 1), got {}",
                self.beta
            )));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(domain(format!(
                "eta must be finite and > 0, got {}",
                self.eta
            )));
        }
        if !(self.z >= 0.0) || !self.z.is_finite() {
            return Err(domain(format!("z must be finite and >= 0, got {}", self.z)));
        }
        if self.d == 0 {
            return Err(domain("parameter dimension d must be >= 1"));
        }
        Ok(())
    }
}

/// Inputs of the objective-gap rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossGapParams {
    pub lambda_slack: f64,
    pub beta2: f64,
    pub grad_norm: f64,
}

impl LossGapParams {
    pub fn new(lambda_slack: f64, beta2: f64, grad_norm: f64) -> Result<Self> {
        if !(lambda_slack > 0.0) {
            return Err(domain(format!("lambda must be > 0, got {lambda_slack}")));
        }
        if !(beta2 > 0.0 && beta2 < 1.0) {
            return Err(domain(format!("beta2 must lie in (0, 1), got {beta2}")));
        }
        if !(grad_norm > 0.0) || !grad_norm.is_finite() {
            return Err(domain(format!(
                "gradient norm must be finite and > 0, got {grad_norm}"
            )));
        }
        Ok(Self {
            lambda_slack,
            beta2,
            grad_norm,
        })
    }

    /// The slack `K = eta (1 - Sbar) |g|^2 + lambda` in the gap event.
    pub fn slack(&self, eta: f64, clip_norm: f64) -> f64 {
        let sbar = (clip_norm / self.grad_norm).min(1.0);
        eta * (1.0 - sbar) * self.grad_norm * self.grad_norm + self.lambda_slack
    }
}

/// Symmetric PSD matrix with its spectrum.
#[derive(Debug, Clone)]
pub struct FisherMatrix {
    matrix: SquareMatrix,
    eigenvalues: Vec<f64>,
    eigenvectors: SquareMatrix,
}

impl FisherMatrix {
    /// Symmetrizes `m`, decomposes it, and rejects it if any eigenvalue is
    /// below `-1e-10 * max(1, max eigenvalue)`.
    pub fn new(m: SquareMatrix) -> Result<Self> {
        let n = m.dim();
        if n == 0 {
            return Err(domain("Fisher matrix must be at least 1x1"));
        }
        if m.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(domain("Fisher matrix has non-finite entries"));
        }
        let scale = m.as_slice().iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if m.max_abs_asymmetry() > 1e-9 * (1.0 + scale) {
            return Err(domain("Fisher matrix is not symmetric"));
        }
        let mut sym = m.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
                sym[(i, j)] = avg;
                sym[(j, i)] = avg;
            }
        }
        let eig = symmetric_eigen(&sym)?;
        let top = eig.values[0];
        let low = *eig.values.last().unwrap();
        if low < -1e-10 * top.max(1.0) {
            return Err(domain(format!(
                "Fisher matrix is not PSD (eigenvalue {low})"
            )));
        }
        Ok(Self {
            matrix: sym,
            eigenvalues: eig.values,
            eigenvectors: eig.vectors,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self::new(SquareMatrix::identity(d)).expect("identity is PSD")
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.matrix
    }

    /// Nonincreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Row `i` pairs with `eigenvalues()[i]`.
    pub fn eigenvectors(&self) -> &SquareMatrix {
        &self.eigenvectors
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    pub fn top_eigenvector(&self) -> &[f64] {
        self.eigenvectors.row(0)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// `tr(F^2)`, the squared Frobenius norm.
    pub fn trace_of_square(&self) -> f64 {
        self.matrix.as_slice().iter().map(|x| x * x).sum()
    }

    /// `F^{p} v` through the spectrum; eigenvalues must be positive when `p < 0`.
    fn spectral_apply(&self, v: &[f64], p: f64) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for (i, &s) in self.eigenvalues.iter().enumerate() {
            let row = self.eigenvectors.row(i);
            let c = dot(row, v) * s.max(0.0).powf(p);
            for (o, r) in out.iter_mut().zip(row) {
                *o += c * r;
            }
        }
        out
    }

    /// Plain-text form: `d=<int>` then the row-major entries.
    pub fn to_text(&self) -> String {
        let n = self.dim();
        let mut s = format!("d={n}\n");
        for i in 0..n {
            let row: Vec<String> = self
                .matrix
                .row(i)
                .iter()
                .map(|x| format!("{x:?}"))
                .collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            msg,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| perr("empty Fisher file".into()))?;
        let n: usize = header
            .trim()
            .strip_prefix("d=")
            .ok_or_else(|| perr(format!("expected header d=<int>, got {header:?}")))?
            .parse()
            .map_err(|e| perr(format!("bad dimension: {e}")))?;
        let data: Vec<f64> = lines
            .flat_map(str::split_whitespace)
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| perr(format!("bad float {t:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if data.len() != n * n {
            return Err(perr(format!(
                "expected {} entries, found {}",
                n * n,
                data.len()
            )));
        }
        Self::new(SquareMatrix::from_row_major(n, data)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?, path)
    }
}

/// Which clipping-norm rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipRule {
    L2Quantile,
    L2Markov,
    Kl,
    LossGap,
}

impl ClipRule {
    pub const ALL: [ClipRule; 4] = [
        ClipRule::L2Quantile,
        ClipRule::L2Markov,
        ClipRule::Kl,
        ClipRule::LossGap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ClipRule::L2Quantile => "l2-quantile",
            ClipRule::L2Markov => "l2-markov",
            ClipRule::Kl => "kl",
            ClipRule::LossGap => "loss-gap",
        }
    }
}

impl fmt::Display for ClipRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClipRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        ClipRule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                format!("unknown rule {s:?}; expected one of l2-quantile, l2-markov, kl, loss-gap")
            })
    }
}

/// `S = (1 / (eta z)) sqrt(2 alpha / q)` with `q` the `(1 - beta)` quantile
/// of `chi^2(d, 1/z^2)`. At `z = 0` this is the noiseless `sqrt(2 alpha) / eta`.
pub fn clip_norm_l2_quantile(p: &TrustRegionParams) -> Result<f64> {
    p.validate()?;
    if p.z == 0.0 {
        return Ok((2.0 * p.alpha).sqrt() / p.eta);
    }
    let dist = NoncentralChiSq::new(p.d, 1.0 / (p.z * p.z))?;
    let q = ncx2_quantile(&dist, 1.0 - p.beta)?;
    Ok((2.0 * p.alpha / q).sqrt() / (p.eta * p.z))
}

/// `S = (1 / eta) sqrt(2 alpha beta / (1 + z^2 d))`.
pub fn clip_norm_l2_markov(p: &TrustRegionParams) -> Result<f64> {
    p.validate()?;
    Ok(markov_form(p, 1.0, p.d as f64))
}

/// `S = (1 / eta) sqrt(2 alpha beta / (max eig F + z^2 tr F))`.
pub fn clip_norm_kl(p: &TrustRegionParams, fisher: &FisherMatrix) -> Result<f64> {
    p.validate()?;
    check_dim(p.d, fisher.dim())?;
    let top = fisher.max_eigenvalue();
    let tr = fisher.trace();
    if !(top > 0.0 || tr > 0.0) {
        return Err(domain("Fisher matrix is identically zero"));
    }
    Ok(markov_form(p, top, tr))
}

fn markov_form(p: &TrustRegionParams, top: f64, tr: f64) -> f64 {
    (2.0 * p.alpha * p.beta / (top + p.z * p.z * tr)).sqrt() / p.eta
}

/// `S = (lambda / (eta z |g|)) sqrt(beta2 / (1 - beta2))`.
pub fn clip_norm_loss_gap(p: &LossGapParams, eta: f64, z: f64) -> Result<f64> {
    let p = LossGapParams::new(p.lambda_slack, p.beta2, p.grad_norm)?;
    if !(eta > 0.0) {
        return Err(domain(format!("eta must be > 0, got {eta}")));
    }
    if !(z > 0.0) {
        return Err(domain(format!(
            "the objective-gap bound needs z > 0, got {z}"
        )));
    }
    Ok(p.lambda_slack / (eta * z * p.grad_norm) * (p.beta2 / (1.0 - p.beta2)).sqrt())
}

/// Empirical `E[score score^T] + regularizer * I` over `(obs, action)` samples.
pub fn fisher_estimate<'a, I>(
    arch: &Architecture,
    theta: &[f64],
    samples: I,
    regularizer: f64,
) -> Result<FisherMatrix>
where
    I: IntoIterator<Item = (&'a [f64], usize)>,
{
    check_dim(arch.param_dim(), theta.len())?;
    if !(regularizer >= 0.0) {
        return Err(domain(format!(
            "regularizer must be >= 0, got {regularizer}"
        )));
    }
    let d = arch.param_dim();
    let mut m = SquareMatrix::zeros(d);
    let mut count = 0usize;
    for (obs, action) in samples {
        check_dim(arch.obs_dim(), obs.len())?;
        if action >= arch.n_actions() {
            return Err(domain(format!("action {action} out of range")));
        }
        m.add_outer(&arch.score(theta, obs, action), 1.0);
        count += 1;
    }
    if count == 0 {
        return Err(domain("Fisher estimate needs at least one sample"));
    }
    m.scale(1.0 / count as f64);
    for i in 0..d {
        m[(i, i)] += regularizer;
    }
    FisherMatrix::new(m)
}

/// `dtheta^T F dtheta / 2`.
pub fn kl_quadratic(fisher: &FisherMatrix, dtheta: &[f64]) -> Result<f64> {
    check_dim(fisher.dim(), dtheta.len())?;
    Ok(0.5 * fisher.matrix().quad_form(dtheta).max(0.0))
}

/// `|F^{1/2} v|`.
pub fn fisher_norm(fisher: &FisherMatrix, v: &[f64]) -> Result<f64> {
    check_dim(fisher.dim(), v.len())?;
    Ok(fisher.matrix().quad_form(v).max(0.0).sqrt())
}

/// Scale `v` so that `|F^{1/2} v| <= S`. Returns the factor applied.
pub fn clip_mahalanobis(v: &mut [f64], fisher: &FisherMatrix, clip_norm: f64) -> Result<f64> {
    let norm = fisher_norm(fisher, v)?;
    if norm <= clip_norm {
        return Ok(1.0);
    }
    let factor = clip_norm / norm;
    for x in v.iter_mut() {
        *x *= factor;
    }
    while fisher_norm(fisher, v)? > clip_norm {
        for x in v.iter_mut() {
            *x *= 1.0 - f64::EPSILON;
        }
    }
    Ok(factor)
}

/// Clip in the Fisher norm, then add `(C S / epsilon) zeta` with
/// `zeta ~ N(0, F^{-1})` and `C = sqrt(2 ln(2 / delta))`.
pub fn gauss_fisher_mechanism<R: rand::Rng + ?Sized>(
    ghat: &[f64],
    fisher: &FisherMatrix,
    clip_norm: f64,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_dim(fisher.dim(), ghat.len())?;
    if !(clip_norm > 0.0) {
        return Err(domain(format!("clip norm must be > 0, got {clip_norm}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(fisher.min_eigenvalue() > 1e-12 * fisher.max_eigenvalue().max(1e-300)) {
        return Err(domain("Fisher matrix is singular; add a regularizer"));
    }
    let mut out = ghat.to_vec();
    clip_mahalanobis(&mut out, fisher, clip_norm)?;
    let scale = (2.0 * (2.0 / delta).ln()).sqrt() * clip_norm / epsilon;
    let white: Vec<f64> = (0..ghat.len()).map(|_| std_normal(rng)).collect();
    let zeta = fisher.spectral_apply(&white, -0.5);
    for (o, n) in out.iter_mut().zip(&zeta) {
        *o += scale * n;
    }
    Ok(out)
}

/// Outcome of a Monte Carlo containment experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContainmentReport {
    pub clip_norm: f64,
    pub trials: usize,
    pub hits: usize,
    /// Required probability, `1 - beta`.
    pub target: f64,
}

impl ContainmentReport {
    pub fn frequency(&self) -> f64 {
        self.hits as f64 / self.trials as f64
    }

    /// Binomial standard error at the target probability.
    pub fn standard_error(&self) -> f64 {
        (self.target * (1.0 - self.target) / self.trials as f64).sqrt()
    }

    /// Whether the frequency clears `target - 3 SE`.
    pub fn passes(&self) -> bool {
        self.frequency() >= self.target - 3.0 * self.standard_error()
    }
}

fn inside(size: f64, bound: f64) -> bool {
    size <= bound * (1.0 + 1e-12)
}

fn worst_case_gbar(direction: &[f64], clip_norm: f64) -> Vec<f64> {
    let n = l2_norm(direction);
    direction.iter().map(|x| clip_norm * x / n).collect()
}

/// Containment of `|dtheta|^2 / 2 <= alpha` for `gbar = S e_1`.
pub fn containment_l2<R: rand::Rng + ?Sized>(
    p: &TrustRegionParams,
    clip_norm: f64,
    trials: usize,
    rng: &mut R,
) -> Result<ContainmentReport> {
    p.validate()?;
    let mut e1 = vec![0.0; p.d];
    e1[0] = 1.0;
    let gbar = worst_case_gbar(&e1, clip_norm);
    let mut hits = 0;
    for _ in 0..trials {
        if inside(
            sample_tr_size_l2(p.eta, p.z, clip_norm, &gbar, rng)?,
            p.alpha,
        ) {
            hits += 1;
        }
    }
    Ok(ContainmentReport {
        clip_norm,
        trials,
        hits,
        target: 1.0 - p.beta,
    })
}

/// Containment of `dtheta^T F dtheta / 2 <= alpha` for `gbar` of norm `S`
/// along the top eigenvector of `F`.
pub fn containment_kl<R: rand::Rng + ?Sized>(
    p: &TrustRegionParams,
    fisher: &FisherMatrix,
    clip_norm: f64,
    trials: usize,
    rng: &mut R,
) -> Result<ContainmentReport> {
    p.validate()?;
    check_dim(p.d, fisher.dim())?;
    let gbar = worst_case_gbar(fisher.top_eigenvector(), clip_norm);
    let mut hits = 0;
    for _ in 0..trials {
        if inside(
            sample_tr_size_kl(p.eta, p.z, clip_norm, &gbar, fisher, rng)?,
            p.alpha,
        ) {
            hits += 1;
        }
    }
    Ok(ContainmentReport {
        clip_norm,
        trials,
        hits,
        target: 1.0 - p.beta,
    })
}

/// Frequency of `L(theta~) >= L(theta*) - K` for the linear surrogate
/// `L(theta) = g^T (theta - theta_old)`, with `g = |g| e_1`,
/// `theta* = theta_old + eta g` and `theta~ = theta_old + eta (Sbar g + xi)`.
pub fn containment_loss_gap<R: rand::Rng + ?Sized>(
    p: &LossGapParams,
    eta: f64,
    z: f64,
    d: usize,
    clip_norm: f64,
    trials: usize,
    rng: &mut R,
) -> Result<ContainmentReport> {
    let p = LossGapParams::new(p.lambda_slack, p.beta2, p.grad_norm)?;
    if d == 0 {
        return Err(domain("d must be >= 1"));
    }
    let g = p.grad_norm;
    let sbar = (clip_norm / g).min(1.0);
    let best = eta * g * g;
    let slack = p.slack(eta, clip_norm);
    let sd = z * clip_norm;
    let mut hits = 0;
    for _ in 0..trials {
        // only the first coordinate of xi meets g
        let xi0 = sd * std_normal(rng);
        for _ in 1..d {
            std_normal(rng);
        }
        let got = eta * (sbar * g * g + g * xi0);
        if got >= best - slack - 1e-12 * (best.abs() + slack) {
            hits += 1;
        }
    }
    Ok(ContainmentReport {
        clip_norm,
        trials,
        hits,
        target: 1.0 - p.beta2,
    })
}
