//! Differentiable categorical policies, critics, and advantage estimation.

mod critic;
mod gae;
pub mod mlp;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::Rng;

pub use critic::{Critic, CriticKind};
pub use gae::{gae, AdvantageEstimate};
use mlp::{Mlp, Tape};

/// Feature construction of the log-linear policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMap {
    /// `phi(s, a) = obs (x) onehot(a)`: one weight per (feature, action).
    Product,
    /// `phi(s, a) = [obs, a]`: the action enters as one scalar feature.
    Concat,
}

/// Policy architecture; determines the layout of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Architecture {
    LogLinear {
        obs_dim: usize,
        n_actions: usize,
        features: FeatureMap,
    },
    Mlp {
        obs_dim: usize,
        hidden: [usize; 2],
        n_actions: usize,
    },
}

impl Architecture {
    pub fn obs_dim(&self) -> usize {
        match *self {
            Architecture::LogLinear { obs_dim, .. } | Architecture::Mlp { obs_dim, .. } => obs_dim,
        }
    }

    pub fn n_actions(&self) -> usize {
        match *self {
            Architecture::LogLinear { n_actions, .. } | Architecture::Mlp { n_actions, .. } => {
                n_actions
            }
        }
    }

    pub fn param_dim(&self) -> usize {
        match *self {
            Architecture::LogLinear {
                obs_dim,
                n_actions,
                features,
            } => match features {
                FeatureMap::Product => obs_dim * n_actions,
                FeatureMap::Concat => obs_dim + 1,
            },
            Architecture::Mlp { .. } => self.mlp().param_count(),
        }
    }

    fn mlp(&self) -> Mlp {
        match *self {
            Architecture::Mlp {
                obs_dim,
                hidden,
                n_actions,
            } => Mlp::new(vec![obs_dim, hidden[0], hidden[1], n_actions]),
            _ => unreachable!("not an MLP architecture"),
        }
    }

    /// Initial parameters: zeros for log-linear, orthogonal init for MLPs
    /// (gain sqrt 2 on hidden layers, 0.01 on the logits).
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        match self {
            Architecture::LogLinear { .. } => vec![0.0; self.param_dim()],
            Architecture::Mlp { .. } => self.mlp().init(std::f64::consts::SQRT_2, 0.01, rng),
        }
    }

    fn check(&self, theta: &[f64], obs: &[f64]) {
        debug_assert_eq!(theta.len(), self.param_dim());
        debug_assert_eq!(obs.len(), self.obs_dim());
    }

    pub fn logits(&self, theta: &[f64], obs: &[f64]) -> Vec<f64> {
        self.check(theta, obs);
        match *self {
            Architecture::LogLinear {
                obs_dim,
                n_actions,
                features,
            } => (0..n_actions)
                .map(|a| match features {
                    FeatureMap::Product => (0..obs_dim)
                        .map(|i| obs[i] * theta[i * n_actions + a])
                        .sum(),
                    FeatureMap::Concat => {
                        (0..obs_dim).map(|i| obs[i] * theta[i]).sum::<f64>()
                            + a as f64 * theta[obs_dim]
                    }
                })
                .collect(),
            Architecture::Mlp { .. } => {
                let mut tape = Tape::default();
                self.mlp().forward(theta, obs, &mut tape);
                tape.output().to_vec()
            }
        }
    }

    /// Runs the network forward, lets `head` turn logits into `dlogits`,
    /// then accumulates `J^T dlogits` into `grad`.
    pub fn backprop(
        &self,
        theta: &[f64],
        obs: &[f64],
        grad: &mut [f64],
        head: &mut dyn FnMut(&[f64], &mut [f64]),
    ) {
        self.check(theta, obs);
        let n_actions = self.n_actions();
        let mut dlogits = vec![0.0; n_actions];
        match *self {
            Architecture::LogLinear {
                obs_dim, features, ..
            } => {
                let logits = self.logits(theta, obs);
                head(&logits, &mut dlogits);
                match features {
                    FeatureMap::Product => {
                        for i in 0..obs_dim {
                            if obs[i] == 0.0 {
                                continue;
                            }
                            for a in 0..n_actions {
                                grad[i * n_actions + a] += obs[i] * dlogits[a];
                            }
                        }
                    }
                    FeatureMap::Concat => {
                        let total: f64 = dlogits.iter().sum();
                        for i in 0..obs_dim {
                            grad[i] += obs[i] * total;
                        }
                        grad[obs_dim] += dlogits
                            .iter()
                            .enumerate()
                            .map(|(a, d)| a as f64 * d)
                            .sum::<f64>();
                    }
                }
            }
            Architecture::Mlp { .. } => {
                let net = self.mlp();
                let mut tape = Tape::default();
                net.forward(theta, obs, &mut tape);
                head(tape.output(), &mut dlogits);
                net.backward(theta, &tape, &dlogits, grad);
            }
        }
    }

    pub fn log_probs(&self, theta: &[f64], obs: &[f64]) -> Vec<f64> {
        log_softmax(&self.logits(theta, obs))
    }

    pub fn log_prob(&self, theta: &[f64], obs: &[f64], action: usize) -> f64 {
        self.log_probs(theta, obs)[action]
    }

    /// `grad_theta log pi(action | obs)`.
    pub fn score(&self, theta: &[f64], obs: &[f64], action: usize) -> Vec<f64> {
        let mut grad = vec![0.0; self.param_dim()];
        self.backprop(theta, obs, &mut grad, &mut |logits, d| {
            let lp = log_softmax(logits);
            for (k, dk) in d.iter_mut().enumerate() {
                *dk = if k == action { 1.0 } else { 0.0 } - lp[k].exp();
            }
        });
        grad
    }

    pub fn entropy(&self, theta: &[f64], obs: &[f64]) -> f64 {
        entropy_of(&self.log_probs(theta, obs))
    }

    pub fn entropy_grad(&self, theta: &[f64], obs: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.param_dim()];
        self.backprop(theta, obs, &mut grad, &mut |logits, d| {
            entropy_dlogits(&log_softmax(logits), 1.0, d);
        });
        grad
    }

    pub fn tag(&self) -> String {
        match *self {
            Architecture::LogLinear {
                obs_dim,
                n_actions,
                features,
            } => {
                let f = match features {
                    FeatureMap::Product => "product",
                    FeatureMap::Concat => "concat",
                };
                format!("loglinear-{f}-{obs_dim}-{n_actions}")
            }
            Architecture::Mlp {
                obs_dim,
                hidden,
                n_actions,
            } => format!("mlp-{obs_dim}-{}-{}-{n_actions}", hidden[0], hidden[1]),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split('-').collect();
        let num = |p: &str| {
            p.parse::<usize>()
                .map_err(|_| format!("bad number {p:?} in architecture tag {s:?}"))
        };
        match parts.as_slice() {
            ["loglinear", f, o, a] => {
                let features = match *f {
                    "product" => FeatureMap::Product,
                    "concat" => FeatureMap::Concat,
                    other => return Err(format!("unknown feature map {other:?}")),
                };
                Ok(Architecture::LogLinear {
                    obs_dim: num(o)?,
                    n_actions: num(a)?,
                    features,
                })
            }
            ["mlp", o, h1, h2, a] => Ok(Architecture::Mlp {
                obs_dim: num(o)?,
                hidden: [num(h1)?, num(h2)?],
                n_actions: num(a)?,
            }),
            _ => Err(format!("unrecognized architecture tag {s:?}")),
        }
    }
}

/// Flat parameters plus the architecture that interprets them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub arch: Architecture,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        check_dim(arch.param_dim(), theta.len())?;
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("policy parameters must be finite".into()));
        }
        Ok(Self { arch, theta })
    }

    /// `arch=<tag> d=<int>` then one float per line.
    pub fn to_checkpoint(&self) -> String {
        let mut s = format!("arch={} d={}\n", self.arch.tag(), self.theta.len());
        for x in &self.theta {
            s.push_str(&format!("{x:?}\n"));
        }
        s
    }

    pub fn from_checkpoint(text: &str, path: &Path) -> Result<Self> {
        let perr = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            msg,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| perr("empty checkpoint".into()))?;
        let mut arch = None;
        let mut dim = None;
        for field in header.split_whitespace() {
            if let Some(v) = field.strip_prefix("arch=") {
                arch = Some(v.parse::<Architecture>().map_err(perr)?);
            } else if let Some(v) = field.strip_prefix("d=") {
                dim = Some(
                    v.parse::<usize>()
                        .map_err(|e| perr(format!("bad d: {e}")))?,
                );
            } else {
                return Err(perr(format!("unexpected header field {field:?}")));
            }
        }
        let arch = arch.ok_or_else(|| perr("header lacks arch=".into()))?;
        let dim = dim.ok_or_else(|| perr("header lacks d=".into()))?;
        let theta: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| perr(format!("bad float {l:?}: {e}")))
            })
            .collect::<Result<_>>()?;
        if theta.len() != dim || dim != arch.param_dim() {
            return Err(perr(format!(
                "expected {} parameters for {arch}, header says {dim}, found {}",
                arch.param_dim(),
                theta.len()
            )));
        }
        Ok(Self { arch, theta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?, path)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn entropy_of(log_probs: &[f64]) -> f64 {
    -log_probs
        .iter()
        .map(|lp| if lp.is_finite() { lp.exp() * lp } else { 0.0 })
        .sum::<f64>()
}

/// Adds `scale * dH/dlogits` to `d`, where `dH/dz_j = -pi_j (log pi_j + H)`.
pub fn entropy_dlogits(log_probs: &[f64], scale: f64, d: &mut [f64]) {
    let h = entropy_of(log_probs);
    for (dj, lp) in d.iter_mut().zip(log_probs) {
        if lp.is_finite() {
            *dj += -scale * lp.exp() * (lp + h);
        }
    }
}

/// Sample an action index from log-probabilities.
pub fn sample_action<R: rand::Rng + ?Sized>(log_probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return a;
        }
    }
    log_probs.len() - 1
}

/// `mean_t score(s_t, a_t) * A_t` over aligned observations, actions, advantages.
pub fn pg_estimate(
    arch: &Architecture,
    theta: &[f64],
    obs: &[&[f64]],
    actions: &[usize],
    advantages: &[f64],
) -> Result<Vec<f64>> {
    check_dim(obs.len(), actions.len())?;
    check_dim(obs.len(), advantages.len())?;
    let mut grad = vec![0.0; arch.param_dim()];
    if obs.is_empty() {
        return Ok(grad);
    }
    let inv = 1.0 / obs.len() as f64;
    for ((o, &a), &adv) in obs.iter().zip(actions).zip(advantages) {
        if adv == 0.0 {
            continue;
        }
        arch.backprop(theta, o, &mut grad, &mut |logits, d| {
            let lp = log_softmax(logits);
            for (k, dk) in d.iter_mut().enumerate() {
                *dk = inv * adv * (if k == a { 1.0 } else { 0.0 } - lp[k].exp());
            }
        });
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{std_normal, Streams};

    fn onehot(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    fn riverswim_arch(features: FeatureMap) -> Architecture {
        Architecture::LogLinear {
            obs_dim: 6,
            n_actions: 2,
            features,
        }
    }

    fn cartpole_arch() -> Architecture {
        Architecture::Mlp {
            obs_dim: 4,
            hidden: [64, 64],
            n_actions: 2,
        }
    }

    #[test]
    fn zero_log_linear_is_uniform() {
        let arch = riverswim_arch(FeatureMap::Product);
        assert_eq!(arch.param_dim(), 12);
        let theta = vec![0.0; 12];
        let lp = arch.log_probs(&theta, &onehot(6, 3));
        for l in lp {
            assert!((l - 0.5f64.ln()).abs() < 1e-15);
        }
        assert!((arch.entropy(&theta, &onehot(6, 0)) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(riverswim_arch(FeatureMap::Concat).param_dim(), 7);
    }

    #[test]
    fn mlp_with_zero_output_layer_is_uniform() {
        let arch = Architecture::Mlp {
            obs_dim: 4,
            hidden: [8, 8],
            n_actions: 3,
        };
        let mut rng = Streams::new(1).stream("init", 0);
        let mut theta = arch.init(&mut rng);
        let last = 8 * 3 + 3;
        let n = theta.len();
        for x in &mut theta[n - last..] {
            *x = 0.0;
        }
        for l in arch.log_probs(&theta, &[0.1, -0.3, 2.0, 0.0]) {
            assert!((l - (1.0f64 / 3.0).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn normalization_and_score_identity() {
        let mut rng = Streams::new(2).stream("t", 0);
        for arch in [
            riverswim_arch(FeatureMap::Product),
            riverswim_arch(FeatureMap::Concat),
            cartpole_arch(),
        ] {
            for _ in 0..20 {
                let theta: Vec<f64> = (0..arch.param_dim())
                    .map(|_| std_normal(&mut rng))
                    .collect();
                let obs: Vec<f64> = if arch.obs_dim() == 6 {
                    onehot(6, (std_normal(&mut rng).abs() * 2.0) as usize % 6)
                } else {
                    (0..arch.obs_dim()).map(|_| std_normal(&mut rng)).collect()
                };
                let lp = arch.log_probs(&theta, &obs);
                let total: f64 = lp.iter().map(|l| l.exp()).sum();
                assert!((total - 1.0).abs() < 1e-12);
                let mut mean = vec![0.0; arch.param_dim()];
                for (a, l) in lp.iter().enumerate() {
                    let s = arch.score(&theta, &obs, a);
                    for (m, si) in mean.iter_mut().zip(&s) {
                        *m += l.exp() * si;
                    }
                }
                assert!(mean.iter().all(|m| m.abs() < 1e-10));
                let h = arch.entropy(&theta, &obs);
                assert!(h >= 0.0 && h <= 2f64.ln() + 1e-12);
            }
        }
    }

    #[test]
    fn log_linear_score_closed_form() {
        let arch = riverswim_arch(FeatureMap::Product);
        let mut rng = Streams::new(3).stream("t", 0);
        let theta: Vec<f64> = (0..12).map(|_| std_normal(&mut rng)).collect();
        let feat = |s: usize, a: usize| {
            let mut f = vec![0.0; 12];
            f[s * 2 + a] = 1.0;
            f
        };
        for s in 0..6 {
            let obs = onehot(6, s);
            let lp = arch.log_probs(&theta, &obs);
            for a in 0..2 {
                let mut want = feat(s, a);
                for (b, lpb) in lp.iter().enumerate() {
                    for (w, fb) in want.iter_mut().zip(feat(s, b)) {
                        *w -= lpb.exp() * fb;
                    }
                }
                let got = arch.score(&theta, &obs, a);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn near_deterministic_entropy_vanishes() {
        let arch = riverswim_arch(FeatureMap::Product);
        let mut theta = vec![0.0; 12];
        theta[0] = 50.0;
        assert!(arch.entropy(&theta, &onehot(6, 0)) < 1e-15);
    }

    #[test]
    fn pg_estimate_edge_cases() {
        let arch = riverswim_arch(FeatureMap::Product);
        let theta: Vec<f64> = (0..12).map(|i| 0.1 * i as f64).collect();
        let o = onehot(6, 2);
        let obs = vec![o.as_slice(); 3];
        let zero = pg_estimate(&arch, &theta, &obs, &[0, 1, 0], &[0.0; 3]).unwrap();
        assert!(zero.iter().all(|g| *g == 0.0));
        let one = pg_estimate(&arch, &theta, &obs[..1], &[1], &[1.0]).unwrap();
        let s = arch.score(&theta, &o, 1);
        for (a, b) in one.iter().zip(&s) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(pg_estimate(&arch, &theta, &obs, &[0, 1], &[1.0; 3]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let arch = cartpole_arch();
        let mut rng = Streams::new(4).stream("init", 0);
        let p = PolicyParams::new(arch.clone(), arch.init(&mut rng)).unwrap();
        let text = p.to_checkpoint();
        assert!(text.starts_with("arch=mlp-4-64-64-2 d=4610\n"));
        let back = PolicyParams::from_checkpoint(&text, Path::new("mem")).unwrap();
        assert_eq!(back, p);
        let bad = text.replacen("d=4610", "d=4609", 1);
        assert!(PolicyParams::from_checkpoint(&bad, Path::new("mem")).is_err());
    }

    #[test]
    fn architecture_tags_parse() {
        for arch in [
            riverswim_arch(FeatureMap::Product),
            riverswim_arch(FeatureMap::Concat),
            cartpole_arch(),
        ] {
            assert_eq!(arch.tag().parse::<Architecture>().unwrap(), arch);
        }
        assert!("mlp-4-64".parse::<Architecture>().is_err());
    }
}
