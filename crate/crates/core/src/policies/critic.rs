use super::mlp::{Mlp, Tape};
use crate::error::{check_dim, Result};
use crate::rng::Rng;

/// Value-function architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CriticKind {
    /// `V(s) = psi^T obs`.
    Linear { obs_dim: usize },
    /// Tanh MLP with a scalar head.
    Mlp { obs_dim: usize, hidden: [usize; 2] },
}

/// State-value estimate with its own flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    kind: CriticKind,
    params: Vec<f64>,
}

impl Critic {
    /// Linear critics start at zero; MLP critics get orthogonal init with
    /// unit gain on the output layer.
    pub fn new(kind: CriticKind, rng: &mut Rng) -> Self {
        let params = match &kind {
            CriticKind::Linear { obs_dim } => vec![0.0; *obs_dim],
            CriticKind::Mlp { obs_dim, hidden } => {
                Mlp::new(vec![*obs_dim, hidden[0], hidden[1], 1]).init(
                    std::f64::consts::SQRT_2,
                    1.0,
                    rng,
                )
            }
        };
        Self { kind, params }
    }

    pub fn from_params(kind: CriticKind, params: Vec<f64>) -> Result<Self> {
        let c = Self {
            kind,
            params: Vec::new(),
        };
        check_dim(c.param_count(), params.len())?;
        Ok(Self { params, ..c })
    }

    pub fn kind(&self) -> &CriticKind {
        &self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        match &self.kind {
            CriticKind::Linear { obs_dim } => *obs_dim,
            CriticKind::Mlp { .. } => self.net().param_count(),
        }
    }

    fn net(&self) -> Mlp {
        match &self.kind {
            CriticKind::Mlp { obs_dim, hidden } => {
                Mlp::new(vec![*obs_dim, hidden[0], hidden[1], 1])
            }
            CriticKind::Linear { .. } => unreachable!("linear critic has no network"),
        }
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        match &self.kind {
            CriticKind::Linear { .. } => self.params.iter().zip(obs).map(|(p, o)| p * o).sum(),
            CriticKind::Mlp { .. } => {
                let mut tape = Tape::default();
                self.net().forward(&self.params, obs, &mut tape);
                tape.output()[0]
            }
        }
    }

    /// Value and gradient of `mean (V(s) - target)^2 / 2`.
    pub fn value_loss_grad(&self, obs: &[&[f64]], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(obs.len(), targets.len())?;
        let mut grad = vec![0.0; self.params.len()];
        if obs.is_empty() {
            return Ok((0.0, grad));
        }
        let inv = 1.0 / obs.len() as f64;
        let mut loss = 0.0;
        match &self.kind {
            CriticKind::Linear { .. } => {
                for (o, t) in obs.iter().zip(targets) {
                    let err = self.value(o) - t;
                    loss += 0.5 * err * err * inv;
                    for (g, x) in grad.iter_mut().zip(o.iter()) {
                        *g += inv * err * x;
                    }
                }
            }
            CriticKind::Mlp { .. } => {
                let net = self.net();
                let mut tape = Tape::default();
                for (o, t) in obs.iter().zip(targets) {
                    net.forward(&self.params, o, &mut tape);
                    let err = tape.output()[0] - t;
                    loss += 0.5 * err * err * inv;
                    net.backward(&self.params, &tape, &[inv * err], &mut grad);
                }
            }
        }
        Ok((loss, grad))
    }
}
