//! Experiment configuration files.
//!
//! A config is a TOML document with one required top-level key (`env`), an
//! optional `seed`, and one table per subsystem. Every table is optional and
//! falls back to the defaults below; unknown keys are rejected.
//!
//! ```toml
//! env = "cartpole"
//! seed = 3
//!
//! [train]
//! total_steps = 200000
//! users_per_update = 8
//! steps_per_user = 64
//!
//! [privacy]
//! z = 1.0
//! delta = 1e-5
//! clip_norm = 0.05
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accountant::{epsilon_of_z, PrivacyBudget};
use crate::dppg::{LinearVariant, LocalUpdateConfig, LrSchedule};
use crate::envs::{EnvId, RiverswimConfig};
use crate::error::{Error, Result};
use crate::policies::FeatureMap;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV_VAR: &str = "DPPG_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvId,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub local: LocalUpdateConfig,
    #[serde(default)]
    pub privacy: PrivacySection,
    #[serde(default)]
    pub critic: CriticSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub riverswim: RiverswimConfig,
    #[serde(default)]
    pub linear: LinearSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

/// Outer loop of the deep trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Environment-step budget; the run performs
    /// `total_steps / (users_per_update * steps_per_user)` iterations.
    pub total_steps: usize,
    pub users_per_update: usize,
    pub steps_per_user: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// Multiplier on the released update, `theta += global_lr * g~`.
    pub global_lr: f64,
    pub hidden: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            total_steps: 200_000,
            users_per_update: 8,
            steps_per_user: 64,
            gamma: 0.99,
            gae_lambda: 0.85,
            global_lr: 1.0,
            hidden: 64,
        }
    }
}

/// Noise multiplier, failure probability, and per-user clipping norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrivacySection {
    /// `0` trains without noise and reports an infinite epsilon.
    pub z: f64,
    pub delta: f64,
    /// `inf` disables clipping; only allowed with `z = 0`.
    pub clip_norm: f64,
}

impl Default for PrivacySection {
    fn default() -> Self {
        Self {
            z: 1.0,
            delta: 1e-5,
            clip_norm: 0.05,
        }
    }
}

impl PrivacySection {
    /// `None` when `z = 0`.
    pub fn budget(&self) -> Result<Option<PrivacyBudget>> {
        if self.z == 0.0 {
            Ok(None)
        } else {
            epsilon_of_z(self.z, self.delta).map(Some)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticSection {
    pub lr: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
}

impl Default for CriticSection {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 8,
            minibatch_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    /// Evaluate after the first iteration that crosses each multiple of
    /// this many environment steps; `0` evaluates only at the end.
    pub every_steps: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            episodes: 10,
            every_steps: 20_000,
        }
    }
}

/// The single-step linear learner on the tabular chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearSection {
    pub variant: LinearVariant,
    /// Target budget; when set, `z` is derived from it and `privacy.z` is ignored.
    pub epsilon: Option<f64>,
    pub episodes: usize,
    pub alpha: f64,
    pub beta: f64,
    pub schedule: LrSchedule,
    pub fisher_episodes: usize,
    pub fisher_regularizer: f64,
    /// Re-estimate the Fisher matrix this often; by default whenever the
    /// learning rate changes.
    pub fisher_refresh: Option<usize>,
    pub baseline_lr: f64,
    pub features: FeatureMap,
}

impl Default for LinearSection {
    fn default() -> Self {
        Self {
            variant: LinearVariant::L2,
            epsilon: None,
            episodes: 500,
            alpha: 3.5,
            beta: 0.4,
            schedule: LrSchedule::default(),
            fisher_episodes: 25,
            fisher_regularizer: 1e-3,
            fisher_refresh: None,
            baseline_lr: 0.1,
            features: FeatureMap::Product,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub z_grid: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            z_grid: vec![0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            seeds: 3,
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl ExperimentConfig {
    /// Defaults for `env` with every table at its default.
    pub fn new(env: EnvId) -> Self {
        Self {
            env,
            seed: 0,
            train: TrainSection::default(),
            local: LocalUpdateConfig::default(),
            privacy: PrivacySection::default(),
            critic: CriticSection::default(),
            eval: EvalSection::default(),
            riverswim: RiverswimConfig::default(),
            linear: LinearSection::default(),
            sweep: SweepSection::default(),
        }
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, then applies `DPPG_SEED`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?, path)?;
        if let Ok(seed) = std::env::var(SEED_ENV_VAR) {
            cfg.seed = seed.trim().parse().map_err(|e| {
                invalid(
                    SEED_ENV_VAR,
                    format!("{seed:?} is not an unsigned integer ({e})"),
                )
            })?;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The local-update settings with the clipping norm filled in.
    pub fn local_update(&self) -> LocalUpdateConfig {
        LocalUpdateConfig {
            clip_norm: self.privacy.clip_norm,
            ..self.local.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.users_per_update == 0 {
            return Err(invalid("train.users_per_update", "must be >= 1"));
        }
        if t.steps_per_user == 0 {
            return Err(invalid("train.steps_per_user", "must be >= 1"));
        }
        if t.total_steps < t.users_per_update * t.steps_per_user {
            return Err(invalid(
                "train.total_steps",
                "must cover at least one iteration (users_per_update * steps_per_user)",
            ));
        }
        if !(t.gamma > 0.0 && t.gamma < 1.0) {
            return Err(invalid(
                "train.gamma",
                format!("must lie in (0, 1), got {}", t.gamma),
            ));
        }
        if !(0.0..=1.0).contains(&t.gae_lambda) {
            return Err(invalid(
                "train.gae_lambda",
                format!("must lie in [0, 1], got {}", t.gae_lambda),
            ));
        }
        if !(t.global_lr > 0.0) {
            return Err(invalid("train.global_lr", "must be > 0"));
        }
        if t.hidden == 0 {
            return Err(invalid("train.hidden", "must be >= 1"));
        }
        let p = &self.privacy;
        if !(p.z >= 0.0) || !p.z.is_finite() {
            return Err(invalid(
                "privacy.z",
                format!("must be finite and >= 0, got {}", p.z),
            ));
        }
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return Err(invalid(
                "privacy.delta",
                format!("must lie in (0, 1), got {}", p.delta),
            ));
        }
        if !(p.clip_norm > 0.0) {
            return Err(invalid(
                "privacy.clip_norm",
                format!("must be > 0, got {}", p.clip_norm),
            ));
        }
        if p.clip_norm.is_infinite() && p.z > 0.0 {
            return Err(invalid("privacy.clip_norm", "must be finite when z > 0"));
        }
        self.local_update().validate()?;
        let c = &self.critic;
        if !(c.lr > 0.0) || c.minibatch_size == 0 {
            return Err(invalid("critic", "lr must be > 0 and minibatch_size >= 1"));
        }
        if self.eval.episodes == 0 {
            return Err(invalid("eval.episodes", "must be >= 1"));
        }
        self.riverswim
            .validate()
            .map_err(|e| invalid("riverswim", e))?;
        let l = &self.linear;
        if l.episodes == 0 {
            return Err(invalid("linear.episodes", "must be >= 1"));
        }
        if let Some(eps) = l.epsilon {
            if !(eps > 0.0) || !eps.is_finite() {
                return Err(invalid(
                    "linear.epsilon",
                    format!("must be finite and > 0, got {eps}"),
                ));
            }
        }
        if !(l.alpha >= 0.0) || !(l.beta > 0.0 && l.beta < 1.0) {
            return Err(invalid("linear", "need alpha >= 0 and beta in (0, 1)"));
        }
        l.schedule
            .validate()
            .map_err(|e| invalid("linear.schedule", e))?;
        if l.fisher_episodes == 0 || !(l.fisher_regularizer >= 0.0) {
            return Err(invalid(
                "linear",
                "fisher_episodes must be >= 1 and fisher_regularizer >= 0",
            ));
        }
        if l.fisher_refresh == Some(0) {
            return Err(invalid("linear.fisher_refresh", "must be >= 1"));
        }
        if !(l.baseline_lr >= 0.0) {
            return Err(invalid("linear.baseline_lr", "must be >= 0"));
        }
        if self.sweep.z_grid.is_empty() {
            return Err(invalid("sweep.z_grid", "must not be empty"));
        }
        if let Some(z) = self
            .sweep
            .z_grid
            .iter()
            .find(|z| !(**z >= 0.0) || !z.is_finite())
        {
            return Err(invalid(
                "sweep.z_grid",
                format!("entries must be finite and >= 0, got {z}"),
            ));
        }
        if self.sweep.seeds == 0 {
            return Err(invalid("sweep.seeds", "must be >= 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml(text, Path::new("test.toml"))
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = parse("env = \"cartpole\"\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::new(EnvId::Cartpole));
        assert_eq!(cfg.local_update().clip_norm, 0.05);
    }

    #[test]
    fn missing_env_is_named() {
        let err = parse("seed = 1\n").unwrap_err().to_string();
        assert!(err.contains("env"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse("env = \"acrobot\"\n[train]\ngama = 0.9\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("gama"), "{err}");
    }

    #[test]
    fn values_are_validated_with_field_names() {
        let err = parse("env = \"cartpole\"\n[privacy]\ndelta = 2.0\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("privacy.delta"), "{err}");
        let err = parse("env = \"cartpole\"\n[privacy]\nclip_norm = inf\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("privacy.clip_norm"), "{err}");
        assert!(parse("env = \"cartpole\"\n[privacy]\nz = 0.0\nclip_norm = inf\n").is_ok());
        assert!(parse("env = \"cartpole\"\n[sweep]\nz_grid = []\n").is_err());
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut cfg = ExperimentConfig::new(EnvId::Riverswim);
        cfg.privacy.z = 0.0;
        cfg.privacy.clip_norm = f64::INFINITY;
        cfg.linear.epsilon = Some(5.0);
        cfg.linear.variant = LinearVariant::Kl;
        cfg.local.lr = 0.1 + 0.2;
        let back = parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn budget_for_unit_noise() {
        let b = PrivacySection::default().budget().unwrap().unwrap();
        assert!((b.epsilon - 5.0).abs() < 0.01);
        let none = PrivacySection {
            z: 0.0,
            ..PrivacySection::default()
        };
        assert!(none.budget().unwrap().is_none());
    }
}
