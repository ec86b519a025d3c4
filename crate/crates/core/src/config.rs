//! Run configuration.
//!
//! The on-disk format is a flat JSON object. Every key is optional; missing
//! keys take the defaults listed on [`CurriculumConfig`]. Unknown keys are
//! rejected so typos do not silently fall back to defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// All knobs of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    /// Target success rate of generated batches. Default 0.5.
    pub alpha: f64,
    /// Sharpness of the environment reward. Default 4.0.
    pub beta: f64,
    /// Half-width of the band of batches kept for environment updates. Default 0.1.
    pub k_min: f64,
    /// Temperature of the reward-weighted regression weights. Default 1.0.
    pub lambda: f64,
    /// Agent step size. Default 0.55.
    pub agent_lr: f64,
    /// Environment mixing rate toward the weighted target, in (0, 1]. Default 1.0.
    pub env_mix: f64,
    pub epochs: usize,
    /// Task batches generated per epoch. Default 64.
    pub batch_size: usize,
    /// Variations per batch; also the size of each advantage group. Default 8.
    pub group_size: usize,
    pub seed: u64,
    /// Strength of the pull toward the initial environment distribution. Default 4.0.
    pub kl_weight: f64,
    /// Maximum KL(new || old) per environment update, in nats. Default 2.0.
    pub kl_cap: f64,

    pub num_contexts: usize,
    pub alphabet_size: usize,
    pub max_difficulty: usize,
    pub structured_fraction: f64,
    /// Probability mass the initial environment puts on difficulty 1 on top
    /// of a uniform floor, in [0, 1). Default 0.4.
    pub env_init_easy_mass: f64,

    /// Historical traces mixed into each agent update, as a fraction of the
    /// fresh rollout count. Default 0.
    pub replay_fraction: f64,
    pub advantage_epsilon: f64,
    /// Held-out evaluation tasks per difficulty level.
    pub eval_tasks_per_level: usize,
    /// Rollouts per held-out task.
    pub eval_reps: usize,

    /// Large-model learning rates, kept for reference. The simulator does not read them.
    pub reference_agent_lr: f64,
    pub reference_env_lr: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            alpha: 0.5,
            beta: 4.0,
            k_min: 0.1,
            lambda: 1.0,
            agent_lr: 0.55,
            env_mix: 1.0,
            epochs: 10,
            batch_size: 64,
            group_size: 8,
            seed: 42,
            kl_weight: 4.0,
            kl_cap: 2.0,
            num_contexts: 16,
            alphabet_size: 8,
            max_difficulty: 12,
            structured_fraction: 1.0,
            env_init_easy_mass: 0.4,
            replay_fraction: 0.0,
            advantage_epsilon: 1e-6,
            eval_tasks_per_level: 4,
            eval_reps: 16,
            reference_agent_lr: 1e-6,
            reference_env_lr: 5e-7,
        }
    }
}

fn bound(ok: bool, key: &'static str, value: impl ToString, rule: &'static str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::ConfigBound {
            key,
            value: value.to_string(),
            bound: rule,
        })
    }
}

impl CurriculumConfig {
    /// Parses a JSON document, filling missing keys with defaults, and validates it.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: CurriculumConfig =
            serde_path_to_error::deserialize(de).map_err(|e| Error::ConfigParse {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical (compact, field-ordered) JSON encoding.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("k_min", self.k_min),
            ("lambda", self.lambda),
            ("agent_lr", self.agent_lr),
            ("env_mix", self.env_mix),
            ("kl_weight", self.kl_weight),
            ("kl_cap", self.kl_cap),
            ("structured_fraction", self.structured_fraction),
            ("env_init_easy_mass", self.env_init_easy_mass),
            ("replay_fraction", self.replay_fraction),
            ("advantage_epsilon", self.advantage_epsilon),
        ];
        for (key, v) in reals {
            bound(v.is_finite(), key, v, "finite")?;
        }
        bound(self.alpha > 0.0 && self.alpha < 1.0, "alpha", self.alpha, "0 < alpha < 1")?;
        bound(self.k_min >= 0.0 && self.k_min < 1.0, "k_min", self.k_min, "0 <= k_min < 1")?;
        bound(
            self.k_min < self.alpha.min(1.0 - self.alpha),
            "k_min",
            self.k_min,
            "k_min < min(alpha, 1 - alpha)",
        )?;
        bound(self.beta > 0.0, "beta", self.beta, "beta > 0")?;
        bound(self.lambda > 0.0, "lambda", self.lambda, "lambda > 0")?;
        bound(self.agent_lr > 0.0, "agent_lr", self.agent_lr, "agent_lr > 0")?;
        bound(
            self.env_mix > 0.0 && self.env_mix <= 1.0,
            "env_mix",
            self.env_mix,
            "0 < env_mix <= 1",
        )?;
        bound(self.epochs >= 1, "epochs", self.epochs, "epochs >= 1")?;
        bound(self.batch_size >= 1, "batch_size", self.batch_size, "batch_size >= 1")?;
        bound(self.group_size >= 2, "group_size", self.group_size, "group_size >= 2")?;
        bound(self.kl_weight >= 0.0, "kl_weight", self.kl_weight, "kl_weight >= 0")?;
        bound(self.kl_cap > 0.0, "kl_cap", self.kl_cap, "kl_cap > 0")?;
        bound(self.num_contexts >= 1, "num_contexts", self.num_contexts, "num_contexts >= 1")?;
        bound(self.alphabet_size >= 1, "alphabet_size", self.alphabet_size, "alphabet_size >= 1")?;
        bound(
            self.max_difficulty >= 1,
            "max_difficulty",
            self.max_difficulty,
            "max_difficulty >= 1",
        )?;
        bound(
            (0.0..=1.0).contains(&self.structured_fraction),
            "structured_fraction",
            self.structured_fraction,
            "0 <= structured_fraction <= 1",
        )?;
        bound(
            (0.0..1.0).contains(&self.env_init_easy_mass),
            "env_init_easy_mass",
            self.env_init_easy_mass,
            "0 <= env_init_easy_mass < 1",
        )?;
        bound(
            (0.0..=1.0).contains(&self.replay_fraction),
            "replay_fraction",
            self.replay_fraction,
            "0 <= replay_fraction <= 1",
        )?;
        bound(
            self.advantage_epsilon >= 0.0,
            "advantage_epsilon",
            self.advantage_epsilon,
            "advantage_epsilon >= 0",
        )?;
        bound(
            self.eval_tasks_per_level >= 1,
            "eval_tasks_per_level",
            self.eval_tasks_per_level,
            "eval_tasks_per_level >= 1",
        )?;
        bound(self.eval_reps >= 1, "eval_reps", self.eval_reps, "eval_reps >= 1")?;
        Ok(())
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<CurriculumConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CurriculumConfig::from_json_str(&text)
}
