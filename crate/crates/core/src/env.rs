//! The task-generating player.
//!
//! The environment policy is a categorical distribution over difficulty
//! levels `1..=max_difficulty`. It is rewarded when the batches it generates
//! are solved at a rate close to `alpha`, and it is refit by reward-weighted
//! regression under a KL leash toward its initial distribution.

use serde::{Deserialize, Serialize};

use crate::agent::softmax;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::world::{TaskBatch, TaskId, WorldSpec};

/// Mass added to every difficulty bin before normalizing the RWR target.
pub const BIN_SMOOTHING: f64 = 1e-6;

/// Slack on the filter boundary so that `|p_hat - alpha| == k_min` survives
/// floating-point subtraction.
const FILTER_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvPolicy {
    logits: Vec<f64>,
    reference_logits: Vec<f64>,
    training_enabled: bool,
}

impl EnvPolicy {
    pub fn new(logits: Vec<f64>, training_enabled: bool) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("environment logits must be non-empty and finite"));
        }
        Ok(EnvPolicy {
            reference_logits: logits.clone(),
            logits,
            training_enabled,
        })
    }

    pub fn uniform(max_difficulty: usize, training_enabled: bool) -> Result<Self> {
        Self::new(vec![0.0; max_difficulty], training_enabled)
    }

    /// `easy_mass` on difficulty 1 plus the remainder spread evenly over
    /// every level. Zero gives the uniform distribution.
    pub fn with_easy_mass(max_difficulty: usize, easy_mass: f64, training_enabled: bool) -> Result<Self> {
        if !(0.0..1.0).contains(&easy_mass) {
            return Err(Error::invalid(format!("easy_mass {easy_mass} must lie in [0, 1)")));
        }
        let floor = (1.0 - easy_mass) / max_difficulty as f64;
        let logits = (0..max_difficulty)
            .map(|i| if i == 0 { (easy_mass + floor).ln() } else { floor.ln() })
            .collect();
        Self::new(logits, training_enabled)
    }

    pub fn max_difficulty(&self) -> usize {
        self.logits.len()
    }

    pub fn training_enabled(&self) -> bool {
        self.training_enabled
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn reference_logits(&self) -> &[f64] {
        &self.reference_logits
    }

    /// Distribution over difficulties; entry `i` is difficulty `i + 1`.
    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    pub fn reference_probs(&self) -> Vec<f64> {
        softmax(&self.reference_logits)
    }

    pub fn mean_difficulty(&self) -> f64 {
        self.probs()
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    pub fn sample_difficulty(&self, rng: &mut RngStream) -> usize {
        rng.categorical(&self.probs()) + 1
    }

    /// Samples one difficulty and builds a seed task plus `n` variations at it.
    pub fn generate_batch(
        &self,
        world: &WorldSpec,
        batch_id: u64,
        n: usize,
        rng: &mut RngStream,
    ) -> Result<TaskBatch> {
        if n == 0 {
            return Err(Error::invalid("a batch needs at least one variation"));
        }
        if self.max_difficulty() > world.max_difficulty {
            return Err(Error::invalid(format!(
                "environment covers {} levels but the world stops at {}",
                self.max_difficulty(),
                world.max_difficulty
            )));
        }
        let d = self.sample_difficulty(rng);
        let structured = world.structured_fraction >= 1.0 || rng.bernoulli(world.structured_fraction);
        let seed_task = world.sample_task(TaskId { batch: batch_id, index: 0 }, d, structured, rng)?;
        let variations = (1..=n as u32)
            .map(|index| world.sample_task(TaskId { batch: batch_id, index }, d, structured, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskBatch {
            batch_id,
            seed_task,
            variations,
        })
    }

    /// Reward-weighted refit toward the difficulties in `records`.
    ///
    /// The weighted histogram `q` is pulled toward the initial distribution
    /// `p0` by geometric interpolation, `t ∝ (q · p0^w)^(1/(1+w))`, which is
    /// the minimizer of `KL(t||q) + w KL(t||p0)`. The new distribution is the
    /// mixture `(1 - m) p + m t`, with `m` bisected down until
    /// `KL(new || p) <= kl_cap`.
    pub fn update(
        &mut self,
        records: &[WeightedEnvRecord],
        kl_weight: f64,
        kl_cap: f64,
        mix: f64,
    ) -> Result<EnvUpdate> {
        if !self.training_enabled {
            return Ok(EnvUpdate::skipped());
        }
        if records.is_empty() {
            log::warn!("no unfiltered batches this epoch; environment update skipped");
            return Ok(EnvUpdate::skipped());
        }
        if !(kl_weight >= 0.0 && kl_cap > 0.0 && mix > 0.0 && mix <= 1.0) {
            return Err(Error::invalid(format!(
                "bad env update parameters kl_weight={kl_weight} kl_cap={kl_cap} mix={mix}"
            )));
        }
        let dmax = self.max_difficulty();
        let mut q = vec![BIN_SMOOTHING; dmax];
        for r in records {
            if r.difficulty == 0 || r.difficulty > dmax || r.weight.is_nan() || r.weight < 0.0 {
                return Err(Error::invalid(format!(
                    "record with difficulty {} and weight {} is out of range",
                    r.difficulty, r.weight
                )));
            }
            q[r.difficulty - 1] += r.weight;
        }
        normalize(&mut q);

        let p0 = self.reference_probs();
        let exponent = 1.0 / (1.0 + kl_weight);
        let mut target: Vec<f64> = q
            .iter()
            .zip(&p0)
            .map(|(qi, pi)| (qi.ln() + kl_weight * pi.ln()) * exponent)
            .collect();
        let max = target.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for t in target.iter_mut() {
            *t = (*t - max).exp();
        }
        normalize(&mut target);

        let old = self.probs();
        let blend = |m: f64| -> Vec<f64> {
            old.iter()
                .zip(&target)
                .map(|(o, t)| (1.0 - m) * o + m * t)
                .collect()
        };
        let mut m = mix;
        let mut new = blend(m);
        let mut kl = kl_divergence(&new, &old);
        if kl > kl_cap {
            // KL(blend(m) || old) is convex in m and zero at m = 0, so it is
            // increasing on [0, mix] and bisection finds the largest feasible m.
            let (mut lo, mut hi) = (0.0, mix);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if kl_divergence(&blend(mid), &old) <= kl_cap {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            m = lo;
            new = blend(m);
            kl = kl_divergence(&new, &old);
        }
        self.logits = new.iter().map(|p| p.ln()).collect();
        Ok(EnvUpdate {
            applied: true,
            mix: m,
            kl,
        })
    }
}

/// Summary of one environment update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvUpdate {
    pub applied: bool,
    /// Mixing rate actually used after the KL cap.
    pub mix: f64,
    /// KL(new || previous) in nats.
    pub kl: f64,
}

impl EnvUpdate {
    fn skipped() -> Self {
        EnvUpdate {
            applied: false,
            mix: 0.0,
            kl: 0.0,
        }
    }
}

fn normalize(v: &mut [f64]) {
    let z: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= z;
    }
}

/// `KL(p || q)` in nats. Terms with `p_i = 0` contribute zero.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// Counts rewards equal to exactly 1.0.
pub fn count_successes(rewards: &[f64]) -> usize {
    rewards.iter().filter(|&&r| r == 1.0).count()
}

/// Empirical success rate `k / n`.
pub fn success_rate(successes: usize, attempts: usize) -> Result<f64> {
    if attempts == 0 {
        return Err(Error::invalid("success rate over zero attempts"));
    }
    if successes > attempts {
        return Err(Error::invalid(format!("{successes} successes out of {attempts} attempts")));
    }
    Ok(successes as f64 / attempts as f64)
}

/// Bell-shaped reward `exp(-beta (p_hat - alpha)^2)`.
pub fn env_reward(p_hat: f64, alpha: f64, beta: f64) -> f64 {
    (-beta * (p_hat - alpha).powi(2)).exp()
}

/// True when a batch must be excluded from environment updates,
/// i.e. `|p_hat - alpha| > k_min`. The boundary itself is kept.
pub fn apply_filter(p_hat: f64, alpha: f64, k_min: f64) -> bool {
    (p_hat - alpha).abs() > k_min + FILTER_TOLERANCE
}

/// Normalized weights `exp(lambda r_i) / sum_j exp(lambda r_j)`.
pub fn rwr_weights(r_envs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if r_envs.is_empty() {
        return Err(Error::invalid("no environment rewards to weight"));
    }
    let max = r_envs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = r_envs.iter().map(|r| (lambda * (r - max)).exp()).collect();
    normalize(&mut w);
    Ok(w)
}

/// Per-batch outcome of the agent's attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub batch_ref: u64,
    pub difficulty: usize,
    pub k: usize,
    pub n: usize,
    pub p_hat: f64,
    pub r_env: f64,
    pub filtered: bool,
}

impl BatchOutcome {
    pub fn from_rewards(
        batch_ref: u64,
        difficulty: usize,
        rewards: &[f64],
        alpha: f64,
        beta: f64,
        k_min: f64,
    ) -> Result<Self> {
        let k = count_successes(rewards);
        let n = rewards.len();
        let p_hat = success_rate(k, n)?;
        Ok(BatchOutcome {
            batch_ref,
            difficulty,
            k,
            n,
            p_hat,
            r_env: env_reward(p_hat, alpha, beta),
            filtered: apply_filter(p_hat, alpha, k_min),
        })
    }
}

/// One entry of the environment training pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEnvRecord {
    pub batch_ref: u64,
    pub difficulty: usize,
    pub r_env: f64,
    pub weight: f64,
    pub source_epoch: usize,
}

/// Builds weighted records from the unfiltered outcomes of one epoch.
/// Filtered outcomes never produce a record.
pub fn weighted_records(
    outcomes: &[BatchOutcome],
    lambda: f64,
    epoch: usize,
) -> Result<Vec<WeightedEnvRecord>> {
    let kept: Vec<&BatchOutcome> = outcomes.iter().filter(|o| !o.filtered).collect();
    if kept.is_empty() {
        return Ok(Vec::new());
    }
    let rewards: Vec<f64> = kept.iter().map(|o| o.r_env).collect();
    let weights = rwr_weights(&rewards, lambda)?;
    Ok(kept
        .iter()
        .zip(weights)
        .map(|(o, weight)| WeightedEnvRecord {
            batch_ref: o.batch_ref,
            difficulty: o.difficulty,
            r_env: o.r_env,
            weight,
            source_epoch: epoch,
        })
        .collect())
}
