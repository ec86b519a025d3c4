//! The co-evolution loop.
//!
//! Each epoch runs three phases:
//! 1. generation and interaction: the environment emits `batch_size` task
//!    batches of `group_size` variations and the agent attempts every variation;
//! 2. dual update: the agent takes one group-relative gradient step on all
//!    rollouts, and the environment is refit on the batches that pass the
//!    difficulty filter;
//! 3. aggregation: valid traces go to the agent pool, weighted records to the
//!    environment pool.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentPolicy, GroupRollout, Trace};
use crate::config::CurriculumConfig;
use crate::env::{weighted_records, BatchOutcome, EnvPolicy, EnvUpdate, WeightedEnvRecord};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::metrics::MetricsRow;
use crate::rng::{derive_stream, RngStream};
use crate::world::{TaskBatch, TaskId, TaskInstance, WorldSpec};

/// Batch ids at or above this value belong to the held-out evaluation set.
pub const EVAL_BATCH_BASE: u64 = 1 << 62;
const REPLAY_GROUP: TaskId = TaskId {
    batch: u64::MAX,
    index: 0,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Full loop: the environment is trained on the curriculum reward.
    GenEnv,
    /// Fresh batches every epoch from a frozen environment.
    RandomEnv,
    /// One corpus generated from the initial environment before training.
    StaticEnv,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::GenEnv => "genenv",
            Mode::RandomEnv => "random",
            Mode::StaticEnv => "static",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "genenv" => Ok(Mode::GenEnv),
            "random" | "randomenv" => Ok(Mode::RandomEnv),
            "static" | "staticenv" => Ok(Mode::StaticEnv),
            other => Err(Error::invalid(format!(
                "unknown mode `{other}` (expected genenv, random or static)"
            ))),
        }
    }
}

/// A valid trace together with the task it answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub epoch: usize,
    pub task: TaskInstance,
    pub trace: Trace,
}

/// Append-only store of valid agent traces.
#[derive(Debug, Clone, Default)]
pub struct AgentPool {
    entries: Vec<PoolEntry>,
    epoch_index: BTreeMap<usize, Range<usize>>,
}

impl AgentPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn epoch_range(&self, epoch: usize) -> Option<Range<usize>> {
        self.epoch_index.get(&epoch).cloned()
    }

    pub fn epoch_entries(&self, epoch: usize) -> &[PoolEntry] {
        match self.epoch_range(epoch) {
            Some(r) => &self.entries[r],
            None => &[],
        }
    }

    /// Appends the valid entries among `entries`; returns how many were kept.
    pub fn append(&mut self, epoch: usize, entries: impl IntoIterator<Item = PoolEntry>) -> usize {
        let start = self.entries.len();
        self.entries
            .extend(entries.into_iter().filter(|e| e.trace.valid));
        let end = self.entries.len();
        let range = self.epoch_index.entry(epoch).or_insert(start..start);
        range.end = end;
        end - start
    }
}

/// Append-only store of weighted environment records.
#[derive(Debug, Clone, Default)]
pub struct EnvPool {
    entries: Vec<WeightedEnvRecord>,
}

impl EnvPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[WeightedEnvRecord] {
        &self.entries
    }

    pub fn append(&mut self, records: impl IntoIterator<Item = WeightedEnvRecord>) {
        self.entries.extend(records);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mean_agent_reward: f64,
    pub mean_p_hat: f64,
    pub mean_difficulty: f64,
    pub filtered_fraction: f64,
    pub eval_score: f64,
    pub agent_pool_size: usize,
    pub env_pool_size: usize,
}

/// Everything an epoch produced beyond its report.
#[derive(Debug, Clone)]
pub struct EpochOutput {
    pub report: EpochReport,
    pub outcomes: Vec<BatchOutcome>,
    pub env_update: EnvUpdate,
    pub new_pool_entries: usize,
    pub new_env_records: Vec<WeightedEnvRecord>,
    pub replayed: usize,
    pub task_ids: Vec<TaskId>,
}

/// Rollout statistics of one epoch, computed the same way for a live run
/// and for a replay from persisted pools.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_agent_reward: f64,
    pub mean_p_hat: f64,
    pub mean_difficulty: f64,
    pub filtered_fraction: f64,
}

impl EpochStats {
    /// `rewards[i]` holds the rewards of the batch described by `outcomes[i]`.
    pub fn compute(outcomes: &[BatchOutcome], rewards: &[Vec<f64>]) -> Result<Self> {
        if outcomes.is_empty() || outcomes.len() != rewards.len() {
            return Err(Error::invalid("epoch statistics need one reward list per batch"));
        }
        let nb = outcomes.len() as f64;
        let (mut total, mut count) = (0.0, 0usize);
        for r in rewards {
            for x in r {
                total += x;
                count += 1;
            }
        }
        Ok(EpochStats {
            mean_agent_reward: if count == 0 { 0.0 } else { total / count as f64 },
            mean_p_hat: outcomes.iter().map(|o| o.p_hat).sum::<f64>() / nb,
            mean_difficulty: outcomes.iter().map(|o| o.difficulty as f64).sum::<f64>() / nb,
            filtered_fraction: outcomes.iter().filter(|o| o.filtered).count() as f64 / nb,
        })
    }
}

/// Builds the fixed held-out set: `per_level` structured tasks at every difficulty.
pub fn build_eval_set(world: &WorldSpec, per_level: usize, seed: u64) -> Result<Vec<TaskInstance>> {
    let mut rng = derive_stream(seed, "eval-set");
    let mut tasks = Vec::with_capacity(per_level * world.max_difficulty);
    for d in 1..=world.max_difficulty {
        for i in 0..per_level {
            let id = TaskId {
                batch: EVAL_BATCH_BASE + d as u64,
                index: i as u32,
            };
            tasks.push(world.sample_task(id, d, true, &mut rng)?);
        }
    }
    Ok(tasks)
}

pub fn eval_stream(seed: u64, epoch: usize) -> RngStream {
    derive_stream(seed, &format!("eval-ep{epoch}"))
}

/// Builds the world of a run from its config.
pub fn build_world(config: &CurriculumConfig) -> Result<WorldSpec> {
    WorldSpec::new(
        config.num_contexts,
        config.alphabet_size,
        config.max_difficulty,
        config.structured_fraction,
        &mut derive_stream(config.seed, "world"),
    )
}

/// Uniform sample, with replacement, of `round(fraction * fresh_size)` pool entries.
pub fn replay_sample(
    pool: &AgentPool,
    fraction: f64,
    fresh_size: usize,
    rng: &mut RngStream,
) -> Vec<PoolEntry> {
    let count = (fraction * fresh_size as f64).round() as usize;
    if pool.is_empty() || count == 0 {
        return Vec::new();
    }
    (0..count)
        .map(|_| pool.entries[rng.below(pool.len())].clone())
        .collect()
}

/// Mutable state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: CurriculumConfig,
    pub mode: Mode,
    pub world: WorldSpec,
    pub agent: AgentPolicy,
    pub env: EnvPolicy,
    pub agent_pool: AgentPool,
    pub env_pool: EnvPool,
    pub eval_set: Vec<TaskInstance>,
    static_corpus: Vec<TaskBatch>,
    epochs_done: usize,
}

impl Trainer {
    pub fn new(config: CurriculumConfig, mode: Mode) -> Result<Self> {
        config.validate()?;
        let world = build_world(&config)?;
        let agent = AgentPolicy::uniform(config.num_contexts, config.alphabet_size);
        let env = EnvPolicy::with_easy_mass(
            config.max_difficulty,
            config.env_init_easy_mass,
            mode == Mode::GenEnv,
        )?;
        let eval_set = build_eval_set(&world, config.eval_tasks_per_level, config.seed)?;
        let static_corpus = if mode == Mode::StaticEnv {
            (0..(config.epochs * config.batch_size) as u64)
                .map(|b| {
                    let mut rng = derive_stream(config.seed, &format!("static-corpus-b{b}"));
                    env.generate_batch(&world, b, config.group_size, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Trainer {
            config,
            mode,
            world,
            agent,
            env,
            agent_pool: AgentPool::default(),
            env_pool: EnvPool::default(),
            eval_set,
            static_corpus,
            epochs_done: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Puts the trainer in the state it had after `epochs_done` epochs.
    pub fn restore(
        &mut self,
        agent: AgentPolicy,
        env: EnvPolicy,
        agent_pool: AgentPool,
        env_pool: EnvPool,
        epochs_done: usize,
    ) -> Result<()> {
        if agent.num_contexts() != self.config.num_contexts
            || agent.num_actions() != self.config.alphabet_size
            || env.max_difficulty() != self.config.max_difficulty
        {
            return Err(Error::invalid("restored policies do not match the run config"));
        }
        self.agent = agent;
        self.env = env;
        self.agent_pool = agent_pool;
        self.env_pool = env_pool;
        self.epochs_done = epochs_done;
        Ok(())
    }

    /// The pre-generated corpus in static mode; empty otherwise.
    pub fn static_corpus(&self) -> &[TaskBatch] {
        &self.static_corpus
    }

    fn epoch_batches(&self, epoch: usize) -> Result<Vec<TaskBatch>> {
        let cfg = &self.config;
        match self.mode {
            Mode::StaticEnv => {
                let mut rng = derive_stream(cfg.seed, &format!("static-pick-ep{epoch}"));
                let mut idx: Vec<usize> = (0..self.static_corpus.len()).collect();
                let take = cfg.batch_size.min(idx.len());
                for i in 0..take {
                    let j = i + rng.below(idx.len() - i);
                    idx.swap(i, j);
                }
                Ok(idx[..take].iter().map(|&i| self.static_corpus[i].clone()).collect())
            }
            Mode::GenEnv | Mode::RandomEnv => (0..cfg.batch_size)
                .into_par_iter()
                .map(|b| {
                    let batch_id = ((epoch - 1) * cfg.batch_size + b) as u64;
                    let mut rng = derive_stream(cfg.seed, &format!("env-sample-ep{epoch}-b{b}"));
                    self.env.generate_batch(&self.world, batch_id, cfg.group_size, &mut rng)
                })
                .collect(),
        }
    }

    /// Runs the next epoch.
    pub fn run_epoch(&mut self) -> Result<EpochOutput> {
        let epoch = self.epochs_done + 1;
        let cfg = self.config.clone();

        // Phase 1: generation and interaction.
        let batches = self.epoch_batches(epoch)?;
        let agent = &self.agent;
        let rollouts: Vec<Vec<Trace>> = batches
            .par_iter()
            .enumerate()
            .map(|(b, batch)| {
                let mut rng = derive_stream(cfg.seed, &format!("agent-rollout-ep{epoch}-b{b}"));
                batch
                    .variations
                    .iter()
                    .map(|t| agent.rollout(t, &mut rng))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;

        let rewards: Vec<Vec<f64>> = rollouts
            .iter()
            .map(|traces| traces.iter().map(|t| t.reward).collect())
            .collect();
        let outcomes = batches
            .iter()
            .zip(&rewards)
            .map(|(batch, r)| {
                BatchOutcome::from_rewards(batch.batch_id, batch.difficulty(), r, cfg.alpha, cfg.beta, cfg.k_min)
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = EpochStats::compute(&outcomes, &rewards)?;

        // Phase 2: dual update.
        let mut groups = batches
            .iter()
            .zip(&rollouts)
            .map(|(batch, traces)| {
                GroupRollout::new(batch.seed_task.task_id, traces.clone(), cfg.advantage_epsilon)
            })
            .collect::<Result<Vec<_>>>()?;
        let fresh = rollouts.iter().map(Vec::len).sum();
        let mut replay_rng = derive_stream(cfg.seed, &format!("replay-ep{epoch}"));
        let replayed = replay_sample(&self.agent_pool, cfg.replay_fraction, fresh, &mut replay_rng);
        let n_replayed = replayed.len();
        if replayed.len() >= 2 {
            let traces = replayed.into_iter().map(|e| e.trace).collect();
            groups.push(GroupRollout::new(REPLAY_GROUP, traces, cfg.advantage_epsilon)?);
        }
        self.agent.update(&groups, cfg.agent_lr)?;

        let records = weighted_records(&outcomes, cfg.lambda, epoch)?;
        let env_update = self.env.update(&records, cfg.kl_weight, cfg.kl_cap, cfg.env_mix)?;

        // Phase 3: aggregation.
        let task_ids = batches
            .iter()
            .flat_map(|b| b.variations.iter().map(|t| t.task_id))
            .collect();
        let entries = batches
            .into_iter()
            .zip(rollouts)
            .flat_map(|(batch, traces)| {
                batch
                    .variations
                    .into_iter()
                    .zip(traces)
                    .map(move |(task, trace)| PoolEntry { epoch, task, trace })
            });
        let new_pool_entries = self.agent_pool.append(epoch, entries);
        self.env_pool.append(records.iter().cloned());

        let eval_score = self.agent.evaluate(
            &self.eval_set,
            &mut eval_stream(cfg.seed, epoch),
            cfg.eval_reps,
        )?;

        self.epochs_done = epoch;
        Ok(EpochOutput {
            report: EpochReport {
                epoch,
                mean_agent_reward: stats.mean_agent_reward,
                mean_p_hat: stats.mean_p_hat,
                mean_difficulty: stats.mean_difficulty,
                filtered_fraction: stats.filtered_fraction,
                eval_score,
                agent_pool_size: self.agent_pool.len(),
                env_pool_size: self.env_pool.len(),
            },
            outcomes,
            env_update,
            new_pool_entries,
            new_env_records: records,
            replayed: n_replayed,
            task_ids,
        })
    }
}

/// Result of [`run_training`].
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub reports: Vec<EpochReport>,
    pub manifest: RunManifest,
    pub trainer: Trainer,
}

pub fn run_id(mode: Mode, seed: u64) -> String {
    format!("{mode}-seed{seed}")
}

/// Runs `config.epochs` epochs in `mode`.
pub fn run_training(config: &CurriculumConfig, mode: Mode) -> Result<TrainingRun> {
    let mut trainer = Trainer::new(config.clone(), mode)?;
    let mut reports = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        reports.push(trainer.run_epoch()?.report);
    }
    let id = run_id(mode, config.seed);
    let rows: Vec<MetricsRow> = reports
        .iter()
        .map(|r| MetricsRow::from_report(&id, mode, r, 0.0))
        .collect();
    let manifest = RunManifest::new(config, mode, &rows);
    Ok(TrainingRun {
        reports,
        manifest,
        trainer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CurriculumConfig {
        CurriculumConfig {
            epochs: 3,
            batch_size: 16,
            group_size: 4,
            eval_reps: 2,
            ..Default::default()
        }
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("genenv".parse::<Mode>().unwrap(), Mode::GenEnv);
        assert_eq!("RandomEnv".parse::<Mode>().unwrap(), Mode::RandomEnv);
        assert_eq!("static".parse::<Mode>().unwrap(), Mode::StaticEnv);
        assert!("adversarial".parse::<Mode>().is_err());
    }

    #[test]
    fn pool_grows_by_batch_times_group() {
        let mut t = Trainer::new(small(), Mode::GenEnv).unwrap();
        let out = t.run_epoch().unwrap();
        assert_eq!(out.new_pool_entries, 16 * 4);
        assert_eq!(t.agent_pool.len(), 64);
        assert_eq!(t.agent_pool.epoch_range(1), Some(0..64));
        t.run_epoch().unwrap();
        assert_eq!(t.agent_pool.len(), 128);
        assert_eq!(t.agent_pool.epoch_entries(2).len(), 64);
    }

    #[test]
    fn pool_entries_recompute_to_stored_reward() {
        let mut t = Trainer::new(small(), Mode::GenEnv).unwrap();
        t.run_epoch().unwrap();
        for e in t.agent_pool.entries() {
            e.trace.verify(&e.task).unwrap();
            e.task.check(&t.world).unwrap();
        }
    }

    #[test]
    fn filtered_batches_never_reach_env_pool() {
        let mut t = Trainer::new(small(), Mode::GenEnv).unwrap();
        for _ in 0..3 {
            let out = t.run_epoch().unwrap();
            for r in &out.new_env_records {
                let o = out.outcomes.iter().find(|o| o.batch_ref == r.batch_ref).unwrap();
                assert!(!o.filtered);
            }
            let kept = out.outcomes.iter().filter(|o| !o.filtered).count();
            assert_eq!(out.new_env_records.len(), kept);
        }
    }

    #[test]
    fn random_mode_keeps_environment_frozen() {
        let mut t = Trainer::new(small(), Mode::RandomEnv).unwrap();
        let before = t.env.clone();
        for _ in 0..3 {
            assert!(!t.run_epoch().unwrap().env_update.applied);
        }
        assert_eq!(t.env, before);
    }

    #[test]
    fn static_mode_draws_from_fixed_corpus() {
        let mut t = Trainer::new(small(), Mode::StaticEnv).unwrap();
        assert_eq!(t.static_corpus().len(), 3 * 16);
        let corpus: std::collections::BTreeSet<TaskId> = t
            .static_corpus()
            .iter()
            .flat_map(|b| b.variations.iter().map(|v| v.task_id))
            .collect();
        for _ in 0..3 {
            let out = t.run_epoch().unwrap();
            assert!(out.task_ids.iter().all(|id| corpus.contains(id)));
        }
        let again = Trainer::new(small(), Mode::StaticEnv).unwrap();
        assert_eq!(again.static_corpus(), t.static_corpus());
    }

    #[test]
    fn runs_are_deterministic() {
        let a = run_training(&small(), Mode::GenEnv).unwrap();
        let b = run_training(&small(), Mode::GenEnv).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.trainer.agent, b.trainer.agent);
    }

    #[test]
    fn replay_sampling() {
        let mut t = Trainer::new(small(), Mode::GenEnv).unwrap();
        let mut rng = derive_stream(1, "replay");
        assert!(replay_sample(&t.agent_pool, 0.5, 512, &mut rng).is_empty());
        t.run_epoch().unwrap();
        assert!(replay_sample(&t.agent_pool, 0.0, 512, &mut rng).is_empty());
        assert_eq!(replay_sample(&t.agent_pool, 0.25, 512, &mut rng).len(), 128);
        let a = replay_sample(&t.agent_pool, 0.25, 512, &mut derive_stream(1, "r"));
        let b = replay_sample(&t.agent_pool, 0.25, 512, &mut derive_stream(1, "r"));
        assert_eq!(a, b);
    }

    #[test]
    fn replay_fraction_feeds_the_update() {
        let cfg = CurriculumConfig {
            replay_fraction: 0.25,
            ..small()
        };
        let mut t = Trainer::new(cfg, Mode::GenEnv).unwrap();
        assert_eq!(t.run_epoch().unwrap().replayed, 0);
        assert_eq!(t.run_epoch().unwrap().replayed, 16);
    }

    #[test]
    fn reports_stay_in_range() {
        let run = run_training(&small(), Mode::GenEnv).unwrap();
        let mut last = (0, 0);
        for r in &run.reports {
            for v in [r.mean_agent_reward, r.mean_p_hat, r.filtered_fraction, r.eval_score] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!(r.agent_pool_size >= last.0 && r.env_pool_size >= last.1);
            last = (r.agent_pool_size, r.env_pool_size);
        }
    }
}
