//! Run directories: incremental writes during training, resume, and replay.
//!
//! A run directory holds
//! - `config.json`: the full config of the run;
//! - `metrics.csv`: one row per finished epoch;
//! - `agent_pool.jsonl`: one pool entry (task variation and its trace) per line;
//! - `env_pool.jsonl`: one weighted environment record per line;
//! - `snapshots/agent-epochNNNN.json`, `snapshots/env-epochNNNN.json`: both
//!   policies after each epoch;
//! - `manifest.json`: written once the last epoch is done.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::agent::{AgentCheckpoint, AgentPolicy};
use crate::coevolution::{
    build_eval_set, build_world, eval_stream, run_id, AgentPool, EnvPool, EpochOutput, EpochStats, Mode, PoolEntry,
    Trainer,
};
use crate::config::{load_config, CurriculumConfig};
use crate::env::{weighted_records, BatchOutcome, EnvPolicy, WeightedEnvRecord};
use crate::error::{Error, Result};
use crate::manifest::RunManifest;
use crate::metrics::{read_metrics, MetricsRow, METRICS_HEADER};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const AGENT_POOL_FILE: &str = "agent_pool.jsonl";
pub const ENV_POOL_FILE: &str = "env_pool.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";

/// Paths inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join(METRICS_FILE)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    pub fn agent_pool(&self) -> PathBuf {
        self.root.join(AGENT_POOL_FILE)
    }

    pub fn env_pool(&self) -> PathBuf {
        self.root.join(ENV_POOL_FILE)
    }

    pub fn agent_snapshot(&self, epoch: usize) -> PathBuf {
        self.root.join(SNAPSHOT_DIR).join(format!("agent-epoch{epoch:04}.json"))
    }

    pub fn env_snapshot(&self, epoch: usize) -> PathBuf {
        self.root.join(SNAPSHOT_DIR).join(format!("env-epoch{epoch:04}.json"))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value).expect("value serializes");
    fs::write(path, format!("{text}\n")).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(text.trim()).map_err(|e| Error::Format {
        path: path.to_owned(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads a line-delimited JSON file; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_owned(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn append_jsonl<'a, T: Serialize + 'a>(out: &mut impl Write, items: impl IntoIterator<Item = &'a T>) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn open_for_append(path: &Path, truncate: bool) -> Result<BufWriter<File>> {
    let mut opts = OpenOptions::new();
    opts.create(true);
    if truncate {
        opts.write(true).truncate(true);
    } else {
        opts.append(true);
    }
    opts.open(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Writes a run directory epoch by epoch. Every file is flushed at the end
/// of each epoch, so an interrupted run can be resumed.
pub struct RunWriter {
    dir: RunDir,
    run_id: String,
    mode: Mode,
    metrics: BufWriter<File>,
    agent_pool: BufWriter<File>,
    env_pool: BufWriter<File>,
    rows: Vec<MetricsRow>,
}

impl RunWriter {
    /// Creates (or overwrites) the run directory and writes the config.
    pub fn create(root: impl Into<PathBuf>, config: &CurriculumConfig, mode: Mode) -> Result<Self> {
        let dir = RunDir::new(root);
        let snapshots = dir.root.join(SNAPSHOT_DIR);
        fs::create_dir_all(&snapshots).map_err(|e| Error::io(&snapshots, e))?;
        let config_path = dir.config();
        fs::write(&config_path, format!("{}\n", config.to_json_pretty())).map_err(|e| Error::io(&config_path, e))?;
        let manifest = dir.manifest();
        if manifest.exists() {
            fs::remove_file(&manifest).map_err(|e| Error::io(&manifest, e))?;
        }
        let metrics_path = dir.metrics();
        let mut metrics = open_for_append(&metrics_path, true)?;
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
        Ok(RunWriter {
            run_id: run_id(mode, config.seed),
            mode,
            metrics,
            agent_pool: open_for_append(&dir.agent_pool(), true)?,
            env_pool: open_for_append(&dir.env_pool(), true)?,
            rows: Vec::new(),
            dir,
        })
    }

    /// Reopens a partly written run directory after `rows.len()` epochs.
    /// Pool lines from unfinished epochs are discarded.
    fn reopen(dir: RunDir, mode: Mode, seed: u64, rows: Vec<MetricsRow>, trainer: &Trainer) -> Result<Self> {
        let mut metrics = open_for_append(&dir.metrics(), true)?;
        let metrics_path = dir.metrics();
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;
        for r in &rows {
            writeln!(metrics, "{}", r.to_line()).map_err(|e| Error::io(&metrics_path, e))?;
        }
        let mut agent_pool = open_for_append(&dir.agent_pool(), true)?;
        append_jsonl(&mut agent_pool, trainer.agent_pool.entries()).map_err(|e| Error::io(dir.agent_pool(), e))?;
        let mut env_pool = open_for_append(&dir.env_pool(), true)?;
        append_jsonl(&mut env_pool, trainer.env_pool.entries()).map_err(|e| Error::io(dir.env_pool(), e))?;
        let mut w = RunWriter {
            run_id: run_id(mode, seed),
            mode,
            metrics,
            agent_pool,
            env_pool,
            rows,
            dir,
        };
        w.flush()?;
        Ok(w)
    }

    pub fn dir(&self) -> &RunDir {
        &self.dir
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    fn flush(&mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(self.dir.metrics(), e))?;
        self.agent_pool.flush().map_err(|e| Error::io(self.dir.agent_pool(), e))?;
        self.env_pool.flush().map_err(|e| Error::io(self.dir.env_pool(), e))
    }

    /// Appends everything epoch `out.report.epoch` produced.
    pub fn record_epoch(&mut self, trainer: &Trainer, out: &EpochOutput, wall_seconds: f64) -> Result<MetricsRow> {
        let epoch = out.report.epoch;
        append_jsonl(&mut self.agent_pool, trainer.agent_pool.epoch_entries(epoch))
            .map_err(|e| Error::io(self.dir.agent_pool(), e))?;
        append_jsonl(&mut self.env_pool, &out.new_env_records).map_err(|e| Error::io(self.dir.env_pool(), e))?;
        write_json(&self.dir.agent_snapshot(epoch), &trainer.agent.to_checkpoint())?;
        write_json(&self.dir.env_snapshot(epoch), &trainer.env)?;
        let row = MetricsRow::from_report(&self.run_id, self.mode, &out.report, wall_seconds);
        writeln!(self.metrics, "{}", row.to_line()).map_err(|e| Error::io(self.dir.metrics(), e))?;
        self.flush()?;
        self.rows.push(row.clone());
        Ok(row)
    }

    /// Writes the manifest and closes the files.
    pub fn finish(mut self, config: &CurriculumConfig) -> Result<RunManifest> {
        self.flush()?;
        let manifest = RunManifest::new(config, self.mode, &self.rows);
        manifest.write(self.dir.manifest())?;
        Ok(manifest)
    }
}

/// A finished run on disk.
#[derive(Debug, Clone)]
pub struct PersistedRun {
    pub dir: RunDir,
    pub rows: Vec<MetricsRow>,
    pub manifest: RunManifest,
}

fn drive(mut trainer: Trainer, mut writer: RunWriter, timing: bool) -> Result<PersistedRun> {
    while trainer.epochs_done() < trainer.config.epochs {
        let start = Instant::now();
        let out = trainer.run_epoch()?;
        let wall = if timing { start.elapsed().as_secs_f64() } else { 0.0 };
        let row = writer.record_epoch(&trainer, &out, wall)?;
        log::info!(
            "{} epoch {}: p_hat {:.3}, difficulty {:.2}, eval {:.3}",
            row.run_id,
            row.epoch,
            row.mean_p_hat,
            row.mean_difficulty,
            row.eval_score
        );
    }
    let dir = writer.dir().clone();
    let rows = writer.rows().to_vec();
    let manifest = writer.finish(&trainer.config)?;
    Ok(PersistedRun { dir, rows, manifest })
}

/// Trains for `config.epochs` epochs, writing the run directory as it goes.
/// `timing` fills the wall-clock column; otherwise it is 0.
pub fn train_to_dir(config: &CurriculumConfig, mode: Mode, root: impl Into<PathBuf>, timing: bool) -> Result<PersistedRun> {
    let trainer = Trainer::new(config.clone(), mode)?;
    let writer = RunWriter::create(root, config, mode)?;
    drive(trainer, writer, timing)
}

/// Everything a run directory records, loaded and checked for consistency.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config: CurriculumConfig,
    pub mode: Mode,
    pub rows: Vec<MetricsRow>,
    pub agent_pool: Vec<PoolEntry>,
    pub env_pool: Vec<WeightedEnvRecord>,
}

/// Loads a run directory. The manifest is optional so that unfinished runs load.
pub fn load_run(root: impl AsRef<Path>) -> Result<LoadedRun> {
    let dir = RunDir::new(root.as_ref());
    let config = load_config(dir.config())?;
    let rows = read_metrics(dir.metrics())?;
    let mode = match rows.first() {
        Some(r) => r.mode,
        None => return Err(Error::invalid(format!("{} has no finished epochs", dir.root.display()))),
    };
    for (i, r) in rows.iter().enumerate() {
        if r.epoch != i + 1 || r.mode != mode {
            return Err(Error::Format {
                path: dir.metrics(),
                line: i + 2,
                message: format!("expected epoch {} of a {mode} run", i + 1),
            });
        }
    }
    let done = rows.len();
    let agent_pool = read_jsonl::<PoolEntry>(dir.agent_pool())?
        .into_iter()
        .filter(|e| e.epoch <= done)
        .collect();
    let env_pool = read_jsonl::<WeightedEnvRecord>(dir.env_pool())?
        .into_iter()
        .filter(|r| r.source_epoch <= done)
        .collect();
    Ok(LoadedRun {
        config,
        mode,
        rows,
        agent_pool,
        env_pool,
    })
}

pub fn load_agent_snapshot(dir: &RunDir, epoch: usize) -> Result<AgentPolicy> {
    AgentPolicy::from_checkpoint(read_json::<AgentCheckpoint>(&dir.agent_snapshot(epoch))?)
}

pub fn load_env_snapshot(dir: &RunDir, epoch: usize) -> Result<EnvPolicy> {
    read_json(&dir.env_snapshot(epoch))
}

fn pools_from(run: &LoadedRun) -> (AgentPool, EnvPool) {
    let mut agent_pool = AgentPool::default();
    for epoch in 1..=run.rows.len() {
        agent_pool.append(epoch, run.agent_pool.iter().filter(|e| e.epoch == epoch).cloned());
    }
    let mut env_pool = EnvPool::default();
    env_pool.append(run.env_pool.iter().cloned());
    (agent_pool, env_pool)
}

/// Continues an interrupted run from its last finished epoch up to
/// `epochs` (or the configured count). Produces the same files as an
/// uninterrupted run.
pub fn resume_run(root: impl AsRef<Path>, epochs: Option<usize>, timing: bool) -> Result<PersistedRun> {
    let dir = RunDir::new(root.as_ref());
    let mut run = load_run(&dir.root)?;
    if let Some(e) = epochs {
        run.config.epochs = e;
        run.config.validate()?;
    }
    let done = run.rows.len();
    if done > run.config.epochs {
        return Err(Error::invalid(format!(
            "run already has {done} epochs, more than the {} requested",
            run.config.epochs
        )));
    }
    let mut trainer = Trainer::new(run.config.clone(), run.mode)?;
    let (agent_pool, env_pool) = pools_from(&run);
    trainer.restore(
        load_agent_snapshot(&dir, done)?,
        load_env_snapshot(&dir, done)?,
        agent_pool,
        env_pool,
        done,
    )?;
    let config_path = dir.config();
    fs::write(&config_path, format!("{}\n", run.config.to_json_pretty())).map_err(|e| Error::io(&config_path, e))?;
    let writer = RunWriter::reopen(dir, run.mode, run.config.seed, run.rows, &trainer)?;
    drive(trainer, writer, timing)
}

/// Outcome of a successful replay.
#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub rows: Vec<MetricsRow>,
    pub manifest: RunManifest,
}

fn mismatch(epoch: usize, what: impl std::fmt::Display) -> Error {
    Error::ReplayMismatch(format!("epoch {epoch}: {what}"))
}

/// Re-derives every metrics row of a finished run from its pools and
/// policy snapshots, and checks it against the metrics file and manifest.
///
/// Rollout statistics come from the stored rewards, the environment
/// records are rebuilt from them and compared with the environment pool,
/// and the evaluation score is recomputed from the epoch's agent snapshot.
pub fn replay_run(root: impl AsRef<Path>) -> Result<ReplayReport> {
    let dir = RunDir::new(root.as_ref());
    let run = load_run(&dir.root)?;
    let manifest = RunManifest::read(dir.manifest())?;
    let cfg = &run.config;
    if manifest.config_digest != cfg.digest() {
        return Err(Error::ReplayMismatch("config digest differs from the manifest".into()));
    }
    if manifest.per_epoch_metric_digests.len() != run.rows.len() {
        return Err(Error::ReplayMismatch(format!(
            "manifest lists {} epochs, metrics file has {}",
            manifest.per_epoch_metric_digests.len(),
            run.rows.len()
        )));
    }
    let world = build_world(cfg)?;
    let eval_set = build_eval_set(&world, cfg.eval_tasks_per_level, cfg.seed)?;
    let id = run_id(run.mode, cfg.seed);

    let mut rows = Vec::with_capacity(run.rows.len());
    let (mut agent_total, mut env_total) = (0, 0);
    for (i, stored) in run.rows.iter().enumerate() {
        let epoch = i + 1;
        let entries: Vec<&PoolEntry> = run.agent_pool.iter().filter(|e| e.epoch == epoch).collect();
        for e in &entries {
            e.trace.verify(&e.task).map_err(|err| mismatch(epoch, err))?;
        }

        // Batches in the order they were generated.
        let mut batches: Vec<(u64, usize, Vec<f64>)> = Vec::new();
        for e in &entries {
            let b = e.task.task_id.batch;
            match batches.iter_mut().find(|(id, _, _)| *id == b) {
                Some((_, _, rewards)) => rewards.push(e.trace.reward),
                None => batches.push((b, e.task.difficulty, vec![e.trace.reward])),
            }
        }
        if batches.iter().any(|(_, _, r)| r.len() != cfg.group_size) {
            return Err(mismatch(epoch, "a batch in the agent pool is incomplete"));
        }
        let outcomes = batches
            .iter()
            .map(|(b, d, r)| BatchOutcome::from_rewards(*b, *d, r, cfg.alpha, cfg.beta, cfg.k_min))
            .collect::<Result<Vec<_>>>()?;
        let rewards: Vec<Vec<f64>> = batches.into_iter().map(|(_, _, r)| r).collect();
        let stats = EpochStats::compute(&outcomes, &rewards).map_err(|err| mismatch(epoch, err))?;

        let records = weighted_records(&outcomes, cfg.lambda, epoch)?;
        let stored_records: Vec<WeightedEnvRecord> =
            run.env_pool.iter().filter(|r| r.source_epoch == epoch).cloned().collect();
        if records != stored_records {
            return Err(mismatch(epoch, "environment pool differs from the rebuilt records"));
        }

        let agent = load_agent_snapshot(&dir, epoch)?;
        let eval_score = agent.evaluate(&eval_set, &mut eval_stream(cfg.seed, epoch), cfg.eval_reps)?;

        agent_total += entries.len();
        env_total += records.len();
        let row = MetricsRow {
            run_id: id.clone(),
            mode: run.mode,
            epoch,
            mean_agent_reward: stats.mean_agent_reward,
            mean_p_hat: stats.mean_p_hat,
            mean_difficulty: stats.mean_difficulty,
            filtered_fraction: stats.filtered_fraction,
            eval_score,
            agent_pool_size: agent_total,
            env_pool_size: env_total,
            wall_seconds: 0.0,
        };
        if row.digest() != stored.digest() {
            return Err(mismatch(
                epoch,
                format!("recomputed row `{}` differs from stored `{}`", row.to_line(), stored.to_line()),
            ));
        }
        if row.digest() != manifest.per_epoch_metric_digests[i] {
            return Err(mismatch(epoch, "digest differs from the manifest"));
        }
        rows.push(row);
    }
    Ok(ReplayReport { rows, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CurriculumConfig {
        CurriculumConfig {
            epochs: 3,
            batch_size: 12,
            group_size: 4,
            eval_reps: 2,
            eval_tasks_per_level: 2,
            ..Default::default()
        }
    }

    #[test]
    fn run_dir_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let run = train_to_dir(&small(), Mode::GenEnv, tmp.path(), false).unwrap();
        assert_eq!(run.rows.len(), 3);
        for p in [run.dir.config(), run.dir.metrics(), run.dir.manifest(), run.dir.agent_pool(), run.dir.env_pool()] {
            assert!(p.exists(), "{}", p.display());
        }
        for e in 1..=3 {
            assert!(run.dir.agent_snapshot(e).exists());
            assert!(run.dir.env_snapshot(e).exists());
        }
        let pool: Vec<PoolEntry> = read_jsonl(run.dir.agent_pool()).unwrap();
        assert_eq!(pool.len(), 3 * 12 * 4);
        assert_eq!(RunManifest::read(run.dir.manifest()).unwrap(), run.manifest);
    }

    #[test]
    fn files_match_in_memory_run() {
        let tmp = tempfile::tempdir().unwrap();
        let on_disk = train_to_dir(&small(), Mode::GenEnv, tmp.path(), false).unwrap();
        let live = crate::coevolution::run_training(&small(), Mode::GenEnv).unwrap();
        assert_eq!(on_disk.manifest, live.manifest);
        let env_last = load_env_snapshot(&on_disk.dir, 3).unwrap();
        assert_eq!(env_last, live.trainer.env);
        assert_eq!(load_agent_snapshot(&on_disk.dir, 3).unwrap(), live.trainer.agent);
    }

    #[test]
    fn replay_reproduces_every_mode() {
        for mode in [Mode::GenEnv, Mode::RandomEnv, Mode::StaticEnv] {
            let tmp = tempfile::tempdir().unwrap();
            let run = train_to_dir(&small(), mode, tmp.path(), false).unwrap();
            let replay = replay_run(tmp.path()).unwrap();
            assert_eq!(replay.manifest, run.manifest);
            let digests: Vec<String> = replay.rows.iter().map(MetricsRow::digest).collect();
            assert_eq!(digests, run.manifest.per_epoch_metric_digests);
        }
    }

    #[test]
    fn replay_detects_tampered_pool() {
        let tmp = tempfile::tempdir().unwrap();
        let run = train_to_dir(&small(), Mode::GenEnv, tmp.path(), false).unwrap();
        let path = run.dir.agent_pool();
        let mut entries: Vec<PoolEntry> = read_jsonl(&path).unwrap();
        let e = &mut entries[5];
        e.trace.reward = 1.0 - e.trace.reward;
        let mut text = String::new();
        for e in &entries {
            text.push_str(&serde_json::to_string(e).unwrap());
            text.push('\n');
        }
        fs::write(&path, text).unwrap();
        assert!(matches!(replay_run(tmp.path()), Err(Error::ReplayMismatch(_))));
    }

    #[test]
    fn replay_detects_tampered_snapshot() {
        let tmp = tempfile::tempdir().unwrap();
        let run = train_to_dir(&small(), Mode::GenEnv, tmp.path(), false).unwrap();
        let mut agent = load_agent_snapshot(&run.dir, 2).unwrap();
        let world = build_world(&small()).unwrap();
        for task in build_eval_set(&world, 2, small().seed).unwrap() {
            for (&c, &a) in task.step_contexts.iter().zip(&task.target_action) {
                agent.set_logit(c, a, 50.0);
            }
        }
        write_json(&run.dir.agent_snapshot(2), &agent.to_checkpoint()).unwrap();
        let r = replay_run(tmp.path());
        assert!(matches!(r, Err(Error::ReplayMismatch(_))), "{r:?}");
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let full = tempfile::tempdir().unwrap();
        let cfg = CurriculumConfig { epochs: 4, ..small() };
        train_to_dir(&cfg, Mode::GenEnv, full.path(), false).unwrap();

        let part = tempfile::tempdir().unwrap();
        train_to_dir(&CurriculumConfig { epochs: 2, ..cfg.clone() }, Mode::GenEnv, part.path(), false).unwrap();
        resume_run(part.path(), Some(4), false).unwrap();

        for name in [CONFIG_FILE, METRICS_FILE, MANIFEST_FILE, AGENT_POOL_FILE, ENV_POOL_FILE] {
            let a = fs::read(full.path().join(name)).unwrap();
            let b = fs::read(part.path().join(name)).unwrap();
            assert!(a == b, "{name} differs");
        }
        replay_run(part.path()).unwrap();
    }

    #[test]
    fn resume_drops_partial_epoch() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = CurriculumConfig { epochs: 3, ..small() };
        let run = train_to_dir(&cfg, Mode::RandomEnv, tmp.path(), false).unwrap();
        // Simulate a crash during epoch 3: its pool lines are written, its metrics row is not.
        let metrics = fs::read_to_string(run.dir.metrics()).unwrap();
        let kept: Vec<&str> = metrics.lines().take(3).collect();
        fs::write(run.dir.metrics(), format!("{}\n", kept.join("\n"))).unwrap();
        fs::remove_file(run.dir.manifest()).unwrap();
        let resumed = resume_run(tmp.path(), None, false).unwrap();
        assert_eq!(resumed.manifest, run.manifest);
        let pool: Vec<PoolEntry> = read_jsonl(run.dir.agent_pool()).unwrap();
        assert_eq!(pool.len(), 3 * 12 * 4);
    }

    #[test]
    fn missing_run_dir_is_an_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(replay_run(tmp.path().join("absent")), Err(Error::Io { .. })));
    }
}
