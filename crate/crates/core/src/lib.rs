//! Difficulty-aligned co-evolution of a task-solving agent and a
//! task-generating environment, on a synthetic world where success
//! probabilities have a closed form.
//!
//! The crate is organised as the loop is:
//! [`world`] defines tasks and scoring, [`agent`] and [`env`] are the two
//! players, [`coevolution`] runs the epochs, [`theory`] checks the
//! concentration and gradient-signal results by Monte Carlo, and
//! [`metrics`], [`manifest`] and [`persist`] handle the files a run leaves behind.

pub mod agent;
pub mod coevolution;
pub mod config;
pub mod env;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod persist;
pub mod rng;
pub mod theory;
pub mod world;

pub use agent::{group_advantages, AgentPolicy, GroupRollout, Trace};
pub use coevolution::{run_training, EpochReport, Mode, Trainer, TrainingRun};
pub use config::{load_config, CurriculumConfig};
pub use env::{apply_filter, env_reward, rwr_weights, success_rate, EnvPolicy};
pub use error::{Error, Result};
pub use rng::{derive_stream, RngStream};
pub use world::{agent_reward, similarity, true_success_prob, TaskInstance, WorldSpec};
