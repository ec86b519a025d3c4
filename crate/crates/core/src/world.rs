//! The synthetic task universe.
//!
//! A task of difficulty `d` is a sequence of `d` contexts; solving it means
//! emitting the correct action for every context. The correct action of a
//! context is fixed for the whole run by the world's truth map, so a policy's
//! success probability on a task has a closed form: the product of the
//! probabilities it assigns to the correct action at each step.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::agent::AgentPolicy;
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub num_contexts: usize,
    pub alphabet_size: usize,
    pub max_difficulty: usize,
    /// Correct action for each context id.
    pub truth_map: Vec<usize>,
    /// Probability that a generated batch is structured (exact-match scored).
    pub structured_fraction: f64,
}

impl WorldSpec {
    /// Draws a uniform truth map. The map is frozen from here on.
    pub fn new(
        num_contexts: usize,
        alphabet_size: usize,
        max_difficulty: usize,
        structured_fraction: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if num_contexts == 0 || alphabet_size == 0 || max_difficulty == 0 {
            return Err(Error::invalid(
                "world dimensions must all be positive",
            ));
        }
        if !(0.0..=1.0).contains(&structured_fraction) {
            return Err(Error::invalid("structured_fraction must lie in [0, 1]"));
        }
        let truth_map = (0..num_contexts).map(|_| rng.below(alphabet_size)).collect();
        Ok(WorldSpec {
            num_contexts,
            alphabet_size,
            max_difficulty,
            truth_map,
            structured_fraction,
        })
    }

    pub fn correct_action(&self, context: usize) -> Result<usize> {
        self.truth_map
            .get(context)
            .copied()
            .ok_or(Error::ContextOutOfRange {
                context,
                num_contexts: self.num_contexts,
            })
    }

    /// Builds a task over the given contexts with targets read from the truth map.
    pub fn task(&self, task_id: TaskId, step_contexts: Vec<usize>, structured: bool) -> Result<TaskInstance> {
        let d = step_contexts.len();
        if d == 0 || d > self.max_difficulty {
            return Err(Error::invalid(format!(
                "difficulty {d} outside [1, {}]",
                self.max_difficulty
            )));
        }
        let target_action = step_contexts
            .iter()
            .map(|&c| self.correct_action(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(TaskInstance {
            task_id,
            difficulty: d,
            step_contexts,
            target_action,
            structured,
            eval_spec: if structured {
                EvalSpec::ExactSequence
            } else {
                EvalSpec::TokenOverlap
            },
        })
    }

    /// A task of difficulty `d` over uniformly drawn contexts.
    pub fn sample_task(
        &self,
        task_id: TaskId,
        difficulty: usize,
        structured: bool,
        rng: &mut RngStream,
    ) -> Result<TaskInstance> {
        let contexts = (0..difficulty).map(|_| rng.below(self.num_contexts)).collect();
        self.task(task_id, contexts, structured)
    }
}

/// Identifies a task by the batch it belongs to and its position in it.
/// Index 0 is the batch's seed task; variations are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId {
    pub batch: u64,
    pub index: u32,
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}-v{}", self.batch, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EvalSpec {
    ExactSequence,
    TokenOverlap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task_id: TaskId,
    pub difficulty: usize,
    pub step_contexts: Vec<usize>,
    pub target_action: Vec<usize>,
    pub structured: bool,
    pub eval_spec: EvalSpec,
}

impl TaskInstance {
    /// Checks the structural invariants against `world`.
    pub fn check(&self, world: &WorldSpec) -> Result<()> {
        let d = self.difficulty;
        if d == 0 || self.step_contexts.len() != d || self.target_action.len() != d {
            return Err(Error::invalid(format!("task {} has inconsistent arity", self.task_id)));
        }
        for (&c, &a) in self.step_contexts.iter().zip(&self.target_action) {
            if world.correct_action(c)? != a {
                return Err(Error::invalid(format!(
                    "task {} target disagrees with truth map at context {c}",
                    self.task_id
                )));
            }
        }
        if self.structured != (self.eval_spec == EvalSpec::ExactSequence) {
            return Err(Error::invalid(format!(
                "task {} eval spec does not match its structured flag",
                self.task_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBatch {
    pub batch_id: u64,
    pub seed_task: TaskInstance,
    pub variations: Vec<TaskInstance>,
}

impl TaskBatch {
    pub fn difficulty(&self) -> usize {
        self.seed_task.difficulty
    }
}

/// Token F1 between two multisets: `2 |pred ∩ ref| / (|pred| + |ref|)`.
pub fn similarity<T: Eq + Hash>(pred: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("similarity needs a non-empty reference"));
    }
    let mut counts: HashMap<&T, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(n) = counts.get_mut(t) {
            if *n > 0 {
                *n -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return Ok(0.0);
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / reference.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Outcome of scoring a prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub reward: f64,
    /// False when the prediction could not be evaluated (arity defect).
    pub valid: bool,
}

/// Exact-sequence indicator on structured tasks, token F1 otherwise.
pub fn agent_reward(pred: &[usize], task: &TaskInstance) -> Scored {
    if task.structured {
        if pred.len() != task.target_action.len() {
            return Scored { reward: 0.0, valid: false };
        }
        let hit = pred == task.target_action.as_slice();
        Scored {
            reward: if hit { 1.0 } else { 0.0 },
            valid: true,
        }
    } else {
        match similarity(pred, &task.target_action) {
            Ok(r) => Scored { reward: r, valid: true },
            Err(_) => Scored { reward: 0.0, valid: false },
        }
    }
}

/// Exact probability that `policy` solves a structured `task`.
pub fn true_success_prob(task: &TaskInstance, policy: &AgentPolicy) -> Result<f64> {
    if !task.structured {
        return Err(Error::invalid(
            "success probability is only defined for structured (binary) tasks",
        ));
    }
    if task.step_contexts.is_empty() {
        return Err(Error::invalid("task difficulty must be at least 1"));
    }
    let mut p = 1.0;
    for (&c, &a) in task.step_contexts.iter().zip(&task.target_action) {
        p *= policy.prob(c, a)?;
    }
    Ok(p)
}
