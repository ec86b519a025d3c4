//! The task-solving player: a per-context softmax policy trained with
//! group-relative policy gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::world::{agent_reward, TaskId, TaskInstance};

/// Logit used to emulate an infinitely confident choice. `exp(-1000)`
/// underflows to zero, so the softmax puts probability exactly 1 on it.
pub const DETERMINISTIC_LOGIT: f64 = 1000.0;

pub const CHECKPOINT_FORMAT: &str = "agent-policy";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Row-major `num_contexts x num_actions` logit table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPolicy {
    num_contexts: usize,
    num_actions: usize,
    logits: Vec<f64>,
    update_count: u64,
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_at(row: &[f64], a: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    row[a] - lse
}

impl AgentPolicy {
    pub fn uniform(num_contexts: usize, num_actions: usize) -> Self {
        AgentPolicy {
            num_contexts,
            num_actions,
            logits: vec![0.0; num_contexts * num_actions],
            update_count: 0,
        }
    }

    pub fn from_logits(num_contexts: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if num_contexts == 0 || num_actions == 0 {
            return Err(Error::invalid("policy needs at least one context and one action"));
        }
        if logits.len() != num_contexts * num_actions {
            return Err(Error::invalid(format!(
                "expected {} logits, got {}",
                num_contexts * num_actions,
                logits.len()
            )));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("policy logits must be finite"));
        }
        Ok(AgentPolicy {
            num_contexts,
            num_actions,
            logits,
            update_count: 0,
        })
    }

    /// Puts all mass on `choice[c]` in every context `c`.
    pub fn deterministic(num_actions: usize, choice: &[usize]) -> Self {
        let mut p = AgentPolicy::uniform(choice.len(), num_actions);
        for (c, &a) in choice.iter().enumerate() {
            p.set_logit(c, a, DETERMINISTIC_LOGIT);
        }
        p
    }

    pub fn num_contexts(&self) -> usize {
        self.num_contexts
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn set_logit(&mut self, context: usize, action: usize, value: f64) {
        self.logits[context * self.num_actions + action] = value;
    }

    fn check_context(&self, context: usize) -> Result<()> {
        if context >= self.num_contexts {
            return Err(Error::ContextOutOfRange {
                context,
                num_contexts: self.num_contexts,
            });
        }
        Ok(())
    }

    pub fn row(&self, context: usize) -> Result<&[f64]> {
        self.check_context(context)?;
        let a = self.num_actions;
        Ok(&self.logits[context * a..(context + 1) * a])
    }

    pub fn probs(&self, context: usize) -> Result<Vec<f64>> {
        Ok(softmax(self.row(context)?))
    }

    pub fn prob(&self, context: usize, action: usize) -> Result<f64> {
        if action >= self.num_actions {
            return Err(Error::invalid(format!("action {action} out of range")));
        }
        Ok(self.probs(context)?[action])
    }

    pub fn log_prob(&self, context: usize, action: usize) -> Result<f64> {
        if action >= self.num_actions {
            return Err(Error::invalid(format!("action {action} out of range")));
        }
        Ok(log_softmax_at(self.row(context)?, action))
    }

    /// Gradient of `log pi(action | context)` with respect to the logits of
    /// row `context`: `onehot(action) - softmax(row)`. Other rows have zero gradient.
    pub fn score(&self, context: usize, action: usize) -> Result<Vec<f64>> {
        let mut g = self.probs(context)?;
        for x in g.iter_mut() {
            *x = -*x;
        }
        g[action] += 1.0;
        Ok(g)
    }

    /// Samples one action per step of `task`.
    pub fn rollout(&self, task: &TaskInstance, rng: &mut RngStream) -> Result<Trace> {
        let mut trajectory = Vec::with_capacity(task.step_contexts.len());
        let mut prediction = Vec::with_capacity(task.step_contexts.len());
        for &c in &task.step_contexts {
            let row = self.row(c)?;
            let action = rng.categorical(&softmax(row));
            trajectory.push(Step {
                context: c,
                action,
                log_prob: log_softmax_at(row, action),
            });
            prediction.push(action);
        }
        let scored = agent_reward(&prediction, task);
        Ok(Trace {
            task_ref: task.task_id,
            trajectory,
            prediction,
            reward: scored.reward,
            valid: scored.valid,
        })
    }

    /// One policy-gradient step. Each group contributes the mean over its
    /// traces of `advantage * mean_steps score(context, action)`, and the
    /// group terms are summed and scaled by `lr`.
    ///
    /// Contributions are accumulated in `(task_ref, trace index)` order, so the
    /// result does not depend on the order `groups` arrive in.
    pub fn update(&mut self, groups: &[GroupRollout], lr: f64) -> Result<()> {
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by_key(|&i| groups[i].task_ref);

        let a = self.num_actions;
        let mut grad = vec![0.0; self.logits.len()];
        for gi in order {
            let group = &groups[gi];
            if group.advantages.len() != group.traces.len() {
                return Err(Error::invalid(format!(
                    "group {} has {} advantages for {} traces",
                    group.task_ref,
                    group.advantages.len(),
                    group.traces.len()
                )));
            }
            for (trace, &adv) in group.traces.iter().zip(&group.advantages) {
                if adv == 0.0 || trace.trajectory.is_empty() {
                    continue;
                }
                let adv = adv / (group.traces.len() * trace.trajectory.len()) as f64;
                for step in &trace.trajectory {
                    let probs = self.probs(step.context)?;
                    let base = step.context * a;
                    for (j, p) in probs.iter().enumerate() {
                        let onehot = if j == step.action { 1.0 } else { 0.0 };
                        grad[base + j] += adv * (onehot - p);
                    }
                }
            }
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                context: i / a,
                action: i % a,
            });
        }
        for (theta, g) in self.logits.iter_mut().zip(&grad) {
            *theta += lr * g;
        }
        self.update_count += 1;
        Ok(())
    }

    /// Mean reward over `reps` rollouts of every task in `eval_set`.
    pub fn evaluate(&self, eval_set: &[TaskInstance], rng: &mut RngStream, reps: usize) -> Result<f64> {
        if eval_set.is_empty() {
            return Err(Error::invalid("evaluation set is empty"));
        }
        if reps == 0 {
            return Err(Error::invalid("evaluation needs at least one repetition"));
        }
        let mut total = 0.0;
        for task in eval_set {
            for _ in 0..reps {
                total += self.rollout(task, rng)?.reward;
            }
        }
        Ok(total / (eval_set.len() * reps) as f64)
    }

    pub fn to_checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            format: CHECKPOINT_FORMAT.to_owned(),
            version: CHECKPOINT_VERSION,
            num_contexts: self.num_contexts,
            num_actions: self.num_actions,
            update_count: self.update_count,
            logits: self.logits.clone(),
        }
    }

    pub fn from_checkpoint(ck: AgentCheckpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut p = AgentPolicy::from_logits(ck.num_contexts, ck.num_actions, ck.logits)?;
        p.update_count = ck.update_count;
        Ok(p)
    }
}

/// Versioned matrix dump of an [`AgentPolicy`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: String,
    pub version: u32,
    pub num_contexts: usize,
    pub num_actions: usize,
    pub update_count: u64,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub context: usize,
    pub action: usize,
    pub log_prob: f64,
}

/// One rollout: the task it answers, the sampled steps, the prediction and its reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub task_ref: TaskId,
    pub trajectory: Vec<Step>,
    pub prediction: Vec<usize>,
    pub reward: f64,
    pub valid: bool,
}

impl Trace {
    /// Re-scores the stored prediction against `task` and checks the stored fields agree.
    pub fn verify(&self, task: &TaskInstance) -> Result<()> {
        if task.task_id != self.task_ref {
            return Err(Error::invalid(format!(
                "trace for {} checked against task {}",
                self.task_ref, task.task_id
            )));
        }
        let scored = agent_reward(&self.prediction, task);
        if scored.reward != self.reward || scored.valid != self.valid {
            return Err(Error::invalid(format!(
                "trace {} stores reward {} but recomputes to {}",
                self.task_ref, self.reward, scored.reward
            )));
        }
        if self.valid && self.trajectory.len() != task.difficulty {
            return Err(Error::invalid(format!(
                "valid trace {} has {} steps for difficulty {}",
                self.task_ref,
                self.trajectory.len(),
                task.difficulty
            )));
        }
        Ok(())
    }
}

/// `(r_i - mean) / (std + epsilon)` with the population standard deviation.
/// A group whose rewards are all equal gets zero advantages.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::invalid(format!(
            "group statistics need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let scale = rewards.iter().fold(0.0f64, |m, r| m.max(r.abs())).max(1.0);
    if std <= 1e-12 * scale {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / (std + epsilon)).collect())
}

/// The `G` rollouts of one task batch with their normalized advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub task_ref: TaskId,
    pub traces: Vec<Trace>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupRollout {
    pub fn new(task_ref: TaskId, traces: Vec<Trace>, epsilon: f64) -> Result<Self> {
        let rewards: Vec<f64> = traces.iter().map(|t| t.reward).collect();
        let advantages = group_advantages(&rewards, epsilon)?;
        Ok(GroupRollout {
            task_ref,
            traces,
            rewards,
            advantages,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use crate::world::{true_success_prob, WorldSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn world() -> WorldSpec {
        WorldSpec::new(16, 8, 12, 1.0, &mut derive_stream(11, "world")).unwrap()
    }

    fn tid(batch: u64, index: u32) -> TaskId {
        TaskId { batch, index }
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(
            group_advantages(&[1.0, 0.0, 0.0, 1.0], 0.0).unwrap(),
            vec![1.0, -1.0, -1.0, 1.0]
        );
        assert_eq!(group_advantages(&[1.0; 4], 1e-6).unwrap(), vec![0.0; 4]);
        assert_eq!(group_advantages(&[1.0, 0.0], 0.0).unwrap(), vec![1.0, -1.0]);
        assert!(group_advantages(&[1.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn advantages_shift_invariant(
            rewards in proptest::collection::vec(0.0f64..1.0, 2..16),
            shift in -5.0f64..5.0,
        ) {
            let a = group_advantages(&rewards, 1e-6).unwrap();
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let b = group_advantages(&shifted, 1e-6).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}");
            }
        }

        #[test]
        fn advantages_zero_mean(rewards in proptest::collection::vec(0.0f64..1.0, 2..16)) {
            let a = group_advantages(&rewards, 1e-6).unwrap();
            let mean = a.iter().sum::<f64>() / a.len() as f64;
            prop_assert!(mean.abs() < 1e-9);
        }

        #[test]
        fn softmax_rows_normalized(logits in proptest::collection::vec(-30.0f64..30.0, 8)) {
            let p = AgentPolicy::from_logits(1, 8, logits).unwrap();
            let s: f64 = p.probs(0).unwrap().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn expected_score_is_zero(logits in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let p = AgentPolicy::from_logits(1, 6, logits).unwrap();
            let probs = p.probs(0).unwrap();
            let mut total = vec![0.0; 6];
            for (a, pa) in probs.iter().enumerate() {
                for (t, s) in total.iter_mut().zip(p.score(0, a).unwrap()) {
                    *t += pa * s;
                }
            }
            for t in total {
                prop_assert!(t.abs() < 1e-8);
            }
        }

        #[test]
        fn score_matches_finite_differences(
            logits in proptest::collection::vec(-3.0f64..3.0, 5),
            action in 0usize..5,
        ) {
            let p = AgentPolicy::from_logits(1, 5, logits.clone()).unwrap();
            let analytic = p.score(0, action).unwrap();
            let h = 1e-5;
            for j in 0..5 {
                let mut up = logits.clone();
                up[j] += h;
                let mut down = logits.clone();
                down[j] -= h;
                let fu = AgentPolicy::from_logits(1, 5, up).unwrap().log_prob(0, action).unwrap();
                let fd = AgentPolicy::from_logits(1, 5, down).unwrap().log_prob(0, action).unwrap();
                let numeric = (fu - fd) / (2.0 * h);
                let denom = analytic[j].abs().max(1e-3);
                prop_assert!(
                    (numeric - analytic[j]).abs() / denom < 1e-5,
                    "j={j}: {numeric} vs {}", analytic[j]
                );
            }
        }
    }

    #[test]
    fn deterministic_policy_always_succeeds() {
        let w = world();
        let policy = AgentPolicy::deterministic(8, &w.truth_map);
        let mut rng = derive_stream(1, "det");
        for d in 1..=12 {
            let task = w.sample_task(tid(0, d as u32), d, true, &mut rng).unwrap();
            for _ in 0..20 {
                assert_eq!(policy.rollout(&task, &mut rng).unwrap().reward, 1.0);
            }
        }
        let eval: Vec<_> = (1..=5)
            .map(|d| w.sample_task(tid(1, d as u32), d, true, &mut rng).unwrap())
            .collect();
        assert_eq!(policy.evaluate(&eval, &mut rng, 4).unwrap(), 1.0);
    }

    #[test]
    fn uniform_policy_success_rate_matches_oracle() {
        let w = world();
        let policy = AgentPolicy::uniform(16, 8);
        let task = w.task(tid(0, 1), vec![4], true).unwrap();
        let oracle = true_success_prob(&task, &policy).unwrap();
        let mut rng = derive_stream(2, "mc");
        let n = 100_000;
        let hits: f64 = (0..n)
            .map(|_| policy.rollout(&task, &mut rng).unwrap().reward)
            .sum();
        let rate = hits / n as f64;
        assert!((rate - 0.125).abs() < 0.004, "{rate}");
        assert!((rate - oracle).abs() < 3.0 * (oracle * (1.0 - oracle) / n as f64).sqrt());
    }

    #[test]
    fn rollout_is_deterministic_and_consistent() {
        let w = world();
        let policy = AgentPolicy::uniform(16, 8);
        let task = w.task(tid(0, 1), vec![1, 2, 3, 4], true).unwrap();
        let a = policy.rollout(&task, &mut derive_stream(9, "r")).unwrap();
        let b = policy.rollout(&task, &mut derive_stream(9, "r")).unwrap();
        assert_eq!(a, b);
        assert!(a.valid);
        a.verify(&task).unwrap();
        assert_abs_diff_eq!(a.trajectory[0].log_prob, (0.125f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn rollout_rejects_out_of_range_context() {
        let w = world();
        let mut task = w.task(tid(0, 1), vec![1], true).unwrap();
        task.step_contexts[0] = 99;
        let err = AgentPolicy::uniform(16, 8)
            .rollout(&task, &mut derive_stream(1, "x"))
            .unwrap_err();
        assert!(matches!(err, Error::ContextOutOfRange { context: 99, .. }));
    }

    fn single_step_trace(c: usize, a: usize) -> Trace {
        Trace {
            task_ref: tid(0, 1),
            trajectory: vec![Step { context: c, action: a, log_prob: 0.0 }],
            prediction: vec![a],
            reward: 1.0,
            valid: true,
        }
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let mut p = AgentPolicy::uniform(4, 3);
        let group = GroupRollout {
            task_ref: tid(0, 0),
            traces: vec![single_step_trace(1, 2), single_step_trace(1, 0)],
            rewards: vec![1.0, 1.0],
            advantages: vec![0.0, 0.0],
        };
        let before = p.logits().to_vec();
        p.update(&[group], 0.5).unwrap();
        assert_eq!(p.logits(), before.as_slice());
        assert_eq!(p.update_count(), 1);
    }

    #[test]
    fn positive_advantage_raises_chosen_logit() {
        let mut p = AgentPolicy::uniform(4, 3);
        let group = GroupRollout {
            task_ref: tid(0, 0),
            traces: vec![single_step_trace(2, 1)],
            rewards: vec![1.0],
            advantages: vec![1.0],
        };
        p.update(&[group], 0.5).unwrap();
        let row = p.row(2).unwrap();
        assert!(row[1] > 0.0);
        assert!(row[0] < 0.0 && row[2] < 0.0);
        assert_eq!(p.row(0).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn update_averages_over_traces_and_steps() {
        let mut p = AgentPolicy::uniform(2, 2);
        let two_step = Trace {
            task_ref: tid(0, 2),
            trajectory: vec![
                Step { context: 0, action: 0, log_prob: 0.0 },
                Step { context: 1, action: 1, log_prob: 0.0 },
            ],
            prediction: vec![0, 1],
            reward: 1.0,
            valid: true,
        };
        let group = GroupRollout {
            task_ref: tid(0, 0),
            traces: vec![two_step, single_step_trace(0, 1)],
            rewards: vec![1.0, 0.0],
            advantages: vec![1.0, -1.0],
        };
        p.update(&[group], 2.0).unwrap();
        // context 0, action 0: 2 * (0.25 * 0.5 + 0.5 * 0.5)
        assert_abs_diff_eq!(p.row(0).unwrap()[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p.row(0).unwrap()[1], -0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p.row(1).unwrap()[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn update_is_order_independent() {
        let mut groups = Vec::new();
        for b in 0..3u64 {
            groups.push(GroupRollout {
                task_ref: tid(b, 0),
                traces: vec![single_step_trace(b as usize, 1), single_step_trace(b as usize, 2)],
                rewards: vec![1.0, 0.0],
                advantages: vec![0.3 * b as f64 + 0.1, -0.7],
            });
        }
        let mut p1 = AgentPolicy::uniform(4, 3);
        p1.update(&groups, 0.5).unwrap();
        groups.reverse();
        let mut p2 = AgentPolicy::uniform(4, 3);
        p2.update(&groups, 0.5).unwrap();
        assert_eq!(p1.logits(), p2.logits());
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = AgentPolicy::uniform(2, 2);
        let group = GroupRollout {
            task_ref: tid(0, 0),
            traces: vec![single_step_trace(0, 1)],
            rewards: vec![1.0],
            advantages: vec![f64::NAN],
        };
        assert!(matches!(p.update(&[group], 0.5), Err(Error::NonFiniteGradient { .. })));
    }

    #[test]
    fn repeated_updates_learn_a_single_step_task() {
        let w = world();
        let task = w.task(tid(0, 1), vec![7], true).unwrap();
        let mut policy = AgentPolicy::uniform(16, 8);
        let mut reached = None;
        for step in 0..200 {
            let mut rng = derive_stream(3, &format!("learn-{step}"));
            let traces = (0..8)
                .map(|_| policy.rollout(&task, &mut rng))
                .collect::<Result<Vec<_>>>()
                .unwrap();
            let group = GroupRollout::new(task.task_id, traces, 1e-6).unwrap();
            policy.update(&[group], 0.5).unwrap();
            if true_success_prob(&task, &policy).unwrap() > 0.9 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "p never exceeded 0.9");
    }

    #[test]
    fn evaluate_errors_and_determinism() {
        let w = world();
        let policy = AgentPolicy::uniform(16, 8);
        assert!(policy.evaluate(&[], &mut derive_stream(1, "e"), 1).is_err());
        let eval = vec![w.task(tid(0, 1), vec![0, 1], true).unwrap()];
        let a = policy.evaluate(&eval, &mut derive_stream(1, "e"), 1).unwrap();
        let b = policy.evaluate(&eval, &mut derive_stream(1, "e"), 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_evaluation_near_one_eighth() {
        let w = world();
        let policy = AgentPolicy::uniform(16, 8);
        let eval: Vec<_> = (0..16)
            .map(|c| w.task(tid(0, c as u32), vec![c], true).unwrap())
            .collect();
        let score = policy.evaluate(&eval, &mut derive_stream(4, "e"), 4000).unwrap();
        // 64000 Bernoulli(1/8) draws: sd ~ 1.3e-3
        assert!((score - 0.125).abs() < 0.005, "{score}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut p = AgentPolicy::uniform(3, 2);
        p.set_logit(1, 1, 0.1 + 0.2);
        p.update_count = 4;
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back = AgentPolicy::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, p);
        let mut bad = p.to_checkpoint();
        bad.version = 9;
        assert!(AgentPolicy::from_checkpoint(bad).is_err());
    }
}
