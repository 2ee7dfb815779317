//! The environment interface: a partially observable stochastic game with
//! per-agent observation and action channels. Single-agent tasks are the
//! one-agent case.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::prompts::{ActionGrammar, FewShotExample};
use crate::types::{Action, AgentId, Observation, Reward, Trajectory};

/// Default truncation horizon in environment steps.
pub const DEFAULT_HORIZON: u32 = 30;

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: Reward,
    pub terminated: bool,
    pub truncated: bool,
}

/// Static properties methods use to decide whether they apply to a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskTraits {
    pub single_step: bool,
    /// Answers are free-form text where majority voting is meaningless.
    pub free_form: bool,
    pub multi_agent: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub episode_return: f64,
    pub success: bool,
    /// Sum over agents of the per-round mean payoff, for multi-agent games.
    pub joint: Option<f64>,
}

/// A single-episode, single-owner environment instance.
pub trait Task: Send {
    /// Task family name, e.g. `gsm8k`.
    fn name(&self) -> &str;

    /// Identifier of the concrete instance, used to group trajectories.
    fn instance_id(&self) -> String;

    fn traits(&self) -> TaskTraits;

    fn agents(&self) -> Vec<AgentId>;

    /// Task description placed in the system prompt.
    fn header(&self, agent: &AgentId) -> String;

    fn grammar(&self) -> ActionGrammar;

    fn few_shot(&self) -> Vec<FewShotExample>;

    fn reset(&mut self, seed: u64) -> Result<BTreeMap<AgentId, Observation>>;

    fn step(&mut self, actions: &BTreeMap<AgentId, Action>) -> Result<BTreeMap<AgentId, StepOutcome>>;

    /// True once the current episode has terminated or been truncated.
    fn is_done(&self) -> bool;

    fn score(&self, trajectory: &Trajectory) -> Score;
}

/// Resets `task` with `seed`, discarding any episode in progress.
pub fn environment_reset(task: &mut dyn Task, seed: u64) -> Result<BTreeMap<AgentId, Observation>> {
    task.reset(seed)
}

/// Steps `task` after checking the joint action covers exactly its agents.
pub fn environment_step(
    task: &mut dyn Task,
    actions: &BTreeMap<AgentId, Action>,
) -> Result<BTreeMap<AgentId, StepOutcome>> {
    if task.is_done() {
        return Err(Error::Protocol(format!("{}: step after terminal", task.instance_id())));
    }
    let agents = task.agents();
    if let Some(unknown) = actions.keys().find(|a| !agents.contains(a)) {
        return Err(Error::Protocol(format!("action for unknown agent {unknown}")));
    }
    if let Some(missing) = agents.iter().find(|a| !actions.contains_key(*a)) {
        return Err(Error::Protocol(format!("missing action for agent {missing}")));
    }
    task.step(actions)
}
