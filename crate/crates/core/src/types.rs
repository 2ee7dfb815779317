//! Domain types shared by every module plus return arithmetic.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryEvent;

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub String);

impl AgentId {
    pub fn new(id: impl Into<String>) -> Self {
        AgentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AgentId {
    fn from(s: &str) -> Self {
        AgentId(s.to_string())
    }
}

/// What an agent perceives at one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    #[serde(skip)]
    pub agent_id: AgentId,
    pub step: u32,
    pub text: String,
    /// Task-specific extras, e.g. the admissible action list.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Observation {
    pub fn new(agent_id: AgentId, step: u32, text: impl Into<String>) -> Self {
        Observation {
            agent_id,
            step,
            text: text.into(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    /// Produced by the agent's own extrinsic function.
    #[default]
    Extrinsic,
    /// Injected by the harness, e.g. a buffered plan step.
    Forced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    #[serde(skip)]
    pub agent_id: AgentId,
    pub step: u32,
    pub text: String,
    #[serde(default)]
    pub source: ActionSource,
}

impl Action {
    pub fn new(agent_id: AgentId, step: u32, text: impl Into<String>) -> Self {
        Action {
            agent_id,
            step,
            text: text.into(),
            source: ActionSource::Extrinsic,
        }
    }

    pub fn forced(agent_id: AgentId, step: u32, text: impl Into<String>) -> Self {
        Action {
            source: ActionSource::Forced,
            ..Action::new(agent_id, step, text)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
    pub step: u32,
}

impl Reward {
    pub fn new(value: f64, step: u32) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite reward at step {step}")));
        }
        Ok(Reward { value, step })
    }
}

/// One environment step as seen by a single agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub obs: Observation,
    /// Intrinsic events appended to memory while choosing this step's action.
    pub events: Vec<MemoryEvent>,
    pub action: Action,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: String,
    /// Task instance identifier.
    #[serde(rename = "task")]
    pub task_name: String,
    #[serde(rename = "agent")]
    pub agent_id: AgentId,
    pub steps: Vec<Step>,
    #[serde(rename = "gamma")]
    pub discount: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl Trajectory {
    pub fn new(episode_id: impl Into<String>, task_name: impl Into<String>, agent_id: AgentId, discount: f64) -> Self {
        Trajectory {
            episode_id: episode_id.into(),
            task_name: task_name.into(),
            agent_id,
            steps: Vec::new(),
            discount,
            terminated: false,
            truncated: false,
        }
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::InvalidInput(format!(
                "trajectory {}: discount {} outside [0,1)",
                self.episode_id, self.discount
            )));
        }
        if self.terminated && self.truncated {
            return Err(Error::InvalidInput(format!(
                "trajectory {}: both terminated and truncated",
                self.episode_id
            )));
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let mut traj: Trajectory = serde_json::from_str(line)?;
        for step in &mut traj.steps {
            step.obs.agent_id = traj.agent_id.clone();
            step.action.agent_id = traj.agent_id.clone();
        }
        traj.validate()?;
        Ok(traj)
    }
}

/// A scored episode for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    pub return_discounted: f64,
    pub return_undiscounted: f64,
    pub success: bool,
    pub wall_time: Duration,
    pub llm_calls: usize,
    pub tokens_in: usize,
    pub tokens_out: usize,
}

impl EpisodeResult {
    /// Computes both return fields from the trajectory's rewards.
    pub fn from_trajectory(trajectory: Trajectory, success: bool) -> Result<Self> {
        let rewards = trajectory.rewards();
        let return_discounted = discounted_return(&rewards, trajectory.discount)?;
        let return_undiscounted = undiscounted_return(&rewards)?;
        Ok(EpisodeResult {
            trajectory,
            return_discounted,
            return_undiscounted,
            success,
            wall_time: Duration::ZERO,
            llm_calls: 0,
            tokens_in: 0,
            tokens_out: 0,
        })
    }
}

/// `sum_t gamma^t r_t`, accumulated left to right in step order.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidInput(format!("gamma {gamma} outside [0,1)")));
    }
    let mut total = 0.0;
    let mut weight = 1.0;
    for (t, &r) in rewards.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite reward at step {t}")));
        }
        total += weight * r;
        weight *= gamma;
    }
    Ok(total)
}

/// Plain sum of rewards (the gamma = 1 case, which `discounted_return` rejects).
pub fn undiscounted_return(rewards: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (t, &r) in rewards.iter().enumerate() {
        if !r.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite reward at step {t}")));
        }
        total += r;
    }
    Ok(total)
}
