//! Trajectory logs, rejection sampling and chat-format SFT samples.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{action_gae, GaeParams, TokenStream, ValueSeries};
use crate::error::{Error, Result};
use crate::llm::{ChatMessage, Role};
use crate::memory::{MemoryEvent, MemoryEventKind};
use crate::types::{ActionSource, EpisodeResult, Trajectory};

/// One line of `trajectories.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrajectory {
    pub method: String,
    #[serde(default)]
    pub run: usize,
    #[serde(rename = "return")]
    pub discounted_return: f64,
    pub success: bool,
    pub trajectory: Trajectory,
}

impl ScoredTrajectory {
    pub fn new(method: impl Into<String>, run: usize, result: &EpisodeResult) -> Self {
        ScoredTrajectory {
            method: method.into(),
            run,
            discounted_return: result.return_discounted,
            success: result.success,
            trajectory: result.trajectory.clone(),
        }
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let mut s: ScoredTrajectory = serde_json::from_str(line)?;
        let agent = s.trajectory.agent_id.clone();
        for step in &mut s.trajectory.steps {
            step.obs.agent_id = agent.clone();
            step.action.agent_id = agent.clone();
        }
        s.trajectory.validate()?;
        Ok(s)
    }
}

/// Parses a JSONL log; errors name the offending line.
pub fn read_trajectories(text: &str) -> Result<Vec<ScoredTrajectory>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            ScoredTrajectory::from_json_line(l)
                .map_err(|e| Error::InvalidInput(format!("trajectory log line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionPolicy {
    #[default]
    KeepSuccessful,
    /// Successful trajectories only, then the best discounted return per
    /// task instance.
    KeepBestPerTask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub kept: Vec<ScoredTrajectory>,
    /// Set when nothing survived.
    pub warning: Option<String>,
}

/// Filters trajectories for supervised fine-tuning. Survivors keep their
/// input order; ties for best go to the smallest episode id.
pub fn rejection_sample(items: &[ScoredTrajectory], policy: RejectionPolicy) -> Rejection {
    let successful: Vec<&ScoredTrajectory> = items.iter().filter(|t| t.success).collect();
    let kept: Vec<ScoredTrajectory> = match policy {
        RejectionPolicy::KeepSuccessful => successful.into_iter().cloned().collect(),
        RejectionPolicy::KeepBestPerTask => {
            let mut best: BTreeMap<&str, &ScoredTrajectory> = BTreeMap::new();
            for t in &successful {
                let slot = best.entry(t.trajectory.task_name.as_str()).or_insert(t);
                let better = t.discounted_return > slot.discounted_return
                    || (t.discounted_return == slot.discounted_return
                        && t.trajectory.episode_id < slot.trajectory.episode_id);
                if better {
                    *slot = t;
                }
            }
            successful
                .into_iter()
                .filter(|t| best.values().any(|b| std::ptr::eq(*b, *t)))
                .cloned()
                .collect()
        }
    };
    let warning = kept
        .is_empty()
        .then(|| format!("rejection sampling kept none of {} trajectories", items.len()));
    if let Some(w) = &warning {
        warn!("{w}");
    }
    Rejection { kept, warning }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftMeta {
    pub task: String,
    pub episode: String,
    #[serde(rename = "return")]
    pub discounted_return: f64,
    pub method: String,
    pub agent: String,
}

/// A chat transcript with the character ranges a trainer should learn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    pub messages: Vec<ChatMessage>,
    /// `[start, end)` character offsets into the concatenated message
    /// contents, covering only model-generated assistant messages.
    pub loss_spans: Vec<[usize; 2]>,
    /// Indices of the messages holding each environment action.
    pub action_ends: Vec<usize>,
    pub meta: SftMeta,
}

impl SftSample {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }

    /// `[start, end)` character range of each message.
    pub fn message_ranges(&self) -> Vec<[usize; 2]> {
        let mut at = 0;
        self.messages
            .iter()
            .map(|m| {
                let start = at;
                at += m.content.chars().count();
                [start, at]
            })
            .collect()
    }
}

fn event_message(e: &MemoryEvent) -> ChatMessage {
    let (role, label) = match e.kind {
        MemoryEventKind::Thought => (Role::Assistant, "Thought"),
        MemoryEventKind::Reflection => (Role::Assistant, "Reflection"),
        MemoryEventKind::Plan => (Role::Assistant, "Plan"),
        MemoryEventKind::ToolCall => (Role::Assistant, "Tool call"),
        MemoryEventKind::MessageOut => (Role::Assistant, "Message sent"),
        MemoryEventKind::ToolResult => (Role::User, "Tool result"),
        MemoryEventKind::MessageIn => (Role::User, "Message received"),
        MemoryEventKind::Observation => (Role::User, "Observation"),
        MemoryEventKind::Action => (Role::Assistant, "Action"),
    };
    ChatMessage {
        role,
        content: format!("{label}: {}", e.text),
    }
}

/// Turns each trajectory into alternating observation and action turns.
/// With `strip_thoughts` only actions remain on the assistant side;
/// otherwise intermediate events precede each action. Forced actions stay
/// in the transcript but outside the loss spans.
pub fn build_sft_dataset(survivors: &[ScoredTrajectory], strip_thoughts: bool) -> Vec<SftSample> {
    survivors
        .iter()
        .map(|s| {
            let traj = &s.trajectory;
            let mut messages = Vec::new();
            let mut learn = Vec::new();
            let mut action_ends = Vec::new();
            for step in &traj.steps {
                let generated = step.action.source == ActionSource::Extrinsic;
                messages.push(ChatMessage::user(step.obs.text.clone()));
                learn.push(false);
                if !strip_thoughts {
                    for e in &step.events {
                        let m = event_message(e);
                        learn.push(generated && m.role == Role::Assistant);
                        messages.push(m);
                    }
                }
                action_ends.push(messages.len());
                messages.push(ChatMessage::assistant(step.action.text.clone()));
                learn.push(generated);
            }
            let mut sample = SftSample {
                messages,
                loss_spans: Vec::new(),
                action_ends,
                meta: SftMeta {
                    task: traj.task_name.clone(),
                    episode: traj.episode_id.clone(),
                    discounted_return: s.discounted_return,
                    method: s.method.clone(),
                    agent: traj.agent_id.to_string(),
                },
            };
            sample.loss_spans = sample
                .message_ranges()
                .into_iter()
                .zip(learn)
                .filter(|(r, l)| *l && r[1] > r[0])
                .map(|(r, _)| r)
                .collect();
            sample
        })
        .collect()
}

/// Splits text into token ids.
pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<u32>;
}

/// Whitespace-separated pieces with stable 32-bit FNV-1a ids.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|w| {
                w.bytes()
                    .fold(0x811c_9dc5u32, |h, b| (h ^ b as u32).wrapping_mul(0x0100_0193))
            })
            .collect()
    }
}

/// Tokenises a sample and marks the last token of every action. Tokens
/// outside the loss spans are unmasked; they still carry the index of the
/// action they precede. Actions that tokenise to nothing are skipped.
pub fn annotate_action_boundaries(sample: &SftSample, tokenizer: &dyn Tokenizer) -> TokenStream {
    let ends: BTreeSet<usize> = sample.action_ends.iter().copied().collect();
    let ranges = sample.message_ranges();
    let mut out = TokenStream::default();
    let mut action = 0;
    for (i, (m, r)) in sample.messages.iter().zip(ranges).enumerate() {
        let tokens = tokenizer.encode(&m.content);
        if tokens.is_empty() {
            if ends.contains(&i) {
                warn!(episode = %sample.meta.episode, message = i, "empty action skipped");
            }
            continue;
        }
        let learn = sample.loss_spans.iter().any(|s| s[0] <= r[0] && r[1] <= s[1]);
        let last = tokens.len() - 1;
        for (k, id) in tokens.into_iter().enumerate() {
            let flag = k == last && ends.contains(&i);
            out.token_ids.push(id);
            out.logprobs.push(0.0);
            out.loss_mask.push(learn);
            out.action_last_token.push(flag);
            out.token_to_action.push(action);
        }
        if ends.contains(&i) {
            action += 1;
        }
    }
    out
}

/// Externally supplied critic values for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueRecord {
    pub episode: String,
    #[serde(default)]
    pub agent: Option<String>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub final_value: f64,
}

/// One line of the advantages output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRecord {
    pub episode: String,
    pub agent: String,
    pub token_ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
    pub token_to_action: Vec<usize>,
    pub action_last_token: Vec<bool>,
    pub advantages: Vec<f64>,
    /// `V(s)` of each token's action, 0 after the final action.
    pub values: Vec<f64>,
}

/// Tokenises a logged trajectory and attaches action-level advantages.
pub fn trajectory_advantages(
    scored: &ScoredTrajectory,
    values: &ValueRecord,
    params: &GaeParams,
    tokenizer: &dyn Tokenizer,
    strip_thoughts: bool,
) -> Result<AdvantageRecord> {
    let traj = &scored.trajectory;
    let sample = build_sft_dataset(std::slice::from_ref(scored), strip_thoughts)
        .pop()
        .expect("one sample per trajectory");
    let stream = annotate_action_boundaries(&sample, tokenizer);
    let actions = stream.num_actions();
    if actions != traj.steps.len() || values.values.len() != actions {
        return Err(Error::InvalidInput(format!(
            "trajectory {}: {} steps, {actions} tokenised actions, {} values",
            traj.episode_id,
            traj.steps.len(),
            values.values.len()
        )));
    }
    let series = ValueSeries {
        values: values.values.clone(),
        rewards: traj.rewards(),
        final_value: values.final_value,
        terminated: traj.terminated,
    };
    let advantages = action_gae(&stream, &series, params)
        .map_err(|e| Error::InvalidInput(format!("trajectory {}: {e}", traj.episode_id)))?;
    let token_values = stream
        .token_to_action
        .iter()
        .map(|&j| series.values.get(j).copied().unwrap_or(0.0))
        .collect();
    Ok(AdvantageRecord {
        episode: traj.episode_id.clone(),
        agent: traj.agent_id.to_string(),
        token_ids: stream.token_ids,
        loss_mask: stream.loss_mask,
        token_to_action: stream.token_to_action,
        action_last_token: stream.action_last_token,
        advantages,
        values: token_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Action, AgentId, Observation, Step};

    fn scored(episode: &str, task: &str, ret: f64, success: bool, steps: usize) -> ScoredTrajectory {
        let agent = AgentId::from("agent");
        let mut t = Trajectory::new(episode, task, agent.clone(), 0.9);
        for i in 0..steps as u32 {
            t.steps.push(Step {
                obs: Observation::new(agent.clone(), i, format!("obs {i}")),
                events: vec![MemoryEvent::new(MemoryEventKind::Thought, i, "hmm", agent.clone())],
                action: Action::new(agent.clone(), i, format!("act {i}")),
                reward: 0.0,
            });
        }
        t.terminated = true;
        ScoredTrajectory {
            method: "react".into(),
            run: 0,
            discounted_return: ret,
            success,
            trajectory: t,
        }
    }

    #[test]
    fn keep_best_picks_max_return() {
        let items = [
            scored("e0", "t", 0.0, true, 1),
            scored("e1", "t", 0.8, true, 1),
            scored("e2", "t", 0.82, true, 1),
        ];
        let r = rejection_sample(&items, RejectionPolicy::KeepBestPerTask);
        assert_eq!(r.kept.len(), 1);
        assert_eq!(r.kept[0].trajectory.episode_id, "e2");
        let none = rejection_sample(&[scored("e0", "t", 0.0, false, 1)], RejectionPolicy::KeepSuccessful);
        assert!(none.kept.is_empty() && none.warning.is_some());
    }

    #[test]
    fn sft_message_counts() {
        let s = scored("e", "t", 1.0, true, 3);
        assert_eq!(build_sft_dataset(std::slice::from_ref(&s), true)[0].messages.len(), 6);
        let kept = &build_sft_dataset(std::slice::from_ref(&s), false)[0];
        assert_eq!(kept.messages.len(), 9);
        assert_eq!(kept.loss_spans.len(), 6);
        let line = kept.to_json_line().unwrap();
        assert_eq!(&SftSample::from_json_line(&line).unwrap(), kept);
    }

    #[test]
    fn forced_steps_leave_the_loss() {
        let mut s = scored("e", "t", 1.0, true, 2);
        let agent = s.trajectory.agent_id.clone();
        s.trajectory.steps[1].action = Action::forced(agent, 1, "act 1");
        let sample = &build_sft_dataset(&[s], true)[0];
        assert_eq!(sample.loss_spans.len(), 1);
        let ranges = sample.message_ranges();
        assert_eq!(sample.loss_spans[0], ranges[1]);
        let stream = annotate_action_boundaries(sample, &WhitespaceTokenizer);
        stream.validate().unwrap();
        assert_eq!(stream.num_actions(), 2);
        assert_eq!(stream.loss_mask, [false, false, true, true, false, false, false, false]);
    }

    #[test]
    fn three_token_action() {
        let sample = SftSample {
            messages: vec![ChatMessage::assistant("Move  Right")],
            loss_spans: vec![[0, 11]],
            action_ends: vec![0],
            meta: SftMeta {
                task: "t".into(),
                episode: "e".into(),
                discounted_return: 0.0,
                method: "m".into(),
                agent: "a".into(),
            },
        };
        struct Chars;
        impl Tokenizer for Chars {
            fn encode(&self, text: &str) -> Vec<u32> {
                text.split(' ').map(|w| w.len() as u32).collect()
            }
        }
        let s = annotate_action_boundaries(&sample, &Chars);
        assert_eq!(s.token_to_action, [0, 0, 0]);
        assert_eq!(s.action_last_token, [false, false, true]);
    }
}
