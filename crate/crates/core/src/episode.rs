//! The agent-environment loop for one episode.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use crate::env::{environment_reset, environment_step, Score, Task, DEFAULT_HORIZON};
use crate::error::{Error, Result};
use crate::flows::tools::ToolRegistry;
use crate::flows::{run_flow, AgentContext, FlowRunRecord, FlowSettings, SwiftSageState};
use crate::llm::Backend;
use crate::memory::{CharQuarterCounter, MemoryEventKind, MemoryStore, TokenCounter};
use crate::methods::Policy;
use crate::planning::{plan_then_act, PlanningSettings};
use crate::prompts::render_builtin;
use crate::types::{Action, AgentId, EpisodeResult, Observation, Step, Trajectory};

/// Harness-side settings shared by every episode of a run.
pub struct EpisodeConfig<'a> {
    pub backend: &'a dyn Backend,
    pub sage_backend: Option<&'a dyn Backend>,
    pub settings: FlowSettings,
    pub gamma: f64,
    pub horizon: u32,
    pub tools: ToolRegistry,
    pub counter: &'a dyn TokenCounter,
    /// When set, every agent searches before acting and the policy's flow
    /// becomes the fallback.
    pub planning: Option<PlanningSettings>,
}

impl<'a> EpisodeConfig<'a> {
    pub fn new(backend: &'a dyn Backend) -> Self {
        EpisodeConfig {
            backend,
            sage_backend: None,
            settings: FlowSettings::default(),
            gamma: 0.99,
            horizon: DEFAULT_HORIZON,
            tools: ToolRegistry::with_calculator(),
            counter: &CharQuarterCounter,
            planning: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    /// One result per agent, in agent order.
    pub results: Vec<EpisodeResult>,
    pub records: Vec<FlowRunRecord>,
    pub score: Score,
}

impl EpisodeOutput {
    pub fn llm_calls(&self) -> usize {
        self.results.iter().map(|r| r.llm_calls).sum()
    }
}

struct AgentState {
    memory: MemoryStore,
    observations: Vec<Observation>,
    actions: Vec<Action>,
    swift: SwiftSageState,
    plan_buffer: VecDeque<String>,
    trajectory: Trajectory,
    calls: usize,
    tokens_in: usize,
    tokens_out: usize,
}

/// Runs `policy` for every agent of `task` until termination or the horizon.
pub fn run_episode(
    task: &mut dyn Task,
    policy: &Policy,
    config: &EpisodeConfig<'_>,
    seed: u64,
    episode_id: &str,
) -> Result<EpisodeOutput> {
    let started = Instant::now();
    let mut current = environment_reset(task, seed)?;
    let agents: Vec<AgentId> = current.keys().cloned().collect();
    let traits = task.traits();
    let grammar = task.grammar();
    let pool = task.few_shot();
    let instance = task.instance_id();

    let mut states: BTreeMap<AgentId, AgentState> = agents
        .iter()
        .map(|a| {
            let state = AgentState {
                memory: MemoryStore::new(a.clone()),
                observations: Vec::new(),
                actions: Vec::new(),
                swift: SwiftSageState::default(),
                plan_buffer: VecDeque::new(),
                trajectory: Trajectory::new(episode_id, instance.clone(), a.clone(), config.gamma),
                calls: 0,
                tokens_in: 0,
                tokens_out: 0,
            };
            (a.clone(), state)
        })
        .collect();
    let specs: BTreeMap<AgentId, _> = agents
        .iter()
        .map(|a| {
            let system = render_builtin("system", &[("agent", a.to_string())]);
            (a.clone(), (policy.prompt_spec(&system, &pool), task.header(a)))
        })
        .collect();

    let mut records = Vec::new();
    let mut steps_taken = 0u32;
    loop {
        let mut marks = BTreeMap::new();
        for (agent, obs) in &current {
            let st = states
                .get_mut(agent)
                .ok_or_else(|| Error::Protocol(format!("observation for unknown agent {agent}")))?;
            st.memory.record(MemoryEventKind::Observation, obs.step, obs.text.clone());
            st.observations.push(obs.clone());
            marks.insert(agent.clone(), st.memory.len());
        }

        let mut joint = BTreeMap::new();
        for agent in &agents {
            let mut st = states.remove(agent).expect("every agent has state");
            let mut peer_memories: BTreeMap<AgentId, MemoryStore> = states
                .iter_mut()
                .map(|(id, s)| (id.clone(), std::mem::replace(&mut s.memory, MemoryStore::new(id.clone()))))
                .collect();
            let (spec, header) = &specs[agent];
            let step = st.observations.last().map_or(0, |o| o.step);
            let mut ctx = AgentContext {
                agent: agent.clone(),
                step,
                observations: &st.observations,
                actions: &st.actions,
                memory: std::mem::replace(&mut st.memory, MemoryStore::new(agent.clone())),
                peers: traits.multi_agent.then_some(&mut peer_memories),
                backend: config.backend,
                sage_backend: config.sage_backend,
                prompt: spec,
                example_pool: &pool,
                header,
                grammar: &grammar,
                single_step: traits.single_step,
                tools: &config.tools,
                settings: &config.settings,
                counter: config.counter,
                swift: &mut st.swift,
            };
            let buffered = st.plan_buffer.pop_front();
            let outcome = match (buffered, &config.planning) {
                (Some(text), _) => Ok((replay_planned(&mut ctx, text), Vec::new())),
                (None, Some(planning)) => {
                    plan_then_act(&mut ctx, planning, &policy.flow).map(|o| (o.record, o.buffered))
                }
                (None, None) => run_flow(&policy.flow, &mut ctx).map(|r| (r, Vec::new())),
            };
            st.memory = ctx.memory;
            for (id, mem) in peer_memories {
                states.get_mut(&id).expect("peer state").memory = mem;
            }
            let (record, rest) = outcome?;
            st.plan_buffer.extend(rest);
            let action = record
                .action
                .clone()
                .ok_or_else(|| Error::Contract(format!("flow {} finished without an action", policy.name)))?;
            st.calls += record.samples();
            let usage = record.usage();
            st.tokens_in += usage.input;
            st.tokens_out += usage.output;
            st.actions.push(action.clone());
            joint.insert(agent.clone(), action);
            records.push(record);
            states.insert(agent.clone(), st);
        }

        let outcomes = environment_step(task, &joint)?;
        steps_taken += 1;
        let mut terminated = false;
        let mut truncated = false;
        let mut next = BTreeMap::new();
        for agent in &agents {
            let out = outcomes
                .get(agent)
                .ok_or_else(|| Error::Protocol(format!("no outcome for agent {agent}")))?;
            let st = states.get_mut(agent).expect("agent state");
            let events = st.memory.events()[marks[agent]..]
                .iter()
                .filter(|e| e.kind.is_intrinsic())
                .cloned()
                .collect();
            let action = joint[agent].clone();
            st.swift.observe(out.reward.value, action.source);
            st.trajectory.steps.push(Step {
                obs: st.observations.last().cloned().expect("observed this step"),
                events,
                action,
                reward: out.reward.value,
            });
            terminated |= out.terminated;
            truncated |= out.truncated;
            next.insert(agent.clone(), out.observation.clone());
        }
        if !terminated && !truncated && steps_taken >= config.horizon {
            truncated = true;
        }
        if terminated || truncated {
            for st in states.values_mut() {
                st.trajectory.terminated = terminated;
                st.trajectory.truncated = truncated && !terminated;
            }
            break;
        }
        current = next;
    }

    let wall_time = started.elapsed();
    let mut results = Vec::new();
    let mut score = None;
    for agent in &agents {
        let st = states.remove(agent).expect("agent state");
        let s = task.score(&st.trajectory);
        score.get_or_insert(s);
        let mut r = EpisodeResult::from_trajectory(st.trajectory, s.success)?;
        r.wall_time = wall_time;
        r.llm_calls = st.calls;
        r.tokens_in = st.tokens_in;
        r.tokens_out = st.tokens_out;
        results.push(r);
    }
    Ok(EpisodeOutput {
        results,
        records,
        score: score.expect("at least one agent"),
    })
}

fn replay_planned(ctx: &mut AgentContext<'_>, text: String) -> FlowRunRecord {
    ctx.memory.record(MemoryEventKind::Action, ctx.step, text.clone());
    FlowRunRecord {
        agent: ctx.agent.clone(),
        step: ctx.step,
        path: vec!["plan_buffer".into()],
        calls: Vec::new(),
        events: ctx.memory.events()[ctx.memory.len() - 1..].to_vec(),
        action: Some(Action::forced(ctx.agent.clone(), ctx.step, text)),
        notes: Vec::new(),
    }
}
