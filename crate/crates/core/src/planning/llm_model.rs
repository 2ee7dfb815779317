use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{PlanResult, PlannerConfig, Proposal, SearchModel};
use crate::error::{Error, Result};
use crate::flows::{run_flow, AgentContext, FlowNode, FlowRunRecord, FlowSettings, LlmCall};
use crate::llm::{Backend, ChatMessage, CompletionRequest};
use crate::memory::{MemoryEvent, MemoryEventKind, MemoryStore, TokenCounter};
use crate::prompts::{build_prompt, parse_action, render_builtin, ActionGrammar, CotType, PromptInputs, PromptSpec};
use crate::types::{Action, ActionSource, AgentId, Observation};

/// A branch of the planning tree: a private copy of the agent's memory
/// with the candidate actions appended as plan notes.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmPlanState {
    pub memory: MemoryStore,
    pub actions: Vec<String>,
}

/// The language model as policy (sampled continuations) and value
/// function (a 0-10 rating).
pub struct LlmSearchModel<'a> {
    pub backend: &'a dyn Backend,
    pub prompt: &'a PromptSpec,
    pub observations: &'a [Observation],
    pub header: &'a str,
    pub grammar: &'a ActionGrammar,
    pub settings: &'a FlowSettings,
    pub counter: &'a dyn TokenCounter,
    pub step: u32,
    /// Continuations sampled per expansion.
    pub samples: usize,
    calls: Mutex<Vec<LlmCall>>,
    ratings: AtomicUsize,
    unparsed: AtomicUsize,
}

fn rating_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(10|[0-9])\b").expect("valid regex"))
}

/// First integer in 0..=10 in a rating reply.
pub fn parse_rating(text: &str) -> Option<u32> {
    rating_re().find(text).and_then(|m| m.as_str().parse().ok())
}

impl<'a> LlmSearchModel<'a> {
    pub fn from_context(ctx: &AgentContext<'a>, samples: usize) -> Self {
        LlmSearchModel {
            backend: ctx.backend,
            prompt: ctx.prompt,
            observations: ctx.observations,
            header: ctx.header,
            grammar: ctx.grammar,
            settings: ctx.settings,
            counter: ctx.counter,
            step: ctx.step,
            samples,
            calls: Mutex::new(Vec::new()),
            ratings: AtomicUsize::new(0),
            unparsed: AtomicUsize::new(0),
        }
    }

    pub fn root(&self, memory: &MemoryStore) -> LlmPlanState {
        LlmPlanState {
            memory: memory.clone(),
            actions: Vec::new(),
        }
    }

    /// Ratings that parsed to a number.
    pub fn parsed_ratings(&self) -> usize {
        self.ratings.load(Ordering::Relaxed) - self.unparsed.load(Ordering::Relaxed)
    }

    pub fn take_calls(&self) -> Vec<LlmCall> {
        std::mem::take(&mut *self.calls.lock().expect("call log lock"))
    }

    fn messages(&self, spec: &PromptSpec, memory: &MemoryStore, instruction: &str) -> Result<Vec<ChatMessage>> {
        build_prompt(
            &PromptInputs {
                spec,
                memory,
                observations: self.observations,
                task_header: self.header,
                budget: self.settings.prompt_budget,
                counter: self.counter,
            },
            Some(instruction),
        )
    }

    fn call(&self, node: &str, messages: Vec<ChatMessage>, n: usize, temperature: f64) -> Result<Vec<String>> {
        let mut req = CompletionRequest::new(messages);
        req.n_samples = n;
        req.temperature = temperature;
        req.max_tokens = self.settings.max_tokens;
        let resp = self.backend.complete(&req)?;
        self.calls.lock().expect("call log lock").push(LlmCall {
            node: node.into(),
            backend: "main",
            messages: req.messages,
            completions: resp.samples.clone(),
            usage: resp.usage,
        });
        Ok(resp.samples)
    }
}

impl SearchModel for LlmSearchModel<'_> {
    type State = LlmPlanState;

    /// Distinct parseable continuations, weighted by how often each was
    /// sampled.
    fn propose(&self, state: &LlmPlanState) -> Result<Vec<Proposal>> {
        let messages = self.messages(self.prompt, &state.memory, &self.grammar.format_hint())?;
        let temperature = if self.samples > 1 {
            self.settings.sc_temperature
        } else {
            self.settings.temperature
        };
        let samples = self.call("plan_propose", messages, self.samples, temperature)?;
        let mut out: Vec<(String, String, f64)> = Vec::new();
        for raw in samples {
            let Ok(action) = parse_action(&raw, self.grammar) else {
                continue;
            };
            let key = self.grammar.canonical(&action);
            match out.iter_mut().find(|(k, _, _)| *k == key) {
                Some(entry) => entry.2 += 1.0,
                None => out.push((key, action, 1.0)),
            }
        }
        Ok(out.into_iter().map(|(_, a, w)| Proposal::new(a, w)).collect())
    }

    fn transition(&self, state: &LlmPlanState, action: &str) -> Result<LlmPlanState> {
        let note = MemoryEvent::new(
            MemoryEventKind::Plan,
            self.step,
            format!("candidate action: {action}"),
            state.memory.agent_id().clone(),
        );
        let mut actions = state.actions.clone();
        actions.push(action.to_string());
        Ok(LlmPlanState {
            memory: state.memory.with_event(note),
            actions,
        })
    }

    /// Unparseable ratings count as 0.
    fn evaluate(&self, state: &LlmPlanState) -> Result<f64> {
        let spec = PromptSpec {
            cot_type: CotType::None,
            examples: Vec::new(),
            ..self.prompt.clone()
        };
        let messages = self.messages(&spec, &state.memory, &render_builtin("rate", &[]))?;
        let reply = self
            .call("plan_rate", messages, 1, 0.0)?
            .into_iter()
            .next()
            .unwrap_or_default();
        self.ratings.fetch_add(1, Ordering::Relaxed);
        match parse_rating(&reply) {
            Some(r) => Ok(r as f64 / 10.0),
            None => {
                self.unparsed.fetch_add(1, Ordering::Relaxed);
                warn!("unparseable state rating {reply:?}; scoring it 0");
                Ok(0.0)
            }
        }
    }

    fn terminal(&self, _state: &LlmPlanState) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Commit {
    /// Execute only the first planned action, replanning next step.
    #[default]
    FirstAction,
    /// Execute the whole plan; later actions are marked as forced.
    FullPlan,
}

/// How an agent plans before acting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanningSettings {
    pub planner: PlannerConfig,
    pub commit: Commit,
    pub samples: usize,
}

impl Default for PlanningSettings {
    fn default() -> Self {
        PlanningSettings {
            planner: PlannerConfig {
                max_depth: 1,
                max_expansions: 1,
                ..PlannerConfig::default()
            },
            commit: Commit::FirstAction,
            samples: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub record: FlowRunRecord,
    /// Remaining plan steps to replay as forced actions.
    pub buffered: Vec<String>,
    /// The search result, or `None` when the fallback flow acted.
    pub plan: Option<PlanResult>,
}

/// Searches with the LLM-backed model and acts on the best plan, running
/// `fallback` when the search yields nothing usable.
pub fn plan_then_act(
    ctx: &mut AgentContext<'_>,
    settings: &PlanningSettings,
    fallback: &FlowNode,
) -> Result<PlanOutcome> {
    if settings.samples == 0 {
        return Err(Error::config("planning.samples", "must be positive"));
    }
    let model = LlmSearchModel::from_context(ctx, settings.samples);
    let root = model.root(&ctx.memory);
    let searched = settings.planner.plan(&model, root);
    let calls = model.take_calls();
    let usable = match searched {
        Ok(plan) if !plan.actions.is_empty() && model.parsed_ratings() > 0 => Ok(plan),
        Ok(_) => Err("no state rating could be parsed".to_string()),
        Err(Error::NoPlan(why)) => Err(why),
        Err(e) => return Err(e),
    };
    drop(model);

    match usable {
        Ok(plan) => {
            let start = ctx.memory.len();
            let agent: AgentId = ctx.agent.clone();
            ctx.memory
                .record(MemoryEventKind::Plan, ctx.step, plan.actions.join(" -> "));
            let first = plan.actions[0].clone();
            ctx.memory.record(MemoryEventKind::Action, ctx.step, first.clone());
            let buffered = match settings.commit {
                Commit::FirstAction => Vec::new(),
                Commit::FullPlan => plan.actions[1..].to_vec(),
            };
            let record = FlowRunRecord {
                agent: agent.clone(),
                step: ctx.step,
                path: vec!["plan_then_act".into()],
                calls,
                events: ctx.memory.events()[start..].to_vec(),
                action: Some(Action {
                    agent_id: agent,
                    step: ctx.step,
                    text: first,
                    source: ActionSource::Extrinsic,
                }),
                notes: vec![format!(
                    "planned {} action(s), value {:.3}, {} expansion(s)",
                    plan.actions.len(),
                    plan.value,
                    plan.stats.expansions
                )],
            };
            Ok(PlanOutcome {
                record,
                buffered,
                plan: Some(plan),
            })
        }
        Err(why) => {
            warn!(agent = %ctx.agent, step = ctx.step, "planner produced no plan ({why}); using the fallback flow");
            let mut record = run_flow(fallback, ctx)?;
            let mut all = calls;
            all.append(&mut record.calls);
            record.calls = all;
            record.path.insert(0, "plan_then_act".into());
            record.notes.insert(0, format!("no plan: {why}; fell back to {}", fallback.name()));
            Ok(PlanOutcome {
                record,
                buffered: Vec::new(),
                plan: None,
            })
        }
    }
}
