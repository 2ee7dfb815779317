use std::collections::{BTreeMap, VecDeque};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::tools::ToolRegistry;
use super::{FlowNode, Leaf};
use crate::error::{Error, Result};
use crate::llm::{Backend, ChatMessage, CompletionRequest, TokenUsage};
use crate::memory::{check_extension, MemoryEvent, MemoryEventKind, MemoryStore, TokenCounter};
use crate::prompts::{
    build_prompt, parse_action, render_builtin, ActionGrammar, CotType, FewShotExample, PromptInputs, PromptSpec,
};
use crate::types::{Action, ActionSource, AgentId, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSettings {
    pub max_parse_retries: u32,
    pub temperature: f64,
    /// Temperature for candidate drafts that are later voted on.
    pub sc_temperature: f64,
    pub max_tokens: u32,
    pub prompt_budget: usize,
    pub sage_buffer_cap: usize,
    /// Consecutive zero-reward steps before the planner model is consulted.
    pub swift_patience: u32,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings {
            max_parse_retries: 2,
            temperature: 0.0,
            sc_temperature: 0.7,
            max_tokens: 512,
            prompt_budget: 4096,
            sage_buffer_cap: 5,
            swift_patience: 5,
        }
    }
}

/// Per-episode state of the fast/slow controller.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SwiftSageState {
    pub zero_streak: u32,
    pub buffer: VecDeque<String>,
}

impl SwiftSageState {
    /// Updates the stall counter after an environment step. Buffered
    /// (forced) steps do not count.
    pub fn observe(&mut self, reward: f64, source: ActionSource) {
        if source == ActionSource::Forced {
            return;
        }
        if reward == 0.0 {
            self.zero_streak += 1;
        } else {
            self.zero_streak = 0;
        }
    }
}

/// Everything a flow may read or write while choosing one action.
pub struct AgentContext<'a> {
    pub agent: AgentId,
    pub step: u32,
    /// This agent's observations so far; the last one is current.
    pub observations: &'a [Observation],
    pub actions: &'a [Action],
    pub memory: MemoryStore,
    /// Memories of the other agents in the episode, for messaging.
    pub peers: Option<&'a mut BTreeMap<AgentId, MemoryStore>>,
    pub backend: &'a dyn Backend,
    /// Larger model for planning calls; falls back to `backend`.
    pub sage_backend: Option<&'a dyn Backend>,
    pub prompt: &'a PromptSpec,
    pub example_pool: &'a [FewShotExample],
    pub header: &'a str,
    pub grammar: &'a ActionGrammar,
    pub single_step: bool,
    pub tools: &'a ToolRegistry,
    pub settings: &'a FlowSettings,
    pub counter: &'a dyn TokenCounter,
    pub swift: &'a mut SwiftSageState,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmCall {
    pub node: String,
    pub backend: &'static str,
    pub messages: Vec<ChatMessage>,
    pub completions: Vec<String>,
    pub usage: TokenUsage,
}

/// What happened during one flow run, for transcripts and golden tests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowRunRecord {
    pub agent: AgentId,
    pub step: u32,
    pub path: Vec<String>,
    pub calls: Vec<LlmCall>,
    pub events: Vec<MemoryEvent>,
    pub action: Option<Action>,
    pub notes: Vec<String>,
}

impl FlowRunRecord {
    /// Completions drawn, counting each sample of a multi-sample call.
    pub fn samples(&self) -> usize {
        self.calls.iter().map(|c| c.completions.len()).sum()
    }

    pub fn usage(&self) -> TokenUsage {
        self.calls.iter().fold(TokenUsage::default(), |acc, c| acc + c.usage)
    }
}

/// Index-free majority vote: the most frequent answer under the grammar's
/// canonical form, ties going to whichever was sampled first.
pub fn majority_vote<'s>(answers: &'s [String], grammar: &ActionGrammar) -> Option<&'s str> {
    let mut counts: Vec<(String, usize, usize)> = Vec::new();
    for (i, a) in answers.iter().enumerate() {
        let key = grammar.canonical(a);
        match counts.iter_mut().find(|(k, _, _)| *k == key) {
            Some(entry) => entry.1 += 1,
            None => counts.push((key, 1, i)),
        }
    }
    let best = counts.iter().map(|c| c.1).max()?;
    counts
        .iter()
        .find(|c| c.1 == best)
        .map(|c| answers[c.2].as_str())
}

/// Delivers a message from `sender` to `peer` within the current step.
pub fn send_message(
    sender: &mut MemoryStore,
    peers: &mut BTreeMap<AgentId, MemoryStore>,
    peer: &AgentId,
    step: u32,
    text: &str,
) -> Result<()> {
    if peer == sender.agent_id() {
        return Err(Error::Protocol(format!("{peer} cannot message itself")));
    }
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("empty message".into()));
    }
    let inbox = peers
        .get_mut(peer)
        .ok_or_else(|| Error::Protocol(format!("unknown peer {peer}")))?;
    let author = sender.agent_id().clone();
    sender.record(MemoryEventKind::MessageOut, step, text.trim());
    inbox.push(MemoryEvent::new(MemoryEventKind::MessageIn, step, text.trim(), author));
    Ok(())
}

/// Runs `root` for the context's current step. The record's `action` is
/// `None` only for intrinsic-only flows.
pub fn run_flow(root: &FlowNode, ctx: &mut AgentContext<'_>) -> Result<FlowRunRecord> {
    let start = ctx.memory.len();
    let mut runner = Runner {
        record: FlowRunRecord {
            agent: ctx.agent.clone(),
            step: ctx.step,
            path: Vec::new(),
            calls: Vec::new(),
            events: Vec::new(),
            action: None,
            notes: Vec::new(),
        },
        ctx,
        candidates: Vec::new(),
        planned: None,
        subquestions: Vec::new(),
        degrade: false,
    };
    runner.node(root, "")?;
    let mut record = runner.record;
    record.events = runner.ctx.memory.events()[start..].to_vec();
    Ok(record)
}

struct Candidate {
    raw: String,
    parsed: Option<String>,
}

struct Runner<'c, 'a> {
    ctx: &'c mut AgentContext<'a>,
    record: FlowRunRecord,
    candidates: Vec<Candidate>,
    planned: Option<String>,
    subquestions: Vec<String>,
    degrade: bool,
}

fn numbered_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^\s*\d+\s*[.)]\s*(.+?)\s*$").unwrap())
}

fn numbered_lines(text: &str) -> Vec<String> {
    numbered_line_re()
        .captures_iter(text)
        .map(|c| c[1].to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn tool_call_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([A-Za-z_][A-Za-z0-9_]*)\(").unwrap())
}

/// First `name(args)` in `text`, with balanced parentheses in `args`.
fn find_tool_call(text: &str) -> Option<(String, String)> {
    for cap in tool_call_re().captures_iter(text) {
        let open = cap.get(0).unwrap().end();
        let mut depth = 1usize;
        for (i, ch) in text[open..].char_indices() {
            match ch {
                '(' => depth += 1,
                ')' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some((cap[1].to_string(), text[open..open + i].to_string()));
                    }
                }
                _ => {}
            }
        }
    }
    None
}

/// Index of the choice whose name starts the reply, longest name first.
fn match_choice(reply: &str, choices: &[FlowNode]) -> Option<usize> {
    let reply = reply
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    choices
        .iter()
        .enumerate()
        .filter(|(_, c)| {
            let name = c.name().to_lowercase();
            reply.starts_with(&name)
                && reply[name.len()..]
                    .chars()
                    .next()
                    .is_none_or(|ch| !(ch.is_alphanumeric() || ch == '_'))
        })
        .max_by_key(|(i, c)| (c.name().len(), std::cmp::Reverse(*i)))
        .map(|(i, _)| i)
}

impl Runner<'_, '_> {
    fn node(&mut self, node: &FlowNode, parent: &str) -> Result<bool> {
        let path = if parent.is_empty() {
            node.name().to_string()
        } else {
            format!("{parent}/{}", node.name())
        };
        self.record.path.push(path.clone());
        match node {
            FlowNode::Leaf(leaf) => self.leaf(leaf),
            FlowNode::Sequence { children, .. } => {
                for child in children {
                    if self.node(child, &path)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            FlowNode::Decision { name, choices, .. } => {
                let idx = self.decide(name, choices)?;
                self.node(&choices[idx], &path)
            }
        }
    }

    fn leaf(&mut self, leaf: &Leaf) -> Result<bool> {
        if leaf.is_extrinsic() {
            let action = match leaf {
                Leaf::Act => self.act()?,
                Leaf::ExecutePlannedAction => self.execute_planned()?,
                _ => self.swift_sage()?,
            };
            self.record.action = Some(action);
            return Ok(true);
        }
        let before = self.ctx.memory.clone();
        match leaf {
            Leaf::Think => self.think()?,
            Leaf::Reflect => self.reflect()?,
            Leaf::Communicate { peer } => self.communicate(peer.as_ref())?,
            Leaf::ToolUse => self.tool_use()?,
            Leaf::ConsiderAction { samples } => self.consider(*samples)?,
            Leaf::ConsistencyOnDiverseActions => self.vote(),
            Leaf::Decompose => self.decompose()?,
            _ => unreachable!("extrinsic leaves handled above"),
        }
        check_extension(leaf.name(), &before, &self.ctx.memory)?;
        Ok(false)
    }

    fn prompt_with(&self, spec: &PromptSpec, instruction: &str) -> Result<Vec<ChatMessage>> {
        let inputs = PromptInputs {
            spec,
            memory: &self.ctx.memory,
            observations: self.ctx.observations,
            task_header: self.ctx.header,
            budget: self.ctx.settings.prompt_budget,
            counter: self.ctx.counter,
        };
        build_prompt(&inputs, Some(instruction))
    }

    fn prompt(&self, instruction: &str) -> Result<Vec<ChatMessage>> {
        self.prompt_with(self.ctx.prompt, instruction)
    }

    fn request(&self, messages: Vec<ChatMessage>, temperature: f64) -> CompletionRequest {
        let mut req = CompletionRequest::new(messages);
        req.temperature = temperature;
        req.max_tokens = self.ctx.settings.max_tokens;
        req
    }

    fn sample(&mut self, node: &str, messages: Vec<ChatMessage>, sage: bool) -> Result<String> {
        let (backend, label) = match (sage, self.ctx.sage_backend) {
            (true, Some(b)) => (b, "sage"),
            _ => (self.ctx.backend, "main"),
        };
        let req = self.request(messages, self.ctx.settings.temperature);
        let resp = backend.complete(&req)?;
        let Some(text) = resp.samples.first().cloned() else {
            return Err(Error::backend("response carried no samples", None, false));
        };
        self.record.calls.push(LlmCall {
            node: node.into(),
            backend: label,
            messages: req.messages,
            completions: resp.samples,
            usage: resp.usage,
        });
        Ok(text)
    }

    fn emit(&mut self, text: String, source: ActionSource) -> Action {
        let action = Action {
            agent_id: self.ctx.agent.clone(),
            step: self.ctx.step,
            text,
            source,
        };
        self.ctx.memory.record(MemoryEventKind::Action, self.ctx.step, action.text.clone());
        action
    }

    fn fallback_text(&self, raw: Option<&str>) -> String {
        match self.ctx.grammar {
            ActionGrammar::Qa => raw
                .map(str::trim)
                .filter(|r| !r.is_empty())
                .unwrap_or("no answer")
                .to_string(),
            ActionGrammar::Choice { admissible } => admissible.first().cloned().unwrap_or_else(|| "noop".into()),
        }
    }

    fn act(&mut self) -> Result<Action> {
        let spec = if self.degrade {
            let fs_cot = PromptSpec {
                memory_selector: self.ctx.prompt.memory_selector.clone(),
                ..PromptSpec::new(CotType::FsCot, self.ctx.prompt.system_text.clone(), self.ctx.example_pool)
            };
            if fs_cot.validate().is_ok() {
                fs_cot
            } else {
                self.ctx.prompt.clone()
            }
        } else {
            self.ctx.prompt.clone()
        };
        let mut instruction = String::new();
        if !self.subquestions.is_empty() {
            let listed = self
                .subquestions
                .iter()
                .enumerate()
                .map(|(i, q)| format!("{}. {q}", i + 1))
                .collect::<Vec<_>>()
                .join("\n");
            instruction.push_str(&render_builtin("answer_all", &[("subquestions", listed)]));
            instruction.push('\n');
        }
        instruction.push_str(&self.ctx.grammar.format_hint());

        let mut reminder: Option<String> = None;
        let mut last_raw = None;
        for _ in 0..=self.ctx.settings.max_parse_retries {
            let text = match &reminder {
                Some(r) => format!("{instruction}\n{r}"),
                None => instruction.clone(),
            };
            let messages = self.prompt_with(&spec, &text)?;
            let raw = self.sample("act", messages, false)?;
            match parse_action(&raw, self.ctx.grammar) {
                Ok(a) => return Ok(self.emit(a, ActionSource::Extrinsic)),
                Err(f) => {
                    reminder = Some(render_builtin(
                        "format_reminder",
                        &[("reason", f.reason), ("format", self.ctx.grammar.format_hint())],
                    ));
                    last_raw = Some(raw);
                }
            }
        }
        let text = self.fallback_text(last_raw.as_deref());
        warn!(agent = %self.ctx.agent, step = self.ctx.step, "unparseable action, falling back to {text:?}");
        self.record.notes.push(format!("parse retries exhausted; fallback action {text:?}"));
        Ok(self.emit(text, ActionSource::Extrinsic))
    }

    fn think(&mut self) -> Result<()> {
        let messages = self.prompt(&render_builtin("think", &[]))?;
        let raw = self.sample("think", messages, false)?;
        let thought = raw.trim();
        if thought.is_empty() {
            warn!(agent = %self.ctx.agent, step = self.ctx.step, "empty thought");
        }
        self.ctx.memory.record(MemoryEventKind::Thought, self.ctx.step, thought);
        Ok(())
    }

    fn reflect(&mut self) -> Result<()> {
        let instruction = if self.ctx.single_step {
            let draft_prompt = format!("{}\n{}", render_builtin("draft", &[]), self.ctx.grammar.format_hint());
            let messages = self.prompt(&draft_prompt)?;
            let draft = self.sample("reflect", messages, false)?;
            render_builtin("reflect_zero_step", &[("draft", draft.trim().to_string())])
        } else {
            let history = if self.ctx.actions.is_empty() {
                "no actions taken yet.".to_string()
            } else {
                self.ctx
                    .actions
                    .iter()
                    .map(|a| format!("step {}: {}", a.step, a.text))
                    .collect::<Vec<_>>()
                    .join("; ")
            };
            render_builtin("reflect", &[("history", history)])
        };
        let messages = self.prompt(&instruction)?;
        let critique = self.sample("reflect", messages, false)?;
        self.ctx.memory.record(MemoryEventKind::Reflection, self.ctx.step, critique.trim());
        Ok(())
    }

    fn communicate(&mut self, peer: Option<&AgentId>) -> Result<()> {
        let Some(peers) = self.ctx.peers.as_deref() else {
            return Err(Error::Protocol(format!("{} has no peers to message", self.ctx.agent)));
        };
        let peer = match peer {
            Some(p) => p.clone(),
            None => peers
                .keys()
                .find(|k| **k != self.ctx.agent)
                .cloned()
                .ok_or_else(|| Error::Protocol(format!("{} has no peers to message", self.ctx.agent)))?,
        };
        if !peers.contains_key(&peer) && peer != self.ctx.agent {
            return Err(Error::Protocol(format!("unknown peer {peer}")));
        }
        let messages = self.prompt(&render_builtin("communicate", &[("peer", peer.to_string())]))?;
        let raw = self.sample("communicate", messages, false)?;
        if raw.trim().is_empty() {
            warn!(agent = %self.ctx.agent, "empty message not sent");
            self.record.notes.push("empty message not sent".into());
            return Ok(());
        }
        let peers = self.ctx.peers.as_deref_mut().expect("checked above");
        send_message(&mut self.ctx.memory, peers, &peer, self.ctx.step, &raw)
    }

    fn tool_use(&mut self) -> Result<()> {
        if self.ctx.tools.is_empty() {
            return Err(Error::config("tool_use", "tool registry is empty"));
        }
        let messages = self.prompt(&render_builtin("tool", &[("tools", self.ctx.tools.menu())]))?;
        let raw = self.sample("tool_use", messages, false)?;
        let Some((name, args)) = find_tool_call(&raw) else {
            return Ok(());
        };
        let step = self.ctx.step;
        self.ctx.memory.record(MemoryEventKind::ToolCall, step, format!("{name}({args})"));
        let result = match self.ctx.tools.get(&name) {
            Some(tool) => tool.run(&args).unwrap_or_else(|e| format!("error: {e}")),
            None => format!("unknown tool: {name}"),
        };
        self.ctx.memory.record(MemoryEventKind::ToolResult, step, result);
        Ok(())
    }

    fn consider(&mut self, samples: usize) -> Result<()> {
        let messages = self.prompt(&self.ctx.grammar.format_hint())?;
        let requests: Vec<_> = (0..samples)
            .map(|_| self.request(messages.clone(), self.ctx.settings.sc_temperature))
            .collect();
        let mut first_error = None;
        let mut got_any = false;
        for (req, result) in requests.iter().zip(self.ctx.backend.complete_batch(&requests)) {
            match result {
                Ok(resp) => {
                    got_any = true;
                    for raw in &resp.samples {
                        self.candidates.push(Candidate {
                            parsed: parse_action(raw, self.ctx.grammar).ok(),
                            raw: raw.clone(),
                        });
                    }
                    self.record.calls.push(LlmCall {
                        node: "consider_action".into(),
                        backend: "main",
                        messages: req.messages.clone(),
                        completions: resp.samples,
                        usage: resp.usage,
                    });
                }
                Err(e) => {
                    warn!("candidate sample failed: {e}");
                    self.record.notes.push(format!("candidate sample failed: {e}"));
                    first_error.get_or_insert(e);
                }
            }
        }
        match (got_any, first_error) {
            (false, Some(e)) => Err(e),
            _ => Ok(()),
        }
    }

    fn vote(&mut self) {
        let parsed: Vec<String> = self.candidates.iter().filter_map(|c| c.parsed.clone()).collect();
        self.planned = majority_vote(&parsed, self.ctx.grammar).map(str::to_string);
        if self.planned.is_none() {
            self.record.notes.push("no candidate could be parsed".into());
        }
    }

    fn execute_planned(&mut self) -> Result<Action> {
        if let Some(a) = self.planned.take() {
            return Ok(self.emit(a, ActionSource::Extrinsic));
        }
        if let Some(a) = self.candidates.iter().rev().find_map(|c| c.parsed.clone()) {
            return Ok(self.emit(a, ActionSource::Extrinsic));
        }
        if let Some(first) = self.candidates.first() {
            let text = self.fallback_text(Some(&first.raw.clone()));
            self.record.notes.push(format!("no parseable candidate; fallback action {text:?}"));
            return Ok(self.emit(text, ActionSource::Extrinsic));
        }
        self.record.notes.push("nothing planned; acting directly".into());
        self.act()
    }

    fn decompose(&mut self) -> Result<()> {
        let messages = self.prompt(&render_builtin("decompose", &[]))?;
        let raw = self.sample("decompose", messages, false)?;
        let subs = numbered_lines(&raw);
        if subs.is_empty() {
            warn!(agent = %self.ctx.agent, "empty decomposition, answering with few-shot CoT");
            self.record.notes.push("empty decomposition; degraded to FS-CoT".into());
            self.degrade = true;
            return Ok(());
        }
        let listed = subs
            .iter()
            .enumerate()
            .map(|(i, q)| format!("{}. {q}", i + 1))
            .collect::<Vec<_>>()
            .join("\n");
        self.ctx
            .memory
            .record(MemoryEventKind::Plan, self.ctx.step, format!("Sub-questions:\n{listed}"));
        self.subquestions = subs;
        Ok(())
    }

    fn swift_sage(&mut self) -> Result<Action> {
        let settings = self.ctx.settings;
        if self.ctx.swift.buffer.is_empty() && self.ctx.swift.zero_streak >= settings.swift_patience {
            self.ctx.swift.zero_streak = 0;
            let instruction = format!(
                "{}\n{}",
                render_builtin("sage", &[("cap", settings.sage_buffer_cap.to_string())]),
                self.ctx.grammar.format_hint()
            );
            let messages = self.prompt(&instruction)?;
            let raw = self.sample("sage", messages, true)?;
            let buffer: Vec<String> = numbered_lines(&raw).into_iter().take(settings.sage_buffer_cap).collect();
            if buffer.is_empty() {
                self.record.notes.push("planner returned no action buffer; staying with swift".into());
            } else {
                self.ctx.memory.record(MemoryEventKind::Plan, self.ctx.step, raw.trim());
                self.record.notes.push(format!("planner buffered {} actions", buffer.len()));
                self.ctx.swift.buffer.extend(buffer);
            }
        }
        while let Some(next) = self.ctx.swift.buffer.pop_front() {
            if self.ctx.grammar.is_valid(&next) {
                let text = match self.ctx.grammar {
                    ActionGrammar::Choice { admissible } => admissible
                        .iter()
                        .find(|a| a.to_lowercase() == next.trim().to_lowercase())
                        .cloned()
                        .unwrap_or(next),
                    ActionGrammar::Qa => next.trim().to_string(),
                };
                return Ok(self.emit(text, ActionSource::Forced));
            }
            self.record.notes.push(format!("skipped invalid buffered action {next:?}"));
        }
        self.act()
    }

    fn decide(&mut self, name: &str, choices: &[FlowNode]) -> Result<usize> {
        let menu = choices
            .iter()
            .map(|c| format!("{}: {}", c.name(), c.description()))
            .collect::<Vec<_>>()
            .join("\n");
        let base = render_builtin("decision", &[("menu", menu)]);
        let names = choices.iter().map(FlowNode::name).collect::<Vec<_>>().join(", ");
        let mut instruction = base.clone();
        for _ in 0..2 {
            let messages = self.prompt(&instruction)?;
            let reply = self.sample(name, messages, false)?;
            if let Some(i) = match_choice(&reply, choices) {
                return Ok(i);
            }
            let shown: String = reply.trim().chars().take(80).collect();
            instruction = format!(
                "{base}\nYour previous reply \"{shown}\" did not start with an option name. Start your reply with one of: {names}."
            );
        }
        warn!(agent = %self.ctx.agent, "decision reply matched no option; using {}", choices[0].name());
        self.record
            .notes
            .push(format!("decision unmatched; defaulted to {}", choices[0].name()));
        Ok(0)
    }
}
