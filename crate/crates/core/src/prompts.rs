//! Prompt generation and action parsing.
//!
//! `build_prompt` turns memory plus the observation history into chat
//! messages; `parse_action` maps a raw completion back to an environment
//! action under a task grammar.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::ChatMessage;
use crate::memory::{recent_window, MemoryEvent, MemoryEventKind, MemoryStore, TokenCounter};
use crate::types::Observation;

/// Appended to the final user message under zero-shot chain of thought.
pub const ZS_COT_TRIGGER: &str = "Let's think step-by-step";

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

/// A text template with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    segments: Vec<Segment>,
    required: BTreeSet<String>,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

impl PromptTemplate {
    pub fn parse(name: impl Into<String>, text: &str) -> PromptTemplate {
        let mut segments = Vec::new();
        let mut required = BTreeSet::new();
        let mut last = 0;
        for cap in placeholder_re().captures_iter(text) {
            let whole = cap.get(0).unwrap();
            if whole.start() > last {
                segments.push(Segment::Literal(text[last..whole.start()].to_string()));
            }
            let key = cap[1].to_string();
            required.insert(key.clone());
            segments.push(Segment::Placeholder(key));
            last = whole.end();
        }
        if last < text.len() {
            segments.push(Segment::Literal(text[last..].to_string()));
        }
        PromptTemplate {
            name: name.into(),
            segments,
            required,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn required_placeholders(&self) -> &BTreeSet<String> {
        &self.required
    }

    pub fn render(&self, bindings: &HashMap<&str, String>) -> Result<String> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Placeholder(key) => match bindings.get(key.as_str()) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(Error::InvalidInput(format!(
                            "template {}: unbound placeholder {key}",
                            self.name
                        )))
                    }
                },
            }
        }
        Ok(out)
    }
}

/// Built-in templates shipped with the crate.
pub fn template(name: &str) -> &'static PromptTemplate {
    static TEMPLATES: OnceLock<HashMap<&'static str, PromptTemplate>> = OnceLock::new();
    let map = TEMPLATES.get_or_init(|| {
        let raw: [(&str, &str); 13] = [
            ("system", include_str!("../assets/templates/system.txt")),
            ("think", include_str!("../assets/templates/think.txt")),
            ("reflect", include_str!("../assets/templates/reflect.txt")),
            ("reflect_zero_step", include_str!("../assets/templates/reflect_zero_step.txt")),
            ("draft", include_str!("../assets/templates/draft.txt")),
            ("decision", include_str!("../assets/templates/decision.txt")),
            ("tool", include_str!("../assets/templates/tool.txt")),
            ("decompose", include_str!("../assets/templates/decompose.txt")),
            ("answer_all", include_str!("../assets/templates/answer_all.txt")),
            ("sage", include_str!("../assets/templates/sage.txt")),
            ("communicate", include_str!("../assets/templates/communicate.txt")),
            ("rate", include_str!("../assets/templates/rate.txt")),
            ("format_reminder", include_str!("../assets/templates/format_reminder.txt")),
        ];
        raw.into_iter()
            .map(|(k, v)| (k, PromptTemplate::parse(k, v.trim_end())))
            .collect()
    });
    map.get(name).unwrap_or_else(|| panic!("no built-in template {name}"))
}

/// Renders a built-in template; panics only on a programming error.
pub fn render_builtin(name: &str, bindings: &[(&str, String)]) -> String {
    let map: HashMap<&str, String> = bindings.iter().cloned().collect();
    template(name).render(&map).expect("built-in template bindings")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
    pub answer: String,
}

pub fn load_few_shot(jsonl: &str) -> Result<Vec<FewShotExample>> {
    jsonl
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::InvalidInput(format!("few-shot line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CotType {
    #[default]
    #[serde(rename = "none", alias = "zero_shot", alias = "direct")]
    None,
    #[serde(rename = "zs_cot", alias = "zs-cot")]
    ZsCot,
    #[serde(rename = "fs", alias = "few_shot")]
    Fs,
    #[serde(rename = "fs_cot", alias = "fs-cot")]
    FsCot,
}

/// Which memory events are rendered into prompts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemorySelector {
    pub kinds: BTreeSet<MemoryEventKind>,
    /// Render only the newest reflection.
    pub latest_reflection_only: bool,
}

impl Default for MemorySelector {
    fn default() -> Self {
        MemorySelector {
            kinds: MemoryEventKind::ALL.into_iter().collect(),
            latest_reflection_only: false,
        }
    }
}

impl MemorySelector {
    pub fn includes(&self, kind: MemoryEventKind) -> bool {
        self.kinds.contains(&kind)
    }

    pub fn select(&self, events: &[MemoryEvent]) -> Vec<MemoryEvent> {
        let newest_reflection = events.iter().rposition(|e| e.kind == MemoryEventKind::Reflection);
        events
            .iter()
            .enumerate()
            .filter(|(i, e)| {
                self.includes(e.kind)
                    && !(self.latest_reflection_only
                        && e.kind == MemoryEventKind::Reflection
                        && Some(*i) != newest_reflection)
            })
            .map(|(_, e)| e.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub cot_type: CotType,
    pub system_text: String,
    pub examples: Vec<FewShotExample>,
    pub memory_selector: MemorySelector,
}

impl PromptSpec {
    /// A spec for `cot_type` using the task's example pool; plain few-shot
    /// drops the example thoughts.
    pub fn new(cot_type: CotType, system_text: impl Into<String>, pool: &[FewShotExample]) -> Self {
        let examples = match cot_type {
            CotType::None | CotType::ZsCot => Vec::new(),
            CotType::Fs => pool
                .iter()
                .map(|e| FewShotExample {
                    thought: None,
                    ..e.clone()
                })
                .collect(),
            CotType::FsCot => pool.to_vec(),
        };
        PromptSpec {
            cot_type,
            system_text: system_text.into(),
            examples,
            memory_selector: MemorySelector::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.cot_type {
            CotType::Fs | CotType::FsCot if self.examples.is_empty() => {
                Err(Error::InvalidInput(format!("{:?} prompt needs few-shot examples", self.cot_type)))
            }
            CotType::Fs if self.examples.iter().any(|e| e.thought.is_some()) => {
                Err(Error::InvalidInput("plain few-shot examples must not carry thoughts".into()))
            }
            CotType::FsCot
                if self
                    .examples
                    .iter()
                    .any(|e| e.thought.as_deref().is_none_or(|t| t.trim().is_empty())) =>
            {
                Err(Error::InvalidInput("few-shot CoT examples need thoughts".into()))
            }
            _ => Ok(()),
        }
    }

    fn render_system(&self, task_header: &str) -> String {
        let mut out = self.system_text.clone();
        if !task_header.is_empty() {
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            out.push_str(task_header);
        }
        if !self.examples.is_empty() {
            out.push_str("\n\nHere are some examples:");
            for ex in &self.examples {
                out.push_str("\n\nQuestion: ");
                out.push_str(&ex.question);
                if let (CotType::FsCot, Some(t)) = (self.cot_type, &ex.thought) {
                    out.push_str("\nThought: ");
                    out.push_str(t);
                }
                out.push_str("\nAnswer: ");
                out.push_str(&ex.answer);
            }
        }
        out
    }
}

/// Everything `build_prompt` reads.
pub struct PromptInputs<'a> {
    pub spec: &'a PromptSpec,
    pub memory: &'a MemoryStore,
    pub observations: &'a [Observation],
    pub task_header: &'a str,
    pub budget: usize,
    pub counter: &'a dyn TokenCounter,
}

fn render_event(e: &MemoryEvent) -> ChatMessage {
    match e.kind {
        MemoryEventKind::Observation => ChatMessage::user(e.text.clone()),
        MemoryEventKind::Action => ChatMessage::assistant(e.text.clone()),
        MemoryEventKind::Thought => ChatMessage::assistant(format!("Thought: {}", e.text)),
        MemoryEventKind::Reflection => ChatMessage::assistant(format!("Reflection: {}", e.text)),
        MemoryEventKind::Plan => ChatMessage::assistant(format!("Plan: {}", e.text)),
        MemoryEventKind::MessageIn => ChatMessage::user(format!("Message from {}: {}", e.author, e.text)),
        MemoryEventKind::MessageOut => ChatMessage::assistant(format!("Message sent: {}", e.text)),
        MemoryEventKind::ToolCall => ChatMessage::assistant(format!("Tool call: {}", e.text)),
        MemoryEventKind::ToolResult => ChatMessage::user(format!("Tool result: {}", e.text)),
    }
}

fn push_merged(messages: &mut Vec<ChatMessage>, msg: ChatMessage) {
    match messages.last_mut() {
        Some(last) if last.role == msg.role => {
            last.content.push_str("\n\n");
            last.content.push_str(&msg.content);
        }
        _ => messages.push(msg),
    }
}

/// Renders the prompt for one model call.
///
/// Layout: one system message (system text, task header, examples), then
/// the memory window as alternating chat turns, then the current
/// observation if memory does not already hold it. `instruction` and the
/// zero-shot CoT trigger are appended to the final user turn.
pub fn build_prompt(inputs: &PromptInputs<'_>, instruction: Option<&str>) -> Result<Vec<ChatMessage>> {
    let spec = inputs.spec;
    spec.validate()?;
    let counter = inputs.counter;
    let system = spec.render_system(inputs.task_header);

    let selected = spec.memory_selector.select(inputs.memory.events());
    let current = inputs.observations.last();
    let obs_in_memory = current.is_some_and(|o| {
        selected
            .iter()
            .any(|e| e.kind == MemoryEventKind::Observation && e.step == o.step)
    });
    let mut tail = instruction.unwrap_or("").to_string();
    if spec.cot_type == CotType::ZsCot {
        if !tail.is_empty() {
            tail.push('\n');
        }
        tail.push_str(ZS_COT_TRIGGER);
    }

    let mut fixed = counter.count(&system) + counter.count(&tail);
    if let (Some(o), false) = (current, obs_in_memory) {
        fixed += counter.count(&o.text);
    }
    if fixed >= inputs.budget && !(fixed == inputs.budget && selected.is_empty()) {
        return Err(Error::PromptTooLarge {
            tokens: fixed,
            budget: inputs.budget,
        });
    }
    let window = if selected.is_empty() {
        Vec::new()
    } else {
        recent_window(&selected, inputs.budget - fixed, counter)?.events
    };
    let used = fixed + window.iter().map(|e| counter.count(&e.text)).sum::<usize>();
    if used > inputs.budget {
        return Err(Error::PromptTooLarge {
            tokens: used,
            budget: inputs.budget,
        });
    }

    let mut messages = vec![ChatMessage::system(system)];
    for e in &window {
        push_merged(&mut messages, render_event(e));
    }
    if let (Some(o), false) = (current, obs_in_memory) {
        push_merged(&mut messages, ChatMessage::user(o.text.clone()));
    }
    if !tail.is_empty() {
        push_merged(&mut messages, ChatMessage::user(tail));
    } else if messages.last().is_some_and(|m| m.role != crate::llm::Role::User) {
        push_merged(&mut messages, ChatMessage::user("Now give your answer."));
    }
    Ok(messages)
}

/// How raw completions map to environment actions for a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionGrammar {
    /// Free answer after an `Answer:` marker, falling back to the last number.
    Qa,
    /// One of a fixed list of commands.
    Choice { admissible: Vec<String> },
}

impl ActionGrammar {
    pub fn choice<I, S>(actions: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ActionGrammar::Choice {
            admissible: actions.into_iter().map(Into::into).collect(),
        }
    }

    /// One-line format instruction for prompts and retry reminders.
    pub fn format_hint(&self) -> String {
        match self {
            ActionGrammar::Qa => "End your reply with a line of the form 'Answer: <answer>'.".into(),
            ActionGrammar::Choice { admissible } => format!(
                "End your reply with one of these actions on its own line: {}.",
                admissible.join(", ")
            ),
        }
    }

    /// Normal form used for equality (voting, validity checks).
    pub fn canonical(&self, text: &str) -> String {
        match self {
            ActionGrammar::Qa => canonical_answer(text),
            ActionGrammar::Choice { .. } => text.trim().to_lowercase(),
        }
    }

    /// True when `text` is exactly an admissible action (after canonicalisation).
    pub fn is_valid(&self, text: &str) -> bool {
        match self {
            ActionGrammar::Qa => !canonical_answer(text).is_empty(),
            ActionGrammar::Choice { admissible } => {
                let t = text.trim().to_lowercase();
                admissible.iter().any(|a| a.to_lowercase() == t)
            }
        }
    }

    /// How an agent would write `action` so that parsing recovers it.
    pub fn render(&self, action: &str) -> String {
        match self {
            ActionGrammar::Qa => format!("Answer: {action}"),
            ActionGrammar::Choice { .. } => action.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub reason: String,
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").unwrap())
}

/// Canonical form of an answer string: commas, currency signs and trailing
/// punctuation stripped; integral numbers printed as integers.
pub fn canonical_answer(raw: &str) -> String {
    let mut s = raw.trim().trim_matches('*').trim();
    s = s.trim_end_matches(['.', ',', ';', ':', '!', '?']).trim();
    let cleaned: String = s.chars().filter(|c| *c != ',' && *c != '$').collect();
    let cleaned = cleaned.trim();
    if let Ok(v) = cleaned.parse::<f64>() {
        if v.is_finite() && !cleaned.contains(['e', 'E']) {
            if v.fract() == 0.0 && v.abs() < 9.0e15 {
                return format!("{}", v as i64);
            }
            return format!("{v}");
        }
    }
    s.to_string()
}

/// Extracts an action from a raw completion under `grammar`.
pub fn parse_action(raw: &str, grammar: &ActionGrammar) -> Result<String, ParseFailure> {
    match grammar {
        ActionGrammar::Qa => parse_qa(raw),
        ActionGrammar::Choice { admissible } => parse_choice(raw, admissible),
    }
}

fn parse_qa(raw: &str) -> Result<String, ParseFailure> {
    // ASCII lowercasing keeps byte offsets aligned with `raw`.
    let lower = raw.to_ascii_lowercase();
    if let Some(pos) = lower.rfind("answer:") {
        let rest = &raw[pos + "answer:".len()..];
        let line = rest.trim_start().lines().next().unwrap_or("");
        let ans = canonical_answer(line);
        if !ans.is_empty() {
            return Ok(ans);
        }
    }
    match number_re().find_iter(raw).last() {
        Some(m) => Ok(canonical_answer(m.as_str())),
        None => Err(ParseFailure {
            reason: "no 'Answer:' marker and no number".into(),
        }),
    }
}

fn parse_choice(raw: &str, admissible: &[String]) -> Result<String, ParseFailure> {
    let Some(line) = raw.lines().rev().map(str::trim).find(|l| !l.is_empty()) else {
        return Err(ParseFailure {
            reason: "empty reply".into(),
        });
    };
    let line = line.to_lowercase();
    let line = line.trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace());
    if let Some(a) = admissible.iter().find(|a| a.to_lowercase() == line) {
        return Ok(a.clone());
    }
    // Otherwise the admissible action mentioned last on the line wins;
    // among actions ending at the same place the longer one.
    admissible
        .iter()
        .filter_map(|a| {
            let al = a.to_lowercase();
            line.rfind(&al).map(|p| (p + al.len(), al.len(), a))
        })
        .max_by_key(|&(end, len, _)| (end, len))
        .map(|(_, _, a)| a.clone())
        .ok_or_else(|| ParseFailure {
            reason: "no admissible action".into(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::WhitespaceCounter;
    use crate::types::AgentId;
    use proptest::prelude::*;

    fn agent() -> AgentId {
        AgentId::from("a")
    }

    fn inputs<'a>(spec: &'a PromptSpec, mem: &'a MemoryStore, obs: &'a [Observation]) -> PromptInputs<'a> {
        PromptInputs {
            spec,
            memory: mem,
            observations: obs,
            task_header: "",
            budget: 10_000,
            counter: &WhitespaceCounter,
        }
    }

    fn examples() -> Vec<FewShotExample> {
        vec![
            FewShotExample {
                question: "1+1?".into(),
                thought: Some("one plus one is two".into()),
                answer: "2".into(),
            },
            FewShotExample {
                question: "2+3?".into(),
                thought: Some("two plus three is five".into()),
                answer: "5".into(),
            },
        ]
    }

    #[test]
    fn template_render_and_unbound() {
        let t = PromptTemplate::parse("t", "Hello {{ name }}, {{greeting}}!");
        assert_eq!(t.required_placeholders().len(), 2);
        let mut b = HashMap::new();
        b.insert("name", "Ada".to_string());
        assert!(t.render(&b).is_err());
        b.insert("greeting", "welcome".to_string());
        assert_eq!(t.render(&b).unwrap(), "Hello Ada, welcome!");
    }

    #[test]
    fn builtin_templates_load() {
        assert!(template("decision").required_placeholders().contains("menu"));
        assert!(render_builtin("rate", &[]).starts_with("Rate this state 0-10"));
    }

    #[test]
    fn minimal_prompt_is_system_plus_observation() {
        let spec = PromptSpec::new(CotType::None, "sys", &[]);
        let mem = MemoryStore::new(agent());
        let obs = [Observation::new(agent(), 0, "What is 2+2?")];
        let msgs = build_prompt(&inputs(&spec, &mem, &obs), None).unwrap();
        assert_eq!(msgs, vec![ChatMessage::system("sys"), ChatMessage::user("What is 2+2?")]);
    }

    #[test]
    fn zs_cot_appends_trigger() {
        let spec = PromptSpec::new(CotType::ZsCot, "sys", &examples());
        let mem = MemoryStore::new(agent());
        let obs = [Observation::new(agent(), 0, "What is 2+2?")];
        let msgs = build_prompt(&inputs(&spec, &mem, &obs), None).unwrap();
        assert!(msgs.last().unwrap().content.ends_with("Let's think step-by-step"));
        assert!(spec.examples.is_empty());
    }

    #[test]
    fn fs_cot_renders_thoughts_before_question() {
        let spec = PromptSpec::new(CotType::FsCot, "sys", &examples());
        let mem = MemoryStore::new(agent());
        let obs = [Observation::new(agent(), 0, "What is 7+1?")];
        let msgs = build_prompt(&inputs(&spec, &mem, &obs), None).unwrap();
        let golden = "sys\n\nHere are some examples:\n\nQuestion: 1+1?\nThought: one plus one is two\nAnswer: 2\n\nQuestion: 2+3?\nThought: two plus three is five\nAnswer: 5";
        assert_eq!(msgs[0].content, golden);
        assert_eq!(msgs[1], ChatMessage::user("What is 7+1?"));

        let fs = PromptSpec::new(CotType::Fs, "sys", &examples());
        let msgs = build_prompt(&inputs(&fs, &mem, &obs), None).unwrap();
        assert!(!msgs[0].content.contains("Thought:"));
    }

    #[test]
    fn spec_validation() {
        assert!(PromptSpec::new(CotType::Fs, "s", &[]).validate().is_err());
        let mut spec = PromptSpec::new(CotType::FsCot, "s", &examples());
        spec.examples[0].thought = None;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn memory_rendering_and_latest_reflection() {
        let mut spec = PromptSpec::new(CotType::None, "sys", &[]);
        spec.memory_selector.latest_reflection_only = true;
        let mut mem = MemoryStore::new(agent());
        mem.record(MemoryEventKind::Observation, 0, "room");
        mem.record(MemoryEventKind::Reflection, 0, "old reflection");
        mem.record(MemoryEventKind::Action, 0, "go forward");
        mem.record(MemoryEventKind::Observation, 1, "wall");
        mem.record(MemoryEventKind::Reflection, 1, "new reflection");
        let obs = [Observation::new(agent(), 0, "room"), Observation::new(agent(), 1, "wall")];
        let msgs = build_prompt(&inputs(&spec, &mem, &obs), None).unwrap();
        let all: String = msgs.iter().map(|m| m.content.clone()).collect();
        assert!(!all.contains("old reflection"));
        assert!(all.contains("Reflection: new reflection"));
        assert_eq!(all.matches("wall").count(), 1);
        assert_eq!(msgs.last().unwrap().role, crate::llm::Role::User);
    }

    #[test]
    fn prompt_too_large() {
        let spec = PromptSpec::new(CotType::None, "a b c d e f", &[]);
        let mem = MemoryStore::new(agent());
        let obs = [Observation::new(agent(), 0, "x y")];
        let mut inp = inputs(&spec, &mem, &obs);
        inp.budget = 5;
        assert!(matches!(build_prompt(&inp, None), Err(Error::PromptTooLarge { .. })));
    }

    #[test]
    fn qa_parsing() {
        let qa = ActionGrammar::Qa;
        assert_eq!(parse_action("…so the result is 42. Answer: 42", &qa).unwrap(), "42");
        assert_eq!(parse_action("It is 1,234 apples.", &qa).unwrap(), "1234");
        assert_eq!(parse_action("Answer: $72.00.", &qa).unwrap(), "72");
        assert_eq!(parse_action("answer: 3\nAnswer: 5", &qa).unwrap(), "5");
        assert!(parse_action("no idea", &qa).is_err());
    }

    #[test]
    fn choice_parsing() {
        let ipd = ActionGrammar::choice(["cooperate", "defect"]);
        assert_eq!(parse_action("I will defect", &ipd).unwrap(), "defect");
        assert_eq!(parse_action("Thinking...\nCOOPERATE.", &ipd).unwrap(), "cooperate");
        let grid = ActionGrammar::choice(["turn left", "turn right", "go forward", "pick up", "drop", "toggle"]);
        let err = parse_action("gibberish", &grid).unwrap_err();
        assert_eq!(err.reason, "no admissible action");
        assert_eq!(parse_action("Action: go forward", &grid).unwrap(), "go forward");
    }

    #[test]
    fn canonicalisation() {
        assert_eq!(canonical_answer("72.0"), "72");
        assert_eq!(canonical_answer(" 3,600 "), "3600");
        assert_eq!(canonical_answer("-5."), "-5");
        assert_eq!(canonical_answer("0.25"), "0.25");
        assert_eq!(canonical_answer("Paris."), "Paris");
    }

    proptest! {
        #[test]
        fn parse_never_panics(s in "\\PC*") {
            let _ = parse_action(&s, &ActionGrammar::Qa);
            let _ = parse_action(&s, &ActionGrammar::choice(["go", "stop"]));
        }

        #[test]
        fn qa_roundtrip(n in -100_000i64..100_000) {
            let g = ActionGrammar::Qa;
            let a = n.to_string();
            prop_assert_eq!(parse_action(&g.render(&a), &g).unwrap(), a);
        }

        #[test]
        fn choice_roundtrip(i in 0usize..6) {
            let acts = ["turn left", "turn right", "go forward", "pick up", "drop", "toggle"];
            let g = ActionGrammar::choice(acts);
            prop_assert_eq!(parse_action(&g.render(acts[i]), &g).unwrap(), acts[i]);
        }

        #[test]
        fn rendering_is_deterministic(name in "[a-z]{0,12}", greet in "[ -~]{0,20}") {
            let t = PromptTemplate::parse("t", "{{name}}:{{greet}}");
            let mut b = HashMap::new();
            b.insert("name", name.clone());
            b.insert("greet", greet.clone());
            prop_assert_eq!(t.render(&b).unwrap(), t.render(&b).unwrap());
        }
    }
}
