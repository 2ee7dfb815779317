//! Per-episode agent memory and the intrinsic-function contract.
//!
//! Memory is an append-only event log. Intrinsic functions take the
//! observation and action histories plus the current store and return a new
//! store whose events extend the input; they never emit environment actions.
//! Stores have value semantics so tree search can branch from snapshots.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::types::{Action, AgentId, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryEventKind {
    Observation,
    Action,
    Thought,
    Reflection,
    Plan,
    MessageIn,
    MessageOut,
    ToolCall,
    ToolResult,
}

impl MemoryEventKind {
    pub const ALL: [MemoryEventKind; 9] = [
        MemoryEventKind::Observation,
        MemoryEventKind::Action,
        MemoryEventKind::Thought,
        MemoryEventKind::Reflection,
        MemoryEventKind::Plan,
        MemoryEventKind::MessageIn,
        MemoryEventKind::MessageOut,
        MemoryEventKind::ToolCall,
        MemoryEventKind::ToolResult,
    ];

    /// Kinds an intrinsic function may append.
    pub fn is_intrinsic(self) -> bool {
        !matches!(self, MemoryEventKind::Observation | MemoryEventKind::Action)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEvent {
    pub kind: MemoryEventKind,
    pub step: u32,
    pub text: String,
    pub author: AgentId,
}

impl MemoryEvent {
    pub fn new(kind: MemoryEventKind, step: u32, text: impl Into<String>, author: AgentId) -> Self {
        MemoryEvent {
            kind,
            step,
            text: text.into(),
            author,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MemoryStore {
    agent_id: AgentId,
    events: Vec<MemoryEvent>,
}

impl MemoryStore {
    pub fn new(agent_id: AgentId) -> Self {
        MemoryStore {
            agent_id,
            events: Vec::new(),
        }
    }

    pub fn agent_id(&self) -> &AgentId {
        &self.agent_id
    }

    pub fn events(&self) -> &[MemoryEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn push(&mut self, event: MemoryEvent) {
        self.events.push(event);
    }

    /// A copy of this store with `event` appended.
    pub fn with_event(&self, event: MemoryEvent) -> MemoryStore {
        let mut next = self.clone();
        next.events.push(event);
        next
    }

    pub fn record(&mut self, kind: MemoryEventKind, step: u32, text: impl Into<String>) {
        let author = self.agent_id.clone();
        self.push(MemoryEvent::new(kind, step, text, author));
    }

    pub fn last_of(&self, kind: MemoryEventKind) -> Option<&MemoryEvent> {
        self.events.iter().rev().find(|e| e.kind == kind)
    }

    pub fn snapshot(&self) -> MemorySnapshot {
        MemorySnapshot {
            agent_id: self.agent_id.clone(),
            events: self.events.clone().into(),
        }
    }
}

/// Immutable, cheaply clonable view of a store at one point in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemorySnapshot {
    agent_id: AgentId,
    events: Arc<[MemoryEvent]>,
}

impl MemorySnapshot {
    pub fn restore(&self) -> MemoryStore {
        MemoryStore {
            agent_id: self.agent_id.clone(),
            events: self.events.to_vec(),
        }
    }

    pub fn events(&self) -> &[MemoryEvent] {
        &self.events
    }
}

/// A memory-to-memory transformation.
pub trait IntrinsicFunction {
    fn name(&self) -> &str;

    /// Shown in decision menus.
    fn description(&self) -> &str;

    fn apply(&self, observations: &[Observation], actions: &[Action], memory: &MemoryStore) -> Result<MemoryStore>;
}

/// Applies `function` and checks the contract: the input events are a
/// prefix of the output and nothing appended is an observation or action.
pub fn apply_intrinsic(
    function: &dyn IntrinsicFunction,
    observations: &[Observation],
    actions: &[Action],
    memory: &MemoryStore,
) -> Result<MemoryStore> {
    if let Some(last) = observations.last() {
        if memory.events.iter().any(|e| e.step > last.step) {
            return Err(Error::InvalidInput(format!(
                "memory has events past observation step {}",
                last.step
            )));
        }
    }
    let out = function.apply(observations, actions, memory)?;
    check_extension(function.name(), memory, &out)?;
    Ok(out)
}

/// Verifies `after` only appends intrinsic events to `before`.
pub fn check_extension(name: &str, before: &MemoryStore, after: &MemoryStore) -> Result<()> {
    let n = before.events.len();
    if after.events.len() < n || after.events[..n] != before.events[..] {
        return Err(Error::Contract(format!("intrinsic function {name} rewrote existing memory")));
    }
    if let Some(bad) = after.events[n..].iter().find(|e| !e.kind.is_intrinsic()) {
        return Err(Error::Contract(format!(
            "intrinsic function {name} emitted a {:?} event",
            bad.kind
        )));
    }
    Ok(())
}

/// Leaves memory untouched.
pub struct Identity;

impl IntrinsicFunction for Identity {
    fn name(&self) -> &str {
        "identity"
    }

    fn description(&self) -> &str {
        "Leave memory unchanged."
    }

    fn apply(&self, _: &[Observation], _: &[Action], memory: &MemoryStore) -> Result<MemoryStore> {
        Ok(memory.clone())
    }
}

/// `outer ∘ inner`: applies `inner` first.
pub struct Compose<'a> {
    pub inner: &'a dyn IntrinsicFunction,
    pub outer: &'a dyn IntrinsicFunction,
}

impl IntrinsicFunction for Compose<'_> {
    fn name(&self) -> &str {
        "compose"
    }

    fn description(&self) -> &str {
        "Apply two intrinsic functions in order."
    }

    fn apply(&self, observations: &[Observation], actions: &[Action], memory: &MemoryStore) -> Result<MemoryStore> {
        let mid = apply_intrinsic(self.inner, observations, actions, memory)?;
        apply_intrinsic(self.outer, observations, actions, &mid)
    }
}

/// Estimates how many model tokens a piece of text occupies.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// `ceil(chars / 4)`, used when no model tokenizer is configured.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharQuarterCounter;

impl TokenCounter for CharQuarterCounter {
    fn count(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub events: Vec<MemoryEvent>,
    /// Set when the most recent observation had to be cut from the front.
    pub truncated: bool,
}

/// Selects the most recent events that fit in `budget` tokens.
///
/// Whole steps are dropped oldest first, taking their thoughts and
/// reflections with them. The most recent observation is never dropped; if
/// it alone is over budget its text is cut from the front and the window is
/// flagged.
pub fn recent_window(events: &[MemoryEvent], budget: usize, counter: &dyn TokenCounter) -> Result<Window> {
    if budget == 0 {
        return Err(Error::InvalidInput("window budget must be positive".into()));
    }
    let cost = |evs: &[MemoryEvent]| evs.iter().map(|e| counter.count(&e.text)).sum::<usize>();
    if cost(events) <= budget {
        return Ok(Window {
            events: events.to_vec(),
            truncated: false,
        });
    }

    // Contiguous runs of equal step form the droppable units.
    let mut groups: Vec<&[MemoryEvent]> = Vec::new();
    let mut start = 0;
    for i in 1..=events.len() {
        if i == events.len() || events[i].step != events[start].step {
            groups.push(&events[start..i]);
            start = i;
        }
    }
    let mut total: usize = groups.iter().map(|g| cost(g)).sum();
    let mut first = 0;
    while total > budget && first + 1 < groups.len() {
        total -= cost(groups[first]);
        first += 1;
    }
    let mut kept: Vec<MemoryEvent> = groups[first..].iter().flat_map(|g| g.iter().cloned()).collect();
    if total <= budget {
        return Ok(Window {
            events: kept,
            truncated: false,
        });
    }

    let anchor = kept.iter().rposition(|e| e.kind == MemoryEventKind::Observation);
    let mut i = 0;
    let mut anchor_idx = anchor;
    while total > budget && i < kept.len() {
        if Some(i) == anchor_idx {
            i += 1;
            continue;
        }
        total -= counter.count(&kept[i].text);
        kept.remove(i);
        if let Some(a) = anchor_idx.as_mut() {
            if *a > i {
                *a -= 1;
            }
        }
    }
    let mut truncated = false;
    if total > budget {
        if let Some(a) = anchor_idx {
            let text = &kept[a].text;
            kept[a].text = front_truncate(text, budget, counter);
            truncated = true;
            warn!(budget, "most recent observation truncated to fit the context budget");
        }
    }
    Ok(Window {
        events: kept,
        truncated,
    })
}

/// Longest suffix of `text` (on char boundaries) that fits `budget`.
fn front_truncate(text: &str, budget: usize, counter: &dyn TokenCounter) -> String {
    let offsets: Vec<usize> = text.char_indices().map(|(i, _)| i).collect();
    // Suffix cost is non-increasing as the start moves right.
    let (mut lo, mut hi) = (0usize, offsets.len());
    while lo < hi {
        let mid = (lo + hi) / 2;
        if counter.count(&text[offsets[mid]..]) <= budget {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    if lo == offsets.len() {
        String::new()
    } else {
        text[offsets[lo]..].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent() -> AgentId {
        AgentId::from("a")
    }

    fn ev(kind: MemoryEventKind, step: u32, text: &str) -> MemoryEvent {
        MemoryEvent::new(kind, step, text, agent())
    }

    struct Append(MemoryEventKind, &'static str);

    impl IntrinsicFunction for Append {
        fn name(&self) -> &str {
            self.1
        }
        fn description(&self) -> &str {
            "append"
        }
        fn apply(&self, _: &[Observation], _: &[Action], m: &MemoryStore) -> Result<MemoryStore> {
            Ok(m.with_event(ev(self.0, 0, self.1)))
        }
    }

    struct Rewrite;

    impl IntrinsicFunction for Rewrite {
        fn name(&self) -> &str {
            "rewrite"
        }
        fn description(&self) -> &str {
            "bad"
        }
        fn apply(&self, _: &[Observation], _: &[Action], m: &MemoryStore) -> Result<MemoryStore> {
            Ok(MemoryStore::new(m.agent_id().clone()))
        }
    }

    fn seeded() -> MemoryStore {
        let mut m = MemoryStore::new(agent());
        m.record(MemoryEventKind::Observation, 0, "start");
        m
    }

    #[test]
    fn identity_is_noop() {
        let m = seeded();
        let out = apply_intrinsic(&Identity, &[], &[], &m).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn action_events_violate_contract() {
        let err = apply_intrinsic(&Append(MemoryEventKind::Action, "go"), &[], &[], &seeded()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let err = apply_intrinsic(&Rewrite, &[], &[], &seeded()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn composition_order_and_associativity() {
        let (a, b, c) = (
            Append(MemoryEventKind::Thought, "one"),
            Append(MemoryEventKind::Plan, "two"),
            Append(MemoryEventKind::Reflection, "three"),
        );
        let m = seeded();
        let ab = Compose { inner: &a, outer: &b };
        let out = apply_intrinsic(&ab, &[], &[], &m).unwrap();
        let texts: Vec<_> = out.events().iter().map(|e| e.text.as_str()).collect();
        assert_eq!(texts, ["start", "one", "two"]);

        let left = Compose { inner: &ab, outer: &c };
        let bc = Compose { inner: &b, outer: &c };
        let right = Compose { inner: &a, outer: &bc };
        assert_eq!(
            apply_intrinsic(&left, &[], &[], &m).unwrap(),
            apply_intrinsic(&right, &[], &[], &m).unwrap()
        );
        // value semantics: the input is untouched
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn snapshot_roundtrip_and_isolation() {
        let mut m = seeded();
        for i in 0..9 {
            m.record(MemoryEventKind::Thought, 0, format!("t{i}"));
        }
        let snap = m.snapshot();
        assert_eq!(snap.restore(), m);
        let mut restored = snap.restore();
        restored.record(MemoryEventKind::Thought, 0, "extra");
        assert_eq!(snap.events().len(), 10);
        assert_eq!(snap.restore(), m);
        let snaps: Vec<_> = (0..1000).map(|_| m.snapshot()).collect();
        assert!(snaps.iter().all(|s| *s == snap));
    }

    fn ten_steps() -> Vec<MemoryEvent> {
        let mut evs = Vec::new();
        for s in 1..=10u32 {
            evs.push(ev(MemoryEventKind::Observation, s, &format!("obs {s} here")));
            evs.push(ev(MemoryEventKind::Action, s, &format!("act {s}")));
        }
        evs
    }

    #[test]
    fn window_keeps_everything_that_fits() {
        let evs = ten_steps();
        let w = recent_window(&evs, 1000, &WhitespaceCounter).unwrap();
        assert_eq!(w.events, evs);
        assert!(!w.truncated);
    }

    #[test]
    fn window_drops_oldest_steps() {
        let evs = ten_steps();
        // whitespace oracle: every step costs 3 + 2 = 5 tokens
        let per_step: usize = evs[..2].iter().map(|e| e.text.split_whitespace().count()).sum();
        assert_eq!(per_step, 5);
        let w = recent_window(&evs, 4 * per_step, &WhitespaceCounter).unwrap();
        let steps: Vec<u32> = w.events.iter().map(|e| e.step).collect();
        assert_eq!(steps, [7, 7, 8, 8, 9, 9, 10, 10]);
        // one token short of four steps leaves three
        let w = recent_window(&evs, 4 * per_step - 1, &WhitespaceCounter).unwrap();
        assert_eq!(w.events.first().unwrap().step, 8);
    }

    #[test]
    fn thoughts_go_with_their_step() {
        let mut evs = ten_steps();
        evs.insert(1, ev(MemoryEventKind::Thought, 1, "thinking hard"));
        let w = recent_window(&evs, 45, &WhitespaceCounter).unwrap();
        assert!(w.events.iter().all(|e| e.step > 1));
    }

    #[test]
    fn oversized_last_observation_is_front_truncated() {
        let evs = vec![
            ev(MemoryEventKind::Observation, 1, "old"),
            ev(MemoryEventKind::Observation, 2, "a b c d e f g h"),
        ];
        let w = recent_window(&evs, 3, &WhitespaceCounter).unwrap();
        assert!(w.truncated);
        assert_eq!(w.events.len(), 1);
        assert_eq!(w.events[0].text.split_whitespace().collect::<Vec<_>>(), ["f", "g", "h"]);
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(recent_window(&[], 0, &WhitespaceCounter).is_err());
    }

    #[test]
    fn char_quarter_rounds_up() {
        assert_eq!(CharQuarterCounter.count(""), 0);
        assert_eq!(CharQuarterCounter.count("abcde"), 2);
    }
}
