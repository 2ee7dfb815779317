//! Flow trees: how one agent turns memory and observations into an action.
//!
//! A flow is a tree of sequential and decision nodes over leaf functions.
//! Intrinsic leaves only append to memory; extrinsic leaves (`Act`,
//! `ExecutePlannedAction`, `SwiftSage`) end the flow with an action.

pub mod config;
mod run;
pub mod tools;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::types::AgentId;

pub use run::{
    majority_vote, run_flow, send_message, AgentContext, FlowRunRecord, FlowSettings, LlmCall, SwiftSageState,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Leaf {
    Think,
    Reflect,
    Act,
    /// Sends one message to `peer`, or to the first other agent when unset.
    Communicate {
        peer: Option<AgentId>,
    },
    ToolUse,
    /// Samples `samples` candidate actions without executing them.
    ConsiderAction {
        samples: usize,
    },
    /// Majority vote over the candidates gathered so far.
    ConsistencyOnDiverseActions,
    ExecutePlannedAction,
    /// Splits the question into numbered sub-questions.
    Decompose,
    /// Small-model acting with a large-model planner on stalls.
    SwiftSage,
}

impl Leaf {
    pub fn name(&self) -> &'static str {
        match self {
            Leaf::Think => "think",
            Leaf::Reflect => "reflect",
            Leaf::Act => "act",
            Leaf::Communicate { .. } => "communicate",
            Leaf::ToolUse => "tool_use",
            Leaf::ConsiderAction { .. } => "consider_action",
            Leaf::ConsistencyOnDiverseActions => "consistency_on_diverse_actions",
            Leaf::ExecutePlannedAction => "execute_planned_action",
            Leaf::Decompose => "decompose",
            Leaf::SwiftSage => "swift_sage",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Leaf::Think => "write a high-level thought about the situation before acting",
            Leaf::Reflect => "reflect on past actions and plan improvements",
            Leaf::Act => "answer or act directly",
            Leaf::Communicate { .. } => "send a message to another agent",
            Leaf::ToolUse => "call a tool such as a calculator",
            Leaf::ConsiderAction { .. } => "draft a candidate action without executing it",
            Leaf::ConsistencyOnDiverseActions => "pick the most consistent candidate action",
            Leaf::ExecutePlannedAction => "execute the chosen candidate action",
            Leaf::Decompose => "split the question into simpler sub-questions",
            Leaf::SwiftSage => "act quickly, calling a planner when progress stalls",
        }
    }

    pub fn is_extrinsic(&self) -> bool {
        matches!(self, Leaf::Act | Leaf::ExecutePlannedAction | Leaf::SwiftSage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum FlowNode {
    Sequence {
        name: String,
        description: String,
        children: Vec<FlowNode>,
    },
    Decision {
        name: String,
        description: String,
        choices: Vec<FlowNode>,
    },
    Leaf(Leaf),
}

impl FlowNode {
    /// A sequence named after its children, e.g. `think_then_act`.
    pub fn sequence(children: Vec<FlowNode>) -> FlowNode {
        let name = children.iter().map(|c| c.name().to_string()).collect::<Vec<_>>().join("_then_");
        let description = children.iter().map(|c| c.description().to_string()).collect::<Vec<_>>().join(", then ");
        FlowNode::Sequence {
            name,
            description,
            children,
        }
    }

    pub fn named_sequence(name: &str, description: &str, children: Vec<FlowNode>) -> FlowNode {
        FlowNode::Sequence {
            name: name.into(),
            description: description.into(),
            children,
        }
    }

    pub fn decision(choices: Vec<FlowNode>) -> FlowNode {
        FlowNode::Decision {
            name: "decision".into(),
            description: "choose how to proceed".into(),
            choices,
        }
    }

    pub fn leaf(leaf: Leaf) -> FlowNode {
        FlowNode::Leaf(leaf)
    }

    pub fn name(&self) -> &str {
        match self {
            FlowNode::Sequence { name, .. } | FlowNode::Decision { name, .. } => name,
            FlowNode::Leaf(l) => l.name(),
        }
    }

    pub fn description(&self) -> &str {
        match self {
            FlowNode::Sequence { description, .. } | FlowNode::Decision { description, .. } => description,
            FlowNode::Leaf(l) => l.description(),
        }
    }

    /// True when every way through this node ends with an action.
    pub fn always_acts(&self) -> bool {
        match self {
            FlowNode::Leaf(l) => l.is_extrinsic(),
            FlowNode::Sequence { children, .. } => children.iter().any(FlowNode::always_acts),
            FlowNode::Decision { choices, .. } => choices.iter().all(FlowNode::always_acts),
        }
    }

    /// Structural checks; `intrinsic_only` trees may finish without acting.
    pub fn validate(&self, intrinsic_only: bool) -> Result<()> {
        self.validate_at("main_flow")?;
        if !intrinsic_only && !self.always_acts() {
            return Err(Error::config(
                "main_flow",
                "some path through the flow never reaches an extrinsic function",
            ));
        }
        Ok(())
    }

    fn validate_at(&self, path: &str) -> Result<()> {
        match self {
            FlowNode::Leaf(Leaf::ConsiderAction { samples: 0 }) => {
                Err(Error::config(path, "consider_action needs at least one sample"))
            }
            FlowNode::Leaf(_) => Ok(()),
            FlowNode::Sequence { children, .. } => {
                if children.is_empty() {
                    return Err(Error::config(path, "empty sequence"));
                }
                for (i, c) in children.iter().enumerate() {
                    c.validate_at(&format!("{path}.sequence[{i}]"))?;
                }
                Ok(())
            }
            FlowNode::Decision { choices, .. } => {
                if choices.len() < 2 {
                    return Err(Error::config(path, "a decision needs at least two choices"));
                }
                for (i, c) in choices.iter().enumerate() {
                    c.validate_at(&format!("{path}.choices[{i}]"))?;
                }
                Ok(())
            }
        }
    }

    /// Upper bound on model calls for one run, ignoring parse retries and
    /// decision correction retries. `single_step` selects the zero-step
    /// reflection variant.
    pub fn max_calls(&self, single_step: bool) -> usize {
        match self {
            FlowNode::Leaf(l) => match l {
                Leaf::Reflect if single_step => 2,
                Leaf::ConsiderAction { samples } => *samples,
                Leaf::ConsistencyOnDiverseActions | Leaf::ExecutePlannedAction => 0,
                _ => 1,
            },
            FlowNode::Sequence { children, .. } => {
                let mut total = 0;
                for c in children {
                    total += c.max_calls(single_step);
                    if c.always_acts() {
                        break;
                    }
                }
                total
            }
            FlowNode::Decision { choices, .. } => {
                1 + choices.iter().map(|c| c.max_calls(single_step)).max().unwrap_or(0)
            }
        }
    }

    /// Every leaf in depth-first order.
    pub fn leaves(&self) -> Vec<&Leaf> {
        match self {
            FlowNode::Leaf(l) => vec![l],
            FlowNode::Sequence { children: c, .. } | FlowNode::Decision { choices: c, .. } => {
                c.iter().flat_map(FlowNode::leaves).collect()
            }
        }
    }
}

/// The composite from the framework documentation: reflect, think, draft a
/// candidate and execute it.
pub fn composite_function() -> FlowNode {
    FlowNode::named_sequence(
        "composite_function",
        "An example composite function.",
        vec![
            FlowNode::leaf(Leaf::Reflect),
            FlowNode::leaf(Leaf::Think),
            FlowNode::leaf(Leaf::ConsiderAction { samples: 1 }),
            FlowNode::leaf(Leaf::ExecutePlannedAction),
        ],
    )
}

/// `n` candidate drafts, a vote and execution of the winner.
pub fn self_consistency_act(n: usize) -> FlowNode {
    let mut seq: Vec<FlowNode> = (0..n).map(|_| FlowNode::leaf(Leaf::ConsiderAction { samples: 1 })).collect();
    seq.push(FlowNode::leaf(Leaf::ConsistencyOnDiverseActions));
    seq.push(FlowNode::leaf(Leaf::ExecutePlannedAction));
    FlowNode::named_sequence(
        "self_consistency_act",
        "Run CoT multiple times and select the most consistent answer.",
        seq,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act() -> FlowNode {
        FlowNode::leaf(Leaf::Act)
    }

    #[test]
    fn default_names() {
        let react = FlowNode::sequence(vec![FlowNode::leaf(Leaf::Think), act()]);
        assert_eq!(react.name(), "think_then_act");
        assert!(react.description().contains(", then "));
    }

    #[test]
    fn composite_order() {
        let names: Vec<_> = composite_function().leaves().iter().map(|l| l.name()).collect();
        assert_eq!(names, ["reflect", "think", "consider_action", "execute_planned_action"]);
        assert_eq!(composite_function().name(), "composite_function");
    }

    #[test]
    fn validation() {
        assert!(act().validate(false).is_ok());
        let think_only = FlowNode::sequence(vec![FlowNode::leaf(Leaf::Think)]);
        assert!(matches!(think_only.validate(false), Err(Error::Config { .. })));
        assert!(think_only.validate(true).is_ok());
        let lonely = FlowNode::decision(vec![act()]);
        let err = lonely.validate(false).unwrap_err().to_string();
        assert!(err.contains("two choices"), "{err}");
        let half = FlowNode::decision(vec![act(), FlowNode::leaf(Leaf::Think)]);
        assert!(half.validate(false).is_err());
    }

    #[test]
    fn call_bounds() {
        let react = FlowNode::sequence(vec![FlowNode::leaf(Leaf::Think), act()]);
        assert_eq!(react.max_calls(false), 2);
        let reflect = FlowNode::sequence(vec![FlowNode::leaf(Leaf::Reflect), act()]);
        assert_eq!(reflect.max_calls(false), 2);
        assert_eq!(reflect.max_calls(true), 3);
        assert_eq!(self_consistency_act(5).max_calls(true), 5);
        let choose = FlowNode::decision(vec![react, act()]);
        assert_eq!(choose.max_calls(false), 3);
    }
}
