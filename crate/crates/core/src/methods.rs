//! The built-in reasoning methods as ready-made flow trees.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::TaskTraits;
use crate::error::{Error, Result};
use crate::flows::{FlowNode, Leaf};
use crate::prompts::{CotType, FewShotExample, MemorySelector, PromptSpec};

/// Samples drawn by self-consistency unless configured otherwise.
pub const DEFAULT_SC_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodName {
    #[serde(rename = "Direct")]
    Direct,
    #[serde(rename = "ZS-CoT")]
    ZsCot,
    #[serde(rename = "FS")]
    Fs,
    #[serde(rename = "FS-CoT")]
    FsCot,
    #[serde(rename = "FS-CoT-SC")]
    FsCotSc,
    #[serde(rename = "FS-CoT-React")]
    FsCotReact,
    #[serde(rename = "FS-CoT-Reflect")]
    FsCotReflect,
    #[serde(rename = "FS-CoT-SwiftSage")]
    FsCotSwiftSage,
    #[serde(rename = "FS-Least-to-Most")]
    FsLeastToMost,
}

impl MethodName {
    pub const ALL: [MethodName; 9] = [
        MethodName::Direct,
        MethodName::ZsCot,
        MethodName::Fs,
        MethodName::FsCot,
        MethodName::FsCotSc,
        MethodName::FsCotReact,
        MethodName::FsCotReflect,
        MethodName::FsCotSwiftSage,
        MethodName::FsLeastToMost,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Direct => "Direct",
            MethodName::ZsCot => "ZS-CoT",
            MethodName::Fs => "FS",
            MethodName::FsCot => "FS-CoT",
            MethodName::FsCotSc => "FS-CoT-SC",
            MethodName::FsCotReact => "FS-CoT-React",
            MethodName::FsCotReflect => "FS-CoT-Reflect",
            MethodName::FsCotSwiftSage => "FS-CoT-SwiftSage",
            MethodName::FsLeastToMost => "FS-Least-to-Most",
        }
    }
}

impl fmt::Display for MethodName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodName::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let known: Vec<_> = MethodName::ALL.iter().map(|m| m.as_str()).collect();
            Error::NotFound(format!("method {s:?}; known methods: {}", known.join(", ")))
        })
    }
}

/// A flow plus the prompt settings it runs with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub name: String,
    pub flow: FlowNode,
    pub cot_type: CotType,
    pub latest_reflection_only: bool,
}

impl Policy {
    pub fn prompt_spec(&self, system_text: &str, pool: &[FewShotExample]) -> PromptSpec {
        PromptSpec {
            memory_selector: MemorySelector {
                latest_reflection_only: self.latest_reflection_only,
                ..MemorySelector::default()
            },
            ..PromptSpec::new(self.cot_type, system_text, pool)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodCatalogEntry {
    pub name: MethodName,
    pub policy: Policy,
    /// Whether a second, larger backend is consulted.
    pub uses_planner_backend: bool,
}

impl MethodCatalogEntry {
    /// Whether the method is defined for a task with these traits.
    pub fn applies_to(&self, traits: &TaskTraits) -> bool {
        match self.name {
            MethodName::FsCotSwiftSage => !traits.single_step,
            MethodName::FsLeastToMost => traits.single_step,
            MethodName::FsCotSc => !traits.free_form,
            _ => true,
        }
    }

    /// Like [`applies_to`](Self::applies_to) but as a config error.
    pub fn check_applicable(&self, task: &str, traits: &TaskTraits) -> Result<()> {
        if self.applies_to(traits) {
            Ok(())
        } else {
            Err(Error::config(
                "methods",
                format!("{} does not apply to task {task}", self.name),
            ))
        }
    }
}

fn act() -> FlowNode {
    FlowNode::leaf(Leaf::Act)
}

fn entry(name: MethodName, flow: FlowNode, cot_type: CotType) -> MethodCatalogEntry {
    MethodCatalogEntry {
        name,
        policy: Policy {
            name: name.as_str().to_string(),
            flow,
            cot_type,
            latest_reflection_only: false,
        },
        uses_planner_backend: false,
    }
}

pub fn method_direct() -> MethodCatalogEntry {
    entry(MethodName::Direct, FlowNode::sequence(vec![act()]), CotType::None)
}

pub fn method_zscot() -> MethodCatalogEntry {
    entry(MethodName::ZsCot, FlowNode::sequence(vec![act()]), CotType::ZsCot)
}

pub fn method_fs() -> MethodCatalogEntry {
    entry(MethodName::Fs, FlowNode::sequence(vec![act()]), CotType::Fs)
}

pub fn method_fscot() -> MethodCatalogEntry {
    entry(MethodName::FsCot, FlowNode::sequence(vec![act()]), CotType::FsCot)
}

/// `n` sampled drafts issued as one batch, a vote, then the winner.
pub fn method_self_consistency(n: usize) -> Result<MethodCatalogEntry> {
    if n == 0 {
        return Err(Error::InvalidInput("self-consistency needs n >= 1".into()));
    }
    let flow = FlowNode::named_sequence(
        "self_consistency_act",
        "Run CoT multiple times and select the most consistent answer.",
        vec![
            FlowNode::leaf(Leaf::ConsiderAction { samples: n }),
            FlowNode::leaf(Leaf::ConsistencyOnDiverseActions),
            FlowNode::leaf(Leaf::ExecutePlannedAction),
        ],
    );
    Ok(entry(MethodName::FsCotSc, flow, CotType::FsCot))
}

pub fn method_react() -> MethodCatalogEntry {
    entry(
        MethodName::FsCotReact,
        FlowNode::sequence(vec![FlowNode::leaf(Leaf::Think), act()]),
        CotType::FsCot,
    )
}

pub fn method_reflect() -> MethodCatalogEntry {
    let mut e = entry(
        MethodName::FsCotReflect,
        FlowNode::sequence(vec![FlowNode::leaf(Leaf::Reflect), act()]),
        CotType::FsCot,
    );
    e.policy.latest_reflection_only = true;
    e
}

/// The fast model answers Direct-style; the planner backend is consulted
/// after repeated zero-reward steps.
pub fn method_swiftsage() -> MethodCatalogEntry {
    let mut e = entry(
        MethodName::FsCotSwiftSage,
        FlowNode::sequence(vec![FlowNode::leaf(Leaf::SwiftSage)]),
        CotType::None,
    );
    e.uses_planner_backend = true;
    e
}

pub fn method_least_to_most() -> MethodCatalogEntry {
    entry(
        MethodName::FsLeastToMost,
        FlowNode::sequence(vec![FlowNode::leaf(Leaf::Decompose), act()]),
        CotType::Fs,
    )
}

pub fn method(name: MethodName, sc_samples: usize) -> Result<MethodCatalogEntry> {
    Ok(match name {
        MethodName::Direct => method_direct(),
        MethodName::ZsCot => method_zscot(),
        MethodName::Fs => method_fs(),
        MethodName::FsCot => method_fscot(),
        MethodName::FsCotSc => method_self_consistency(sc_samples)?,
        MethodName::FsCotReact => method_react(),
        MethodName::FsCotReflect => method_reflect(),
        MethodName::FsCotSwiftSage => method_swiftsage(),
        MethodName::FsLeastToMost => method_least_to_most(),
    })
}

/// All nine methods, self-consistency with [`DEFAULT_SC_SAMPLES`].
pub fn catalog() -> Vec<MethodCatalogEntry> {
    MethodName::ALL
        .into_iter()
        .map(|m| method(m, DEFAULT_SC_SAMPLES).expect("default sample count is positive"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const QA: TaskTraits = TaskTraits {
        single_step: true,
        free_form: false,
        multi_agent: false,
    };
    const GAME: TaskTraits = TaskTraits {
        single_step: false,
        free_form: false,
        multi_agent: true,
    };
    const CODE: TaskTraits = TaskTraits {
        single_step: true,
        free_form: true,
        multi_agent: false,
    };

    #[test]
    fn names_round_trip() {
        for m in MethodName::ALL {
            assert_eq!(m.as_str().parse::<MethodName>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!(matches!("fs-cot".parse::<MethodName>(), Err(Error::NotFound(_))));
    }

    #[test]
    fn applicability_matrix() {
        let get = |n| method(n, 5).unwrap();
        assert!(!get(MethodName::FsCotSwiftSage).applies_to(&QA));
        assert!(get(MethodName::FsCotSwiftSage).applies_to(&GAME));
        assert!(get(MethodName::FsLeastToMost).applies_to(&QA));
        assert!(!get(MethodName::FsLeastToMost).applies_to(&GAME));
        assert!(get(MethodName::FsLeastToMost).check_applicable("ipd", &GAME).is_err());
        assert!(!get(MethodName::FsCotSc).applies_to(&CODE));
        for m in [MethodName::Direct, MethodName::ZsCot, MethodName::FsCotReact] {
            assert!(get(m).applies_to(&QA) && get(m).applies_to(&GAME) && get(m).applies_to(&CODE));
        }
    }

    #[test]
    fn declared_call_bounds() {
        let bound = |n: MethodName, single| method(n, 5).unwrap().policy.flow.max_calls(single);
        for m in [MethodName::Direct, MethodName::ZsCot, MethodName::Fs, MethodName::FsCot] {
            assert_eq!(bound(m, true), 1);
        }
        assert_eq!(bound(MethodName::FsCotReact, false), 2);
        assert_eq!(bound(MethodName::FsCotReflect, false), 2);
        assert_eq!(bound(MethodName::FsCotReflect, true), 3);
        assert_eq!(bound(MethodName::FsCotSc, true), 5);
        assert_eq!(bound(MethodName::FsLeastToMost, true), 2);
        assert!(method_self_consistency(0).is_err());
    }

    #[test]
    fn fs_prompt_has_no_thoughts() {
        let pool = vec![FewShotExample {
            question: "1+1?".into(),
            thought: Some("one plus one".into()),
            answer: "2".into(),
        }];
        let fs = method_fs().policy.prompt_spec("sys", &pool);
        assert!(fs.examples.iter().all(|e| e.thought.is_none()));
        let fscot = method_fscot().policy.prompt_spec("sys", &pool);
        assert_eq!(fscot.examples[0].thought.as_deref(), Some("one plus one"));
        assert!(method_reflect().policy.prompt_spec("sys", &pool).memory_selector.latest_reflection_only);
    }
}
