//! YAML flow configuration.
//!
//! ```yaml
//! main_flow:
//!   _target_: pangu.commands.DecisionFlow
//!   choices:
//!     - _target_: pangu.commands.SequentialFlow
//!       sequence:
//!         - _target_: pangu.commands.Think
//!         - _target_: pangu.commands.Act
//!     - _target_: pangu.commands.Act
//! prompt_builder:
//!   default_kwargs:
//!     cot_type: zs-cot
//! ```
//!
//! Only the last dotted segment of `_target_` matters. Unknown keys are
//! rejected with the path of the offending node.

use serde_yaml::{Mapping, Value};

use super::{composite_function, self_consistency_act, FlowNode, Leaf};
use crate::error::{Error, Result};
use crate::prompts::CotType;
use crate::types::AgentId;

/// Keys a flow file may carry at the top level.
pub const FLOW_KEYS: [&str; 3] = ["main_flow", "prompt_builder", "intrinsic_only"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowConfig {
    pub main_flow: FlowNode,
    pub cot_type: CotType,
    pub intrinsic_only: bool,
}

impl FlowConfig {
    /// Parses a standalone flow file; any key outside [`FLOW_KEYS`] is an error.
    pub fn from_yaml(text: &str) -> Result<FlowConfig> {
        let value: Value = serde_yaml::from_str(text).map_err(|e| Error::config("<root>", e.to_string()))?;
        let map = value
            .as_mapping()
            .ok_or_else(|| Error::config("<root>", "expected a mapping"))?;
        for key in map.keys() {
            let k = key_str(key, "<root>")?;
            if !FLOW_KEYS.contains(&k) {
                return Err(Error::config(k, format!("unknown key `{k}`")));
            }
        }
        FlowConfig::from_mapping(map)
    }

    /// Reads the flow keys out of a larger mapping, ignoring other keys.
    pub fn from_mapping(map: &Mapping) -> Result<FlowConfig> {
        let main = map
            .get("main_flow")
            .ok_or_else(|| Error::config("main_flow", "missing"))?;
        let main_flow = parse_node(main, "main_flow")?;
        let cot_type = match map.get("prompt_builder") {
            Some(pb) => parse_prompt_builder(pb)?,
            None => CotType::None,
        };
        let intrinsic_only = match map.get("intrinsic_only") {
            None => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(Error::config("intrinsic_only", "expected a boolean")),
        };
        main_flow.validate(intrinsic_only)?;
        Ok(FlowConfig {
            main_flow,
            cot_type,
            intrinsic_only,
        })
    }
}

fn key_str<'v>(key: &'v Value, path: &str) -> Result<&'v str> {
    key.as_str()
        .ok_or_else(|| Error::config(path, format!("non-string key {key:?}")))
}

fn check_keys(map: &Mapping, allowed: &[&str], path: &str) -> Result<()> {
    for key in map.keys() {
        let k = key_str(key, path)?;
        if !allowed.contains(&k) {
            return Err(Error::config(format!("{path}.{k}"), format!("unknown key `{k}`")));
        }
    }
    Ok(())
}

fn parse_prompt_builder(value: &Value) -> Result<CotType> {
    let path = "prompt_builder";
    let map = value
        .as_mapping()
        .ok_or_else(|| Error::config(path, "expected a mapping"))?;
    check_keys(map, &["default_kwargs"], path)?;
    let Some(kwargs) = map.get("default_kwargs") else {
        return Ok(CotType::None);
    };
    let path = "prompt_builder.default_kwargs";
    let kwargs = kwargs
        .as_mapping()
        .ok_or_else(|| Error::config(path, "expected a mapping"))?;
    check_keys(kwargs, &["cot_type"], path)?;
    match kwargs.get("cot_type") {
        None => Ok(CotType::None),
        Some(v) => serde_yaml::from_value(v.clone())
            .map_err(|_| Error::config(format!("{path}.cot_type"), format!("unknown cot_type {v:?}"))),
    }
}

fn opt_string(map: &Mapping, key: &str, path: &str) -> Result<Option<String>> {
    match map.get(key) {
        None => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(_) => Err(Error::config(format!("{path}.{key}"), "expected a string")),
    }
}

fn opt_count(map: &Mapping, key: &str, path: &str) -> Result<Option<usize>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .as_u64()
            .filter(|n| *n >= 1)
            .map(|n| Some(n as usize))
            .ok_or_else(|| Error::config(format!("{path}.{key}"), "expected a positive integer")),
    }
}

fn children(map: &Mapping, key: &str, path: &str) -> Result<Vec<FlowNode>> {
    let list = map
        .get(key)
        .ok_or_else(|| Error::config(path, format!("missing `{key}`")))?
        .as_sequence()
        .ok_or_else(|| Error::config(format!("{path}.{key}"), "expected a list"))?;
    list.iter()
        .enumerate()
        .map(|(i, v)| parse_node(v, &format!("{path}.{key}[{i}]")))
        .collect()
}

/// Parses one node mapping at `path`.
pub fn parse_node(value: &Value, path: &str) -> Result<FlowNode> {
    let map = value
        .as_mapping()
        .ok_or_else(|| Error::config(path, "expected a mapping with `_target_`"))?;
    let target = map
        .get("_target_")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::config(path, "missing `_target_`"))?;
    let kind = target.rsplit('.').next().unwrap_or(target);
    let leaf = |l: Leaf| -> Result<FlowNode> {
        check_keys(map, &["_target_"], path)?;
        Ok(FlowNode::Leaf(l))
    };
    match kind {
        "SequentialFlow" => {
            check_keys(map, &["_target_", "sequence", "name", "description"], path)?;
            let kids = children(map, "sequence", path)?;
            let mut node = FlowNode::sequence(kids);
            if let FlowNode::Sequence { name, description, .. } = &mut node {
                if let Some(n) = opt_string(map, "name", path)? {
                    *name = n;
                }
                if let Some(d) = opt_string(map, "description", path)? {
                    *description = d;
                }
            }
            Ok(node)
        }
        "DecisionFlow" => {
            check_keys(map, &["_target_", "choices", "name", "description"], path)?;
            let mut node = FlowNode::decision(children(map, "choices", path)?);
            if let FlowNode::Decision { name, description, .. } = &mut node {
                if let Some(n) = opt_string(map, "name", path)? {
                    *name = n;
                }
                if let Some(d) = opt_string(map, "description", path)? {
                    *description = d;
                }
            }
            Ok(node)
        }
        "Think" => leaf(Leaf::Think),
        "Reflect" => leaf(Leaf::Reflect),
        "Act" => leaf(Leaf::Act),
        "ToolUse" => leaf(Leaf::ToolUse),
        "ConsistencyOnDiverseActions" => leaf(Leaf::ConsistencyOnDiverseActions),
        "ExecutePlannedAction" => leaf(Leaf::ExecutePlannedAction),
        "Decompose" => leaf(Leaf::Decompose),
        "SwiftSage" => leaf(Leaf::SwiftSage),
        "CompositeFunction" => {
            check_keys(map, &["_target_"], path)?;
            Ok(composite_function())
        }
        "Communicate" => {
            check_keys(map, &["_target_", "peer"], path)?;
            Ok(FlowNode::Leaf(Leaf::Communicate {
                peer: opt_string(map, "peer", path)?.map(AgentId::new),
            }))
        }
        "ConsiderAction" => {
            check_keys(map, &["_target_", "samples"], path)?;
            Ok(FlowNode::Leaf(Leaf::ConsiderAction {
                samples: opt_count(map, "samples", path)?.unwrap_or(1),
            }))
        }
        "SelfConsistencyAct" => {
            check_keys(map, &["_target_", "n"], path)?;
            Ok(self_consistency_act(opt_count(map, "n", path)?.unwrap_or(3)))
        }
        other => Err(Error::config(format!("{path}._target_"), format!("unknown function `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_reports_path() {
        let yaml = "main_flow:\n  _target_: x.SequentialFlow\n  sequence:\n    - _target_: x.Act\n      temperature: 3\n";
        match FlowConfig::from_yaml(yaml) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "main_flow.sequence[0].temperature"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_function_and_top_key() {
        let err = FlowConfig::from_yaml("main_flow:\n  _target_: a.b.Dance\n").unwrap_err();
        assert!(err.to_string().contains("main_flow._target_"), "{err}");
        let err = FlowConfig::from_yaml("main_flow:\n  _target_: Act\nextra: 1\n").unwrap_err();
        assert!(err.to_string().contains("extra"), "{err}");
    }

    #[test]
    fn bad_cot_type() {
        let yaml = "main_flow:\n  _target_: Act\nprompt_builder:\n  default_kwargs:\n    cot_type: tree\n";
        let err = FlowConfig::from_yaml(yaml).unwrap_err();
        assert!(err.to_string().contains("cot_type"), "{err}");
    }

    #[test]
    fn flow_without_action_rejected_unless_marked() {
        let yaml = "main_flow:\n  _target_: SequentialFlow\n  sequence:\n    - _target_: Think\n";
        assert!(FlowConfig::from_yaml(yaml).is_err());
        let marked = format!("{yaml}intrinsic_only: true\n");
        assert!(FlowConfig::from_yaml(&marked).unwrap().intrinsic_only);
    }

    #[test]
    fn self_consistency_size() {
        let cfg = FlowConfig::from_yaml("main_flow:\n  _target_: SelfConsistencyAct\n  n: 5\n").unwrap();
        assert_eq!(cfg.main_flow, self_consistency_act(5));
    }
}
