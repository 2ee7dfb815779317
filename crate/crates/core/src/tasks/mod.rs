//! Built-in environments and the factories the harness draws instances from.

pub mod gridworld;
pub mod ipd;
pub mod qa;
pub mod remote;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Task, TaskTraits};
use crate::error::{Error, Result};
use gridworld::{GridSpec, GridWorldTask};
use ipd::IpdTask;
use qa::{QaDataset, QaTask, Split};
use remote::{RemoteSpec, RemoteTask};

/// How to build a task family, as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    /// JSONL questions; the bundled sample set when `path` is absent.
    Qa {
        name: String,
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(default)]
        split: Split,
    },
    /// Fixed layouts from JSON files, or seeded random layouts when empty.
    Gridworld {
        name: String,
        #[serde(default)]
        specs: Vec<PathBuf>,
    },
    Ipd {
        name: String,
        #[serde(default = "default_rounds")]
        rounds: u32,
    },
    Remote {
        name: String,
        #[serde(flatten)]
        spec: RemoteSpec,
    },
}

fn default_rounds() -> u32 {
    ipd::DEFAULT_ROUNDS
}

impl TaskSpec {
    /// The spec behind a bare task name such as `gsm8k`.
    pub fn builtin(name: &str) -> Result<TaskSpec> {
        match name {
            "gsm8k" => Ok(TaskSpec::Qa {
                name: name.into(),
                path: None,
                split: Split::Test,
            }),
            "gridworld" => Ok(TaskSpec::Gridworld {
                name: name.into(),
                specs: Vec::new(),
            }),
            "ipd" => Ok(TaskSpec::Ipd {
                name: name.into(),
                rounds: ipd::DEFAULT_ROUNDS,
            }),
            other => Err(Error::NotFound(format!(
                "task {other:?}; built-in tasks are gsm8k, gridworld, ipd"
            ))),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            TaskSpec::Qa { name, .. }
            | TaskSpec::Gridworld { name, .. }
            | TaskSpec::Ipd { name, .. }
            | TaskSpec::Remote { name, .. } => name,
        }
    }
}

/// A family of task instances. Instances are independent and single-owner.
pub trait TaskSource: Send + Sync {
    fn name(&self) -> &str;
    fn traits(&self) -> TaskTraits;
    /// Number of distinct instances; episodes cycle through them.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn instance(&self, index: usize) -> Result<Box<dyn Task>>;
}

struct QaSource(QaDataset);

impl TaskSource for QaSource {
    fn name(&self) -> &str {
        &self.0.name
    }
    fn traits(&self) -> TaskTraits {
        TaskTraits {
            single_step: true,
            free_form: false,
            multi_agent: false,
        }
    }
    fn len(&self) -> usize {
        self.0.items.len()
    }
    fn instance(&self, index: usize) -> Result<Box<dyn Task>> {
        Ok(Box::new(QaTask::new(&self.0, index)?))
    }
}

struct GridSource {
    name: String,
    fixed: Vec<(String, GridSpec)>,
}

/// Distinct random layouts cycled through when no spec files are given.
const RANDOM_GRID_INSTANCES: usize = 1000;

impl TaskSource for GridSource {
    fn name(&self) -> &str {
        &self.name
    }
    fn traits(&self) -> TaskTraits {
        TaskTraits {
            single_step: false,
            free_form: false,
            multi_agent: false,
        }
    }
    fn len(&self) -> usize {
        if self.fixed.is_empty() {
            RANDOM_GRID_INSTANCES
        } else {
            self.fixed.len()
        }
    }
    fn instance(&self, index: usize) -> Result<Box<dyn Task>> {
        if self.fixed.is_empty() {
            if index >= RANDOM_GRID_INSTANCES {
                return Err(Error::NotFound(format!("{}/{index}", self.name)));
            }
            return Ok(Box::new(GridWorldTask::random(index as u64)));
        }
        let (id, spec) = self
            .fixed
            .get(index)
            .ok_or_else(|| Error::NotFound(format!("{}/{index}", self.name)))?;
        Ok(Box::new(GridWorldTask::from_spec(id.clone(), spec.clone())?))
    }
}

struct IpdSource {
    name: String,
    rounds: u32,
}

impl TaskSource for IpdSource {
    fn name(&self) -> &str {
        &self.name
    }
    fn traits(&self) -> TaskTraits {
        TaskTraits {
            single_step: false,
            free_form: false,
            multi_agent: true,
        }
    }
    fn len(&self) -> usize {
        1
    }
    fn instance(&self, index: usize) -> Result<Box<dyn Task>> {
        if index != 0 {
            return Err(Error::NotFound(format!("{}/{index}", self.name)));
        }
        Ok(Box::new(IpdTask::new(format!("{}/0", self.name), self.rounds)?))
    }
}

struct RemoteSource {
    name: String,
    spec: RemoteSpec,
}

impl TaskSource for RemoteSource {
    fn name(&self) -> &str {
        &self.name
    }
    fn traits(&self) -> TaskTraits {
        TaskTraits {
            single_step: self.spec.single_step,
            free_form: self.spec.free_form,
            multi_agent: false,
        }
    }
    fn len(&self) -> usize {
        self.spec.instances
    }
    fn instance(&self, index: usize) -> Result<Box<dyn Task>> {
        if index >= self.spec.instances {
            return Err(Error::NotFound(format!("{}/{index}", self.name)));
        }
        Ok(Box::new(RemoteTask::spawn(&self.name, index, &self.spec)?))
    }
}

/// Builds a source; relative paths resolve against `base_dir`.
pub fn build_source(spec: &TaskSpec, base_dir: &Path) -> Result<Arc<dyn TaskSource>> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
    Ok(match spec {
        TaskSpec::Qa { name, path, split } => {
            let mut ds = match path {
                Some(p) => qa::load_qa(&resolve(p), *split)?,
                None => qa::parse_qa(name, qa::BUNDLED_GSM8K, *split)?,
            };
            ds.name = name.clone();
            Arc::new(QaSource(ds))
        }
        TaskSpec::Gridworld { name, specs } => {
            let fixed = specs
                .iter()
                .map(|p| {
                    let path = resolve(p);
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
                    let spec: GridSpec = serde_json::from_str(&text)
                        .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
                    spec.validate()?;
                    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                    Ok((format!("{name}/{stem}"), spec))
                })
                .collect::<Result<Vec<_>>>()?;
            Arc::new(GridSource {
                name: name.clone(),
                fixed,
            })
        }
        TaskSpec::Ipd { name, rounds } => Arc::new(IpdSource {
            name: name.clone(),
            rounds: *rounds,
        }),
        TaskSpec::Remote { name, spec } => Arc::new(RemoteSource {
            name: name.clone(),
            spec: spec.clone(),
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        for name in ["gsm8k", "gridworld", "ipd"] {
            let src = build_source(&TaskSpec::builtin(name).unwrap(), Path::new(".")).unwrap();
            assert_eq!(src.name(), name);
            assert!(!src.is_empty());
            let task = src.instance(0).unwrap();
            assert_eq!(task.traits(), src.traits());
        }
        assert!(matches!(TaskSpec::builtin("alfworld"), Err(Error::NotFound(_))));
    }

    #[test]
    fn unknown_instance_not_found() {
        let src = build_source(&TaskSpec::builtin("ipd").unwrap(), Path::new(".")).unwrap();
        assert!(matches!(src.instance(3), Err(Error::NotFound(_))));
    }

    #[test]
    fn spec_yaml_forms() {
        let qa: TaskSpec = serde_yaml::from_str("kind: qa\nname: mini\npath: data.jsonl\nsplit: train\n").unwrap();
        assert_eq!(qa.name(), "mini");
        let remote: TaskSpec =
            serde_yaml::from_str("kind: remote\nname: r\ncommand: [python3, env.py]\nsingle_step: true\n").unwrap();
        assert!(matches!(remote, TaskSpec::Remote { .. }));
        assert!(serde_yaml::from_str::<TaskSpec>("kind: ipd\nname: x\nturns: 3\n").is_err());
    }
}
