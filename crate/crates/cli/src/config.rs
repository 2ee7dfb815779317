//! Run configuration: the flow grammar keys plus harness fields, in one YAML
//! file.

use std::path::{Path, PathBuf};

use agent_core::flows::config::{FlowConfig, FLOW_KEYS};
use agent_core::flows::FlowSettings;
use agent_core::llm::{HttpConfig, ScriptEntry, ScriptEntrySpec, ScriptMode};
use agent_core::methods::{self, MethodCatalogEntry, MethodName, Policy, DEFAULT_SC_SAMPLES};
use agent_core::planning::models::{Countdown, Game24};
use agent_core::planning::{Commit, PlannerConfig, PlanningSettings};
use agent_core::tasks::TaskSpec;
use serde::{Deserialize, Serialize};
use serde_yaml::{Mapping, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Name under which a config's own `main_flow` is listed in `methods`.
pub const CUSTOM_METHOD: &str = "custom";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskEntry {
    Builtin(String),
    Spec(TaskSpec),
}

impl TaskEntry {
    pub fn spec(&self) -> Result<TaskSpec> {
        match self {
            TaskEntry::Builtin(name) => Ok(TaskSpec::builtin(name)?),
            TaskEntry::Spec(spec) => Ok(spec.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Scripted {
        #[serde(default)]
        mode: ScriptMode,
        #[serde(default)]
        script: Vec<ScriptEntrySpec>,
        /// JSON or YAML list of entries, appended after `script`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script_file: Option<PathBuf>,
    },
    Http(HttpConfig),
}

impl BackendConfig {
    pub fn script_entries(&self) -> Vec<ScriptEntry> {
        match self {
            BackendConfig::Scripted { script, .. } => script.iter().cloned().map(Into::into).collect(),
            BackendConfig::Http(_) => Vec::new(),
        }
    }

    /// Inlines `script_file` so the config hash covers the script content.
    fn inline_script(&mut self, base: &Path, field: &str) -> Result<()> {
        if let BackendConfig::Scripted { script, script_file, .. } = self {
            if let Some(file) = script_file.take() {
                let path = resolve(base, &file);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::config(field, format!("{}: {e}", path.display())))?;
                let more: Vec<ScriptEntrySpec> = serde_yaml::from_str(&text)
                    .map_err(|e| CliError::config(field, format!("{}: {e}", path.display())))?;
                script.extend(more);
            }
        }
        Ok(())
    }
}

/// What `agent plan` searches over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanModelSpec {
    Countdown(Countdown),
    Game24(Game24),
    /// The first configured task, with the LLM proposing and rating.
    Llm {
        #[serde(default)]
        commit: Commit,
        #[serde(default = "default_plan_samples")]
        samples: usize,
    },
}

fn default_plan_samples() -> usize {
    3
}

fn default_runs() -> usize {
    3
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_sc_samples() -> usize {
    DEFAULT_SC_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub tasks: Vec<TaskEntry>,
    #[serde(default)]
    pub methods: Vec<String>,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    /// Larger model consulted by planner-style methods.
    #[serde(default)]
    pub sage_backend: Option<BackendConfig>,
    /// Episodes per cell and run; each task makes one pass over its
    /// instances when unset.
    #[serde(default)]
    pub episodes_per_run: Option<usize>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// When set, returns are discounted; otherwise each task's own score
    /// is reported.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub horizon: Option<u32>,
    #[serde(default = "default_sc_samples")]
    pub sc_samples: usize,
    #[serde(default)]
    pub settings: FlowSettings,
    /// Search before every action, with the method as fallback.
    #[serde(default)]
    pub planning: Option<PlanningSettings>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub planner: Option<PlannerConfig>,
    #[serde(default)]
    pub model: Option<PlanModelSpec>,
    #[serde(skip)]
    pub flow: Option<FlowConfig>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_yaml::from_str("{}").expect("defaults deserialize")
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// A method ready to run: its policy and where it applies.
#[derive(Debug, Clone)]
pub struct ResolvedMethod {
    pub name: String,
    pub policy: Policy,
    /// `None` for custom flows, which apply everywhere.
    pub catalog: Option<MethodCatalogEntry>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(path.display().to_string(), e.to_string()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        RunConfig::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<RunConfig> {
        let value: Value = serde_yaml::from_str(text).map_err(|e| CliError::config("<root>", e.to_string()))?;
        let map = match value {
            Value::Mapping(m) => m,
            Value::Null => Mapping::new(),
            _ => return Err(CliError::config("<root>", "expected a mapping")),
        };
        let (flow_keys, rest): (Mapping, Mapping) = map
            .into_iter()
            .partition(|(k, _)| k.as_str().is_some_and(|k| FLOW_KEYS.contains(&k)));
        let mut cfg: RunConfig =
            serde_yaml::from_value(Value::Mapping(rest)).map_err(|e| CliError::config("<root>", e.to_string()))?;
        if !flow_keys.is_empty() {
            cfg.flow = Some(FlowConfig::from_mapping(&flow_keys)?);
        }
        cfg.base_dir = base_dir.to_path_buf();
        if let Some(b) = cfg.backend.as_mut() {
            b.inline_script(base_dir, "backend.script_file")?;
        }
        if let Some(b) = cfg.sage_backend.as_mut() {
            b.inline_script(base_dir, "sage_backend.script_file")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_run == Some(0) {
            return Err(CliError::config("episodes_per_run", "must be positive"));
        }
        if self.runs == 0 {
            return Err(CliError::config("runs", "must be positive"));
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(CliError::config("gamma", format!("{g} is outside [0,1)")));
            }
        }
        if self.sc_samples == 0 {
            return Err(CliError::config("sc_samples", "must be positive"));
        }
        if self.workers == Some(0) {
            return Err(CliError::config("workers", "must be positive"));
        }
        if let Some(p) = &self.planner {
            p.validate()?;
        }
        if let Some(p) = &self.planning {
            p.planner.validate()?;
        }
        Ok(())
    }

    pub fn task_specs(&self) -> Result<Vec<TaskSpec>> {
        if self.tasks.is_empty() {
            return Err(CliError::config("tasks", "no tasks configured"));
        }
        self.tasks.iter().map(TaskEntry::spec).collect()
    }

    /// Methods in config order; a config with its own `main_flow` and no
    /// `methods` list runs just that flow.
    pub fn resolved_methods(&self) -> Result<Vec<ResolvedMethod>> {
        let names: Vec<String> = match (&self.flow, self.methods.is_empty()) {
            (Some(_), true) => vec![CUSTOM_METHOD.to_string()],
            (None, true) => return Err(CliError::config("methods", "no methods configured")),
            _ => self.methods.clone(),
        };
        names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                if name == CUSTOM_METHOD {
                    let flow = self.flow.as_ref().ok_or_else(|| {
                        CliError::config(format!("methods[{i}]"), "`custom` needs a main_flow in the config")
                    })?;
                    if flow.intrinsic_only {
                        return Err(CliError::config("intrinsic_only", "an intrinsic-only flow cannot act"));
                    }
                    return Ok(ResolvedMethod {
                        name: name.clone(),
                        policy: Policy {
                            name: name.clone(),
                            flow: flow.main_flow.clone(),
                            cot_type: flow.cot_type,
                            latest_reflection_only: false,
                        },
                        catalog: None,
                    });
                }
                let parsed: MethodName = name
                    .parse()
                    .map_err(|e: agent_core::Error| CliError::config(format!("methods[{i}]"), e.to_string()))?;
                let entry = methods::method(parsed, self.sc_samples)?;
                Ok(ResolvedMethod {
                    name: name.clone(),
                    policy: entry.policy.clone(),
                    catalog: Some(entry),
                })
            })
            .collect()
    }

    /// Short digest of everything that determines a run's results.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serialises"));
        if let Some(flow) = &self.flow {
            h.update(serde_json::to_vec(&flow.main_flow).expect("flow serialises"));
            h.update(format!("{:?}{}", flow.cot_type, flow.intrinsic_only));
        }
        h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_keys_live_beside_run_fields() {
        let cfg = RunConfig::parse(
            "tasks: [gsm8k]\nruns: 2\nmain_flow:\n  _target_: flows.SequentialFlow\n  sequence:\n    - _target_: flows.Act\n",
            Path::new("."),
        )
        .unwrap();
        let m = cfg.resolved_methods().unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].name, CUSTOM_METHOD);
        assert_eq!(cfg.runs, 2);
    }

    #[test]
    fn unknown_fields_and_methods_are_config_errors() {
        let err = RunConfig::parse("tasks: [gsm8k]\nepisodes: 3\n", Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let cfg = RunConfig::parse("tasks: [gsm8k]\nmethods: [telepathy]\n", Path::new(".")).unwrap();
        assert_eq!(cfg.resolved_methods().unwrap_err().exit_code(), 2);
        assert!(RunConfig::parse("gamma: 1.0\n", Path::new(".")).is_err());
    }

    #[test]
    fn hash_tracks_script_content() {
        let a = RunConfig::parse("backend: {kind: scripted, script: [\"Answer: 1\"]}\n", Path::new(".")).unwrap();
        let b = RunConfig::parse("backend: {kind: scripted, script: [\"Answer: 2\"]}\n", Path::new(".")).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
        assert_eq!(a.hash().len(), 12);
    }
}
