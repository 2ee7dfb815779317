//! Tasks served by an external process over line-delimited JSON on stdio.
//!
//! Each request is one JSON object on a line; the process answers each with
//! exactly one line:
//!
//! | request | reply |
//! |---|---|
//! | `{"type":"reset","seed":S,"instance":I}` | `{"observations":{"<agent>":"<text>",...}}` |
//! | `{"type":"step","actions":{"<agent>":"<text>",...}}` | `{"outcomes":{"<agent>":{"observation":..,"reward":..,"terminated":..,"truncated":..}}}` |
//! | `{"type":"score"}` | `{"return":R,"success":B}` |
//!
//! A reply of the form `{"error":"..."}` becomes a protocol error.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use crate::env::{Score, StepOutcome, Task, TaskTraits};
use crate::error::{Error, Result};
use crate::prompts::{ActionGrammar, FewShotExample};
use crate::types::{Action, AgentId, Observation, Reward, Trajectory};

/// Static description of a remote task family, supplied by configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSpec {
    pub command: Vec<String>,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub header: String,
    /// Admissible actions; free-text answers when absent.
    #[serde(default)]
    pub actions: Option<Vec<String>>,
    #[serde(default)]
    pub single_step: bool,
    #[serde(default)]
    pub free_form: bool,
    #[serde(default)]
    pub few_shot: Vec<FewShotExample>,
}

fn default_instances() -> usize {
    1
}

pub struct RemoteTask {
    name: String,
    index: usize,
    spec: RemoteSpec,
    child: Child,
    io: RefCell<Pipes>,
    agents: Vec<AgentId>,
    done: bool,
}

struct Pipes {
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

#[derive(Deserialize)]
struct WireOutcome {
    observation: String,
    reward: f64,
    #[serde(default)]
    terminated: bool,
    #[serde(default)]
    truncated: bool,
}

impl RemoteTask {
    pub fn spawn(name: &str, index: usize, spec: &RemoteSpec) -> Result<RemoteTask> {
        let (program, args) = spec
            .command
            .split_first()
            .ok_or_else(|| Error::config(format!("tasks.{name}.command"), "empty command"))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::NotFound(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(RemoteTask {
            name: name.into(),
            index,
            spec: spec.clone(),
            child,
            io: RefCell::new(Pipes { stdin, stdout }),
            agents: Vec::new(),
            done: false,
        })
    }

    fn call(&self, request: Value) -> Result<Value> {
        let line = serde_json::to_string(&request)?;
        let mut io = self.io.borrow_mut();
        writeln!(io.stdin, "{line}").map_err(|e| Error::Protocol(format!("{}: write failed: {e}", self.name)))?;
        io.stdin.flush()?;
        let mut reply = String::new();
        let n = io.stdout.read_line(&mut reply)?;
        if n == 0 {
            return Err(Error::Protocol(format!("{}: remote task closed its output", self.name)));
        }
        let value: Value = serde_json::from_str(&reply)
            .map_err(|e| Error::Protocol(format!("{}: bad reply {reply:?}: {e}", self.name)))?;
        if let Some(err) = value.get("error") {
            return Err(Error::Protocol(format!("{}: {}", self.name, err)));
        }
        Ok(value)
    }
}

impl Drop for RemoteTask {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Task for RemoteTask {
    fn name(&self) -> &str {
        &self.name
    }

    fn instance_id(&self) -> String {
        format!("{}/{}", self.name, self.index)
    }

    fn traits(&self) -> TaskTraits {
        TaskTraits {
            single_step: self.spec.single_step,
            free_form: self.spec.free_form,
            multi_agent: self.agents.len() > 1,
        }
    }

    fn agents(&self) -> Vec<AgentId> {
        self.agents.clone()
    }

    fn header(&self, _: &AgentId) -> String {
        self.spec.header.clone()
    }

    fn grammar(&self) -> ActionGrammar {
        match &self.spec.actions {
            Some(a) => ActionGrammar::choice(a.iter().cloned()),
            None => ActionGrammar::Qa,
        }
    }

    fn few_shot(&self) -> Vec<FewShotExample> {
        self.spec.few_shot.clone()
    }

    fn reset(&mut self, seed: u64) -> Result<BTreeMap<AgentId, Observation>> {
        let reply = self.call(json!({"type": "reset", "seed": seed, "instance": self.index}))?;
        let obs: BTreeMap<String, String> = serde_json::from_value(reply.get("observations").cloned().unwrap_or_default())
            .map_err(|e| Error::Protocol(format!("{}: reset reply: {e}", self.name)))?;
        if obs.is_empty() {
            return Err(Error::Protocol(format!("{}: reset returned no observations", self.name)));
        }
        self.agents = obs.keys().map(|k| AgentId::new(k.clone())).collect();
        self.done = false;
        Ok(obs
            .into_iter()
            .map(|(k, text)| {
                let id = AgentId::new(k);
                (id.clone(), Observation::new(id, 0, text))
            })
            .collect())
    }

    fn step(&mut self, actions: &BTreeMap<AgentId, Action>) -> Result<BTreeMap<AgentId, StepOutcome>> {
        let step = actions.values().map(|a| a.step).max().unwrap_or(0);
        let wire: BTreeMap<&str, &str> = actions.iter().map(|(k, a)| (k.as_str(), a.text.as_str())).collect();
        let reply = self.call(json!({"type": "step", "actions": wire}))?;
        let outcomes: BTreeMap<String, WireOutcome> =
            serde_json::from_value(reply.get("outcomes").cloned().unwrap_or_default())
                .map_err(|e| Error::Protocol(format!("{}: step reply: {e}", self.name)))?;
        let mut out = BTreeMap::new();
        for (k, o) in outcomes {
            let id = AgentId::new(k);
            self.done |= o.terminated || o.truncated;
            out.insert(
                id.clone(),
                StepOutcome {
                    observation: Observation::new(id, step + 1, o.observation),
                    reward: Reward::new(o.reward, step)?,
                    terminated: o.terminated,
                    truncated: o.truncated && !o.terminated,
                },
            );
        }
        Ok(out)
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn score(&self, trajectory: &Trajectory) -> Score {
        let fallback = Score {
            episode_return: trajectory.rewards().iter().sum(),
            success: false,
            joint: None,
        };
        match self.call(json!({"type": "score"})) {
            Ok(v) => Score {
                episode_return: v.get("return").and_then(Value::as_f64).unwrap_or(fallback.episode_return),
                success: v.get("success").and_then(Value::as_bool).unwrap_or(false),
                joint: None,
            },
            Err(e) => {
                warn!("{}: score request failed ({e}); using summed rewards", self.name);
                fallback
            }
        }
    }
}
