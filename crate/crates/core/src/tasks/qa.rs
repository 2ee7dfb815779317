//! Single-step question answering over GSM8K-format JSONL.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::env::{Score, StepOutcome, Task, TaskTraits};
use crate::error::{Error, Result};
use crate::prompts::{canonical_answer, load_few_shot, ActionGrammar, FewShotExample};
use crate::types::{Action, AgentId, Observation, Reward, Trajectory};

const FEW_SHOT: &str = include_str!("../../assets/fewshot/gsm8k.jsonl");
/// A handful of GSM8K-format rows shipped for smoke runs.
pub const BUNDLED_GSM8K: &str = include_str!("../../assets/data/gsm8k_mini.jsonl");

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub answer: String,
}

/// An immutable, shareable list of questions.
#[derive(Debug, Clone)]
pub struct QaDataset {
    pub name: String,
    pub split: Split,
    pub items: Arc<Vec<QaItem>>,
}

/// Gold answer normal form: text after the last `####`, commas removed,
/// integers printed canonically.
pub fn canonical_gold(raw: &str) -> String {
    let tail = raw.rsplit("####").next().unwrap_or(raw);
    let no_commas: String = tail.chars().filter(|c| *c != ',').collect();
    canonical_answer(&no_commas)
}

pub fn load_qa(path: &Path, split: Split) -> Result<QaDataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "qa".into());
    parse_qa(&name, &text, split)
}

/// Parses JSONL rows `{question, answer}`; errors carry the line number.
pub fn parse_qa(name: &str, text: &str, split: Split) -> Result<QaDataset> {
    #[derive(Deserialize)]
    struct Row {
        question: String,
        answer: serde_json::Value,
    }
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Row =
            serde_json::from_str(line).map_err(|e| Error::InvalidInput(format!("{name} line {}: {e}", i + 1)))?;
        let answer = match row.answer {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(Error::InvalidInput(format!(
                    "{name} line {}: answer must be a string or number, got {other}",
                    i + 1
                )))
            }
        };
        if !seen.insert(row.question.clone()) {
            info!("{name} line {}: duplicate question kept", i + 1);
        }
        items.push(QaItem {
            question: row.question,
            answer: canonical_gold(&answer),
        });
    }
    Ok(QaDataset {
        name: name.to_string(),
        split,
        items: Arc::new(items),
    })
}

pub struct QaTask {
    dataset: String,
    index: usize,
    item: QaItem,
    examples: Vec<FewShotExample>,
    done: bool,
    started: bool,
    correct: bool,
}

fn agent() -> AgentId {
    AgentId::from("agent")
}

impl QaTask {
    pub fn new(dataset: &QaDataset, index: usize) -> Result<QaTask> {
        let item = dataset
            .items
            .get(index)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("{}/{index}", dataset.name)))?;
        Ok(QaTask {
            dataset: dataset.name.clone(),
            index,
            item,
            examples: load_few_shot(FEW_SHOT).expect("bundled few-shot file parses"),
            done: false,
            started: false,
            correct: false,
        })
    }

    pub fn gold(&self) -> &str {
        &self.item.answer
    }
}

impl Task for QaTask {
    fn name(&self) -> &str {
        &self.dataset
    }

    fn instance_id(&self) -> String {
        format!("{}/{}", self.dataset, self.index)
    }

    fn traits(&self) -> TaskTraits {
        TaskTraits {
            single_step: true,
            free_form: false,
            multi_agent: false,
        }
    }

    fn agents(&self) -> Vec<AgentId> {
        vec![agent()]
    }

    fn header(&self, _: &AgentId) -> String {
        "Solve the math word problem. Work out the answer and give it as a single number.".into()
    }

    fn grammar(&self) -> ActionGrammar {
        ActionGrammar::Qa
    }

    fn few_shot(&self) -> Vec<FewShotExample> {
        self.examples.clone()
    }

    fn reset(&mut self, _seed: u64) -> Result<BTreeMap<AgentId, Observation>> {
        self.done = false;
        self.started = true;
        self.correct = false;
        let obs = Observation::new(agent(), 0, format!("Question: {}", self.item.question));
        Ok(BTreeMap::from([(agent(), obs)]))
    }

    fn step(&mut self, actions: &BTreeMap<AgentId, Action>) -> Result<BTreeMap<AgentId, StepOutcome>> {
        if !self.started || self.done {
            return Err(Error::Protocol(format!("{}: step outside an episode", self.instance_id())));
        }
        let action = actions
            .get(&agent())
            .ok_or_else(|| Error::Protocol("missing action for agent".into()))?;
        self.correct = canonical_answer(&action.text) == self.item.answer;
        self.done = true;
        let reward = if self.correct { 1.0 } else { 0.0 };
        let outcome = StepOutcome {
            observation: Observation::new(agent(), 1, "The episode is over."),
            reward: Reward::new(reward, 0)?,
            terminated: true,
            truncated: false,
        };
        Ok(BTreeMap::from([(agent(), outcome)]))
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn score(&self, trajectory: &Trajectory) -> Score {
        let ret: f64 = trajectory.rewards().iter().sum();
        Score {
            episode_return: ret,
            success: ret == 1.0,
            joint: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{environment_reset, environment_step};

    #[test]
    fn gold_canonicalisation() {
        assert_eq!(canonical_gold("#### 72"), "72");
        assert_eq!(canonical_gold("work\n#### 3,600"), "3600");
        assert_eq!(canonical_gold("18"), "18");
    }

    #[test]
    fn bundled_dataset_loads() {
        let ds = parse_qa("gsm8k", BUNDLED_GSM8K, Split::Test).unwrap();
        assert!(ds.items.len() >= 5);
        assert_eq!(ds.items[0].answer, "72");
        assert!(ds.items.iter().all(|i| !i.answer.contains(',')));
    }

    #[test]
    fn malformed_row_names_line() {
        let err = parse_qa("x", "{\"question\":\"a\",\"answer\":\"1\"}\n{oops}\n", Split::Test).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(parse_qa("x", "", Split::Train).unwrap().items.is_empty());
    }

    #[test]
    fn one_step_scoring() {
        let ds = parse_qa("d", "{\"question\":\"q\",\"answer\":\"#### 72\"}\n", Split::Test).unwrap();
        for (answer, reward) in [("72", 1.0), ("72.0", 1.0), ("71", 0.0)] {
            let mut t = QaTask::new(&ds, 0).unwrap();
            environment_reset(&mut t, 0).unwrap();
            let acts = BTreeMap::from([(agent(), Action::new(agent(), 0, answer))]);
            let out = environment_step(&mut t, &acts).unwrap();
            assert_eq!(out[&agent()].reward.value, reward);
            assert!(out[&agent()].terminated);
            assert!(matches!(environment_step(&mut t, &acts), Err(Error::Protocol(_))));
        }
        assert!(matches!(QaTask::new(&ds, 5), Err(Error::NotFound(_))));
    }
}
