//! Iterated prisoner's dilemma between two agents.

use std::collections::BTreeMap;

use crate::env::{Score, StepOutcome, Task, TaskTraits};
use crate::error::{Error, Result};
use crate::prompts::{load_few_shot, ActionGrammar, FewShotExample};
use crate::types::{Action, AgentId, Observation, Reward, Trajectory};

const FEW_SHOT: &str = include_str!("../../assets/fewshot/ipd.jsonl");
pub const DEFAULT_ROUNDS: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Cooperate,
    Defect,
}

impl Move {
    pub fn parse(text: &str) -> Option<Move> {
        match text.trim().to_lowercase().as_str() {
            "cooperate" => Some(Move::Cooperate),
            "defect" => Some(Move::Defect),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Move::Cooperate => "cooperate",
            Move::Defect => "defect",
        }
    }
}

/// Rewards `(first, second)` for one round.
pub fn payoff(first: Move, second: Move) -> (f64, f64) {
    match (first, second) {
        (Move::Cooperate, Move::Cooperate) => (-4.0, -4.0),
        (Move::Defect, Move::Defect) => (-6.0, -6.0),
        (Move::Defect, Move::Cooperate) => (0.0, -10.0),
        (Move::Cooperate, Move::Defect) => (-10.0, 0.0),
    }
}

pub struct IpdTask {
    id: String,
    rounds: u32,
    history: Vec<(Move, Move)>,
    started: bool,
    examples: Vec<FewShotExample>,
}

pub fn players() -> [AgentId; 2] {
    [AgentId::from("agent0"), AgentId::from("agent1")]
}

impl IpdTask {
    pub fn new(id: impl Into<String>, rounds: u32) -> Result<IpdTask> {
        if rounds == 0 {
            return Err(Error::InvalidInput("ipd needs at least one round".into()));
        }
        Ok(IpdTask {
            id: id.into(),
            rounds,
            history: Vec::new(),
            started: false,
            examples: load_few_shot(FEW_SHOT).expect("bundled few-shot file parses"),
        })
    }

    pub fn history(&self) -> &[(Move, Move)] {
        &self.history
    }

    /// Mean payoff per round for each player.
    pub fn mean_payoffs(&self) -> (f64, f64) {
        if self.history.is_empty() {
            return (0.0, 0.0);
        }
        let n = self.history.len() as f64;
        let (a, b) = self
            .history
            .iter()
            .map(|&(x, y)| payoff(x, y))
            .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
        (a / n, b / n)
    }

    fn prompt(&self, me: usize) -> String {
        let round = self.history.len() as u32 + 1;
        match self.history.last() {
            None => format!(
                "Round {round} of {}. This is the first round, your partner has not acted yet.",
                self.rounds
            ),
            Some(&(a, b)) => {
                let (mine, theirs) = if me == 0 { (a, b) } else { (b, a) };
                let got = if me == 0 { payoff(a, b).0 } else { payoff(a, b).1 };
                format!(
                    "Round {round} of {}. In the previous round your partner chose to {} and you chose to {}, \
                     so you received {got}.",
                    self.rounds,
                    theirs.as_str(),
                    mine.as_str()
                )
            }
        }
    }
}

impl Task for IpdTask {
    fn name(&self) -> &str {
        "ipd"
    }

    fn instance_id(&self) -> String {
        self.id.clone()
    }

    fn traits(&self) -> TaskTraits {
        TaskTraits {
            single_step: false,
            free_form: false,
            multi_agent: true,
        }
    }

    fn agents(&self) -> Vec<AgentId> {
        players().to_vec()
    }

    fn header(&self, _: &AgentId) -> String {
        format!(
            "You and a partner are suspects interrogated separately, for {} rounds. Each round you both choose \
             to cooperate (stay silent) or defect (testify). Both cooperate: each gets -4. Both defect: each gets \
             -6. If one defects and the other cooperates, the defector gets 0 and the cooperator -10. Maximise \
             your total reward.",
            self.rounds
        )
    }

    fn grammar(&self) -> ActionGrammar {
        ActionGrammar::choice(["cooperate", "defect"])
    }

    fn few_shot(&self) -> Vec<FewShotExample> {
        self.examples.clone()
    }

    fn reset(&mut self, _seed: u64) -> Result<BTreeMap<AgentId, Observation>> {
        self.history.clear();
        self.started = true;
        Ok(players()
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                let obs = Observation::new(a.clone(), 0, self.prompt(i));
                (a, obs)
            })
            .collect())
    }

    fn step(&mut self, actions: &BTreeMap<AgentId, Action>) -> Result<BTreeMap<AgentId, StepOutcome>> {
        if !self.started || self.is_done() {
            return Err(Error::Protocol(format!("{}: step outside an episode", self.id)));
        }
        let [p0, p1] = players();
        let mv = |p: &AgentId| -> Result<Move> {
            let a = actions
                .get(p)
                .ok_or_else(|| Error::Protocol(format!("missing simultaneous action for {p}")))?;
            Move::parse(&a.text).ok_or_else(|| Error::Protocol(format!("{p}: inadmissible action {:?}", a.text)))
        };
        let (m0, m1) = (mv(&p0)?, mv(&p1)?);
        let step = self.history.len() as u32;
        self.history.push((m0, m1));
        let (r0, r1) = payoff(m0, m1);
        let done = self.is_done();
        let mut out = BTreeMap::new();
        for (i, (agent, r)) in [(p0, r0), (p1, r1)].into_iter().enumerate() {
            let text = if done {
                "The game is over.".to_string()
            } else {
                self.prompt(i)
            };
            out.insert(
                agent.clone(),
                StepOutcome {
                    observation: Observation::new(agent, step + 1, text),
                    reward: Reward::new(r, step)?,
                    terminated: done,
                    truncated: false,
                },
            );
        }
        Ok(out)
    }

    fn is_done(&self) -> bool {
        self.history.len() as u32 >= self.rounds
    }

    /// Return is the per-round mean payoff averaged over both players; the
    /// joint value sums the two per-round means.
    fn score(&self, _trajectory: &Trajectory) -> Score {
        let (a, b) = self.mean_payoffs();
        Score {
            episode_return: (a + b) / 2.0,
            success: false,
            joint: Some(a + b),
        }
    }
}
