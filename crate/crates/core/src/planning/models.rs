//! Symbolic search models with known optima, used as planning fixtures.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{Proposal, SearchModel};
use crate::error::{Error, Result};

/// Reach `target` from `start` using `*2` and `+1` within `max_steps`.
/// Reward is 1 on reaching the target and 0 on overshooting or running out
/// of steps. Doubling is proposed before incrementing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Countdown {
    pub start: i64,
    pub target: i64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CountdownState {
    pub value: i64,
    pub steps: usize,
}

impl Countdown {
    pub const ACTIONS: [&'static str; 2] = ["*2", "+1"];

    pub fn new(start: i64, target: i64, max_steps: usize) -> Self {
        Countdown {
            start,
            target,
            max_steps,
        }
    }

    pub fn root(&self) -> CountdownState {
        CountdownState {
            value: self.start,
            steps: 0,
        }
    }
}

impl SearchModel for Countdown {
    type State = CountdownState;

    fn propose(&self, state: &CountdownState) -> Result<Vec<Proposal>> {
        if self.terminal(state).is_some() {
            return Ok(Vec::new());
        }
        Ok(Self::ACTIONS.iter().map(|a| Proposal::uniform(*a)).collect())
    }

    fn transition(&self, state: &CountdownState, action: &str) -> Result<CountdownState> {
        let value = match action {
            "*2" => state.value * 2,
            "+1" => state.value + 1,
            other => return Err(Error::InvalidInput(format!("countdown has no action {other:?}"))),
        };
        Ok(CountdownState {
            value,
            steps: state.steps + 1,
        })
    }

    /// Closeness to the target, kept below the success reward.
    fn evaluate(&self, state: &CountdownState) -> Result<f64> {
        if state.value > self.target || self.target <= 0 {
            return Ok(0.0);
        }
        Ok(0.5 * state.value as f64 / self.target as f64)
    }

    fn terminal(&self, state: &CountdownState) -> Option<f64> {
        if state.value == self.target {
            Some(1.0)
        } else if state.value > self.target || state.steps >= self.max_steps {
            Some(0.0)
        } else {
            None
        }
    }
}

pub type Q = Ratio<i64>;

/// Combine the numbers pairwise with `+ - * /` until one remains; reward 1
/// when it equals the target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Game24 {
    pub numbers: Vec<i64>,
    #[serde(default = "default_target")]
    pub target: i64,
}

fn default_target() -> i64 {
    24
}

/// Remaining numbers, each with the expression that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Game24State {
    pub items: Vec<(Q, String)>,
}

impl Game24State {
    pub fn expression(&self) -> Option<&str> {
        match self.items.as_slice() {
            [(_, e)] => Some(e),
            _ => None,
        }
    }
}

impl Game24 {
    pub fn new(numbers: impl Into<Vec<i64>>) -> Self {
        Game24 {
            numbers: numbers.into(),
            target: default_target(),
        }
    }

    pub fn root(&self) -> Game24State {
        Game24State {
            items: self.numbers.iter().map(|&n| (Q::from_integer(n), n.to_string())).collect(),
        }
    }

    /// Every move from `state` with the state it leads to, in a fixed order.
    fn moves(state: &Game24State) -> Vec<(String, Game24State)> {
        let items = &state.items;
        let mut out = Vec::new();
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                let (a, ea) = &items[i];
                let (b, eb) = &items[j];
                let mut results: Vec<(Q, &str, bool)> = vec![(a + b, "+", false), (a * b, "*", false)];
                results.push((a - b, "-", false));
                results.push((b - a, "-", true));
                if *b.numer() != 0 {
                    results.push((a / b, "/", false));
                }
                if *a.numer() != 0 {
                    results.push((b / a, "/", true));
                }
                for (value, op, swapped) in results {
                    let (x, y, ex, ey) = if swapped { (b, a, eb, ea) } else { (a, b, ea, eb) };
                    let label = format!("{x} {op} {y} = {value}");
                    let mut rest: Vec<(Q, String)> = items
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != i && *k != j)
                        .map(|(_, it)| it.clone())
                        .collect();
                    rest.push((value, format!("({ex} {op} {ey})")));
                    out.push((label, Game24State { items: rest }));
                }
            }
        }
        out
    }
}

impl SearchModel for Game24 {
    type State = Game24State;

    fn propose(&self, state: &Game24State) -> Result<Vec<Proposal>> {
        Ok(Self::moves(state).into_iter().map(|(a, _)| Proposal::uniform(a)).collect())
    }

    fn transition(&self, state: &Game24State, action: &str) -> Result<Game24State> {
        Self::moves(state)
            .into_iter()
            .find(|(a, _)| a == action)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::InvalidInput(format!("illegal move {action:?}")))
    }

    /// Closeness of the nearest remaining number to the target.
    fn evaluate(&self, state: &Game24State) -> Result<f64> {
        let target = Q::from_integer(self.target);
        let gap = state
            .items
            .iter()
            .map(|(v, _)| {
                let d = *v - target;
                let d = if d < Q::from_integer(0) { -d } else { d };
                *d.numer() as f64 / *d.denom() as f64
            })
            .fold(f64::INFINITY, f64::min);
        Ok(0.5 / (1.0 + gap))
    }

    fn terminal(&self, state: &Game24State) -> Option<f64> {
        match state.items.as_slice() {
            [(v, _)] => Some(if *v == Q::from_integer(self.target) { 1.0 } else { 0.0 }),
            [] => Some(0.0),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn countdown_dynamics() {
        let m = Countdown::new(1, 6, 4);
        let s = m.transition(&m.root(), "*2").unwrap();
        let s = m.transition(&s, "+1").unwrap();
        let s = m.transition(&s, "*2").unwrap();
        assert_eq!(s.value, 6);
        assert_eq!(m.terminal(&s), Some(1.0));
        assert!(m.transition(&s, "-1").is_err());
    }

    #[test]
    fn game24_moves_are_exact() {
        let m = Game24::new([1, 3]);
        let labels: Vec<String> = m.propose(&m.root()).unwrap().into_iter().map(|p| p.action).collect();
        assert_eq!(labels, ["1 + 3 = 4", "1 * 3 = 3", "1 - 3 = -2", "3 - 1 = 2", "1 / 3 = 1/3", "3 / 1 = 3"]);
        let s = m.transition(&m.root(), "1 / 3 = 1/3").unwrap();
        assert_eq!(s.expression(), Some("(1 / 3)"));
    }
}
