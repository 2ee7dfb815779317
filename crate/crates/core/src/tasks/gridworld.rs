//! A small text gridworld with BabyAI-style missions.
//!
//! The room is `width × height` open cells surrounded by walls. Objects
//! block movement except open doors. The agent sees a 7×7 cone in front of
//! it (six cells ahead, three to each side), rendered as sentences.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Score, StepOutcome, Task, TaskTraits};
use crate::error::{Error, Result};
use crate::prompts::{load_few_shot, ActionGrammar, FewShotExample};
use crate::types::{Action, AgentId, Observation, Reward, Trajectory};

const FEW_SHOT: &str = include_str!("../../assets/fewshot/gridworld.jsonl");
pub const MAX_SIDE: i32 = 8;
pub const ACTIONS: [&str; 6] = ["turn left", "turn right", "go forward", "pick up", "drop", "toggle"];
const VIEW_AHEAD: i32 = 6;
const VIEW_SIDE: i32 = 3;
const COLORS: [&str; 6] = ["red", "green", "blue", "purple", "yellow", "grey"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Ball,
    Box,
    Key,
    Door,
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectKind::Ball => "ball",
            ObjectKind::Box => "box",
            ObjectKind::Key => "key",
            ObjectKind::Door => "door",
        })
    }
}

impl FromStr for ObjectKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ball" => Ok(ObjectKind::Ball),
            "box" => Ok(ObjectKind::Box),
            "key" => Ok(ObjectKind::Key),
            "door" => Ok(ObjectKind::Door),
            other => Err(Error::InvalidInput(format!("unknown object kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridObject {
    pub kind: ObjectKind,
    pub color: String,
    pub x: i32,
    pub y: i32,
    /// Doors only.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub open: bool,
}

impl GridObject {
    fn describe(&self) -> String {
        if self.kind == ObjectKind::Door {
            let state = if self.open { "an open" } else { "a closed" };
            format!("{state} {} door", self.color)
        } else {
            format!("a {} {}", self.color, self.kind)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Facing {
    East,
    South,
    West,
    North,
}

impl Facing {
    fn delta(self) -> (i32, i32) {
        match self {
            Facing::East => (1, 0),
            Facing::South => (0, 1),
            Facing::West => (-1, 0),
            Facing::North => (0, -1),
        }
    }

    fn right(self) -> Facing {
        match self {
            Facing::East => Facing::South,
            Facing::South => Facing::West,
            Facing::West => Facing::North,
            Facing::North => Facing::East,
        }
    }

    fn left(self) -> Facing {
        self.right().right().right()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pose {
    pub x: i32,
    pub y: i32,
    pub facing: Facing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mission {
    GoTo { color: String, kind: ObjectKind },
    PickUp { color: String, kind: ObjectKind },
    Open { color: String },
}

impl Mission {
    fn target(&self) -> (&str, ObjectKind) {
        match self {
            Mission::GoTo { color, kind } | Mission::PickUp { color, kind } => (color, *kind),
            Mission::Open { color } => (color, ObjectKind::Door),
        }
    }
}

impl FromStr for Mission {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let words: Vec<&str> = s.trim().trim_end_matches('.').split_whitespace().collect();
        let bad = || Error::InvalidInput(format!("unsupported mission {s:?}"));
        match words.as_slice() {
            ["go", "to", "the", color, kind] => Ok(Mission::GoTo {
                color: color.to_string(),
                kind: kind.parse()?,
            }),
            ["pick", "up", "the", color, kind] => {
                let kind: ObjectKind = kind.parse()?;
                if kind == ObjectKind::Door {
                    return Err(bad());
                }
                Ok(Mission::PickUp {
                    color: color.to_string(),
                    kind,
                })
            }
            ["open", "the", color, "door"] => Ok(Mission::Open {
                color: color.to_string(),
            }),
            _ => Err(bad()),
        }
    }
}

/// A gridworld instance as stored in JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width: i32,
    pub height: i32,
    pub objects: Vec<GridObject>,
    pub agent: Pose,
    pub mission: String,
    pub max_steps: u32,
}

impl GridSpec {
    pub fn validate(&self) -> Result<Mission> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(1..=MAX_SIDE).contains(&self.width) || !(1..=MAX_SIDE).contains(&self.height) {
            return bad(format!("grid {}x{} outside 1..={MAX_SIDE}", self.width, self.height));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        let inside = |x: i32, y: i32| (0..self.width).contains(&x) && (0..self.height).contains(&y);
        if !inside(self.agent.x, self.agent.y) {
            return bad("agent outside the grid".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !inside(o.x, o.y) {
                return bad(format!("object {i} outside the grid"));
            }
            if (o.x, o.y) == (self.agent.x, self.agent.y) {
                return bad(format!("object {i} overlaps the agent"));
            }
            if self.objects[..i].iter().any(|p| (p.x, p.y) == (o.x, o.y)) {
                return bad(format!("object {i} shares a cell"));
            }
        }
        let mission: Mission = self.mission.parse()?;
        let (color, kind) = mission.target();
        let matches = self.objects.iter().filter(|o| o.kind == kind && o.color == color).count();
        if matches != 1 {
            return bad(format!("mission {:?} matches {matches} objects, expected 1", self.mission));
        }
        Ok(mission)
    }

    /// A random solvable layout: three distinct objects, a random pose and a
    /// go-to or pick-up mission for one of them.
    pub fn random(seed: u64) -> GridSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = rng.random_range(5..=7);
        let mut cells: Vec<(i32, i32)> = (0..side).flat_map(|x| (0..side).map(move |y| (x, y))).collect();
        cells.shuffle(&mut rng);
        let mut pairs: Vec<(ObjectKind, &str)> = [ObjectKind::Ball, ObjectKind::Box, ObjectKind::Key]
            .into_iter()
            .flat_map(|k| COLORS.into_iter().map(move |c| (k, c)))
            .collect();
        pairs.shuffle(&mut rng);
        let objects: Vec<GridObject> = pairs
            .iter()
            .take(3)
            .zip(&cells)
            .map(|(&(kind, color), &(x, y))| GridObject {
                kind,
                color: color.into(),
                x,
                y,
                open: false,
            })
            .collect();
        let (ax, ay) = cells[3];
        let facing = *[Facing::East, Facing::South, Facing::West, Facing::North]
            .choose(&mut rng)
            .expect("non-empty");
        let target = &objects[0];
        let verb = if rng.random_bool(0.5) { "go to" } else { "pick up" };
        GridSpec {
            width: side,
            height: side,
            mission: format!("{verb} the {} {}", target.color, target.kind),
            objects,
            agent: Pose { x: ax, y: ay, facing },
            max_steps: 20,
        }
    }
}

#[derive(Debug, Clone)]
struct GridState {
    spec: GridSpec,
    mission: Mission,
    carrying: Option<GridObject>,
    steps_used: u32,
    done: bool,
    success: bool,
}

impl GridState {
    fn front(&self) -> (i32, i32) {
        let (dx, dy) = self.spec.agent.facing.delta();
        (self.spec.agent.x + dx, self.spec.agent.y + dy)
    }

    fn inside(&self, (x, y): (i32, i32)) -> bool {
        (0..self.spec.width).contains(&x) && (0..self.spec.height).contains(&y)
    }

    fn object_at(&self, cell: (i32, i32)) -> Option<usize> {
        self.spec.objects.iter().position(|o| (o.x, o.y) == cell)
    }

    fn mission_done(&self) -> bool {
        let (color, kind) = self.mission.target();
        let is_target = |o: &GridObject| o.kind == kind && o.color == color;
        match &self.mission {
            Mission::GoTo { .. } => self.object_at(self.front()).is_some_and(|i| is_target(&self.spec.objects[i])),
            Mission::PickUp { .. } => self.carrying.as_ref().is_some_and(is_target),
            Mission::Open { .. } => self.spec.objects.iter().any(|o| is_target(o) && o.open),
        }
    }

    fn apply(&mut self, action: &str) {
        let front = self.front();
        let pose = &mut self.spec.agent;
        match action {
            "turn left" => pose.facing = pose.facing.left(),
            "turn right" => pose.facing = pose.facing.right(),
            "go forward" => {
                let blocked = match self.spec.objects.iter().find(|o| (o.x, o.y) == front) {
                    Some(o) => !(o.kind == ObjectKind::Door && o.open),
                    None => false,
                };
                if !blocked && (0..self.spec.width).contains(&front.0) && (0..self.spec.height).contains(&front.1) {
                    self.spec.agent.x = front.0;
                    self.spec.agent.y = front.1;
                }
            }
            "pick up" => {
                if self.carrying.is_none() {
                    if let Some(i) = self.object_at(front) {
                        if self.spec.objects[i].kind != ObjectKind::Door {
                            self.carrying = Some(self.spec.objects.remove(i));
                        }
                    }
                }
            }
            "drop" => {
                if self.inside(front) && self.object_at(front).is_none() {
                    if let Some(mut o) = self.carrying.take() {
                        o.x = front.0;
                        o.y = front.1;
                        self.spec.objects.push(o);
                    }
                }
            }
            "toggle" => {
                if let Some(i) = self.object_at(front) {
                    let o = &mut self.spec.objects[i];
                    if o.kind == ObjectKind::Door {
                        o.open = !o.open;
                    }
                }
            }
            _ => {}
        }
    }

    fn render(&self) -> String {
        let pose = self.spec.agent;
        let (fx, fy) = pose.facing.delta();
        let (rx, ry) = pose.facing.right().delta();
        let mut lines = vec![format!("Goal: {}.", self.spec.mission.trim_end_matches('.'))];
        let mut wall = 1;
        while self.inside((pose.x + fx * wall, pose.y + fy * wall)) {
            wall += 1;
        }
        if wall <= VIEW_AHEAD {
            lines.push(format!("You see a wall {}.", steps(wall, "forward")));
        }
        let mut seen: Vec<(i32, i32, String)> = self
            .spec
            .objects
            .iter()
            .filter_map(|o| {
                let (dx, dy) = (o.x - pose.x, o.y - pose.y);
                let ahead = dx * fx + dy * fy;
                let side = dx * rx + dy * ry;
                ((0..=VIEW_AHEAD).contains(&ahead) && side.abs() <= VIEW_SIDE).then(|| (ahead, side, o.describe()))
            })
            .collect();
        seen.sort();
        for (ahead, side, what) in seen {
            let mut parts = Vec::new();
            if side < 0 {
                parts.push(steps(-side, "left"));
            } else if side > 0 {
                parts.push(steps(side, "right"));
            }
            if ahead > 0 {
                parts.push(steps(ahead, "forward"));
            }
            lines.push(format!("You see {what} {}.", parts.join(" and ")));
        }
        lines.push(match &self.carrying {
            Some(o) => format!("You are carrying {}.", o.describe()),
            None => "You are carrying nothing.".into(),
        });
        lines.join("\n")
    }
}

fn steps(n: i32, dir: &str) -> String {
    if n == 1 {
        format!("1 step {dir}")
    } else {
        format!("{n} steps {dir}")
    }
}

/// Success reward: full credit shrinking linearly to 0.1 at the step limit.
pub fn success_reward(steps_used: u32, max_steps: u32) -> f64 {
    1.0 - 0.9 * (steps_used as f64 / max_steps as f64)
}

enum Layout {
    Fixed(GridSpec),
    Random { index: u64 },
}

pub struct GridWorldTask {
    id: String,
    layout: Layout,
    state: Option<GridState>,
    examples: Vec<FewShotExample>,
}

fn agent() -> AgentId {
    AgentId::from("agent")
}

impl GridWorldTask {
    pub fn from_spec(id: impl Into<String>, spec: GridSpec) -> Result<GridWorldTask> {
        spec.validate()?;
        Ok(GridWorldTask {
            id: id.into(),
            layout: Layout::Fixed(spec),
            state: None,
            examples: load_few_shot(FEW_SHOT).expect("bundled few-shot file parses"),
        })
    }

    /// Instance `index` of the random family; the layout depends on the reset seed.
    pub fn random(index: u64) -> GridWorldTask {
        GridWorldTask {
            id: format!("gridworld/{index}"),
            layout: Layout::Random { index },
            state: None,
            examples: load_few_shot(FEW_SHOT).expect("bundled few-shot file parses"),
        }
    }

    pub fn pose(&self) -> Option<Pose> {
        self.state.as_ref().map(|s| s.spec.agent)
    }

    fn observe(&self, prefix: Option<String>) -> Observation {
        let st = self.state.as_ref().expect("reset before observing");
        let mut text = st.render();
        if let Some(p) = prefix {
            text = format!("{p}\n{text}");
        }
        Observation::new(agent(), st.steps_used, text)
    }
}

impl Task for GridWorldTask {
    fn name(&self) -> &str {
        "gridworld"
    }

    fn instance_id(&self) -> String {
        self.id.clone()
    }

    fn traits(&self) -> TaskTraits {
        TaskTraits {
            single_step: false,
            free_form: false,
            multi_agent: false,
        }
    }

    fn agents(&self) -> Vec<AgentId> {
        vec![agent()]
    }

    fn header(&self, _: &AgentId) -> String {
        format!(
            "You are in a room surrounded by walls. Complete the goal in as few steps as possible. \
             Objects block your way; open doors do not. A 'go to' goal is complete when the object is \
             directly in front of you. Available actions: {}.",
            ACTIONS.join(", ")
        )
    }

    fn grammar(&self) -> ActionGrammar {
        ActionGrammar::choice(ACTIONS)
    }

    fn few_shot(&self) -> Vec<FewShotExample> {
        self.examples.clone()
    }

    fn reset(&mut self, seed: u64) -> Result<BTreeMap<AgentId, Observation>> {
        let spec = match &self.layout {
            Layout::Fixed(s) => s.clone(),
            Layout::Random { index } => {
                let mut s = GridSpec::random(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                // Re-face until the goal is not already met at the start.
                for _ in 0..4 {
                    let st = GridState {
                        mission: s.validate()?,
                        spec: s.clone(),
                        carrying: None,
                        steps_used: 0,
                        done: false,
                        success: false,
                    };
                    if !st.mission_done() {
                        break;
                    }
                    s.agent.facing = s.agent.facing.right();
                }
                s
            }
        };
        let mission = spec.validate()?;
        self.state = Some(GridState {
            spec,
            mission,
            carrying: None,
            steps_used: 0,
            done: false,
            success: false,
        });
        Ok(BTreeMap::from([(agent(), self.observe(None))]))
    }

    fn step(&mut self, actions: &BTreeMap<AgentId, Action>) -> Result<BTreeMap<AgentId, StepOutcome>> {
        let action = actions
            .get(&agent())
            .ok_or_else(|| Error::Protocol("missing action for agent".into()))?;
        let st = self
            .state
            .as_mut()
            .filter(|s| !s.done)
            .ok_or_else(|| Error::Protocol(format!("{}: step outside an episode", self.id)))?;
        let command = action.text.trim().to_lowercase();
        let admissible = ACTIONS.contains(&command.as_str());
        if admissible {
            st.apply(&command);
        }
        st.steps_used += 1;
        let step = st.steps_used - 1;
        let (reward, terminated, truncated) = if st.mission_done() {
            st.success = true;
            (success_reward(st.steps_used, st.spec.max_steps), true, false)
        } else if st.steps_used >= st.spec.max_steps {
            (0.0, false, true)
        } else {
            (0.0, false, false)
        };
        st.done = terminated || truncated;
        let prefix = (!admissible).then(|| {
            format!(
                "\"{}\" is not an admissible action. Admissible actions: {}.",
                action.text.trim(),
                ACTIONS.join(", ")
            )
        });
        let outcome = StepOutcome {
            observation: self.observe(prefix),
            reward: Reward::new(reward, step)?,
            terminated,
            truncated,
        };
        Ok(BTreeMap::from([(agent(), outcome)]))
    }

    fn is_done(&self) -> bool {
        self.state.as_ref().is_some_and(|s| s.done)
    }

    fn score(&self, trajectory: &Trajectory) -> Score {
        Score {
            episode_return: trajectory.rewards().iter().sum(),
            success: self.state.as_ref().is_some_and(|s| s.success),
            joint: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::environment_step;

    fn corridor() -> GridSpec {
        GridSpec {
            width: 5,
            height: 3,
            objects: vec![
                GridObject {
                    kind: ObjectKind::Ball,
                    color: "red".into(),
                    x: 3,
                    y: 0,
                    open: false,
                },
                GridObject {
                    kind: ObjectKind::Door,
                    color: "blue".into(),
                    x: 0,
                    y: 2,
                    open: false,
                },
            ],
            agent: Pose {
                x: 0,
                y: 0,
                facing: Facing::East,
            },
            mission: "go to the red ball".into(),
            max_steps: 20,
        }
    }

    fn act(task: &mut GridWorldTask, text: &str) -> StepOutcome {
        let acts = BTreeMap::from([(agent(), Action::new(agent(), 0, text))]);
        environment_step(task, &acts).unwrap().remove(&agent()).unwrap()
    }

    #[test]
    fn reward_formula() {
        assert!((success_reward(4, 20) - 0.82).abs() < 1e-12);
        for s in 1..20 {
            assert!(success_reward(s, 20) > success_reward(s + 1, 20));
        }
    }

    #[test]
    fn reach_goal() {
        let mut t = GridWorldTask::from_spec("corridor", corridor()).unwrap();
        let obs = t.reset(0).unwrap().remove(&agent()).unwrap();
        assert!(obs.text.contains("You see a red ball 3 steps forward."), "{}", obs.text);
        assert!(obs.text.contains("You see a wall 5 steps forward."), "{}", obs.text);
        assert_eq!(act(&mut t, "go forward").reward.value, 0.0);
        let out = act(&mut t, "go forward");
        assert!(out.terminated);
        assert!((out.reward.value - success_reward(2, 20)).abs() < 1e-12);
    }

    #[test]
    fn walls_and_objects_block() {
        let mut t = GridWorldTask::from_spec("corridor", corridor()).unwrap();
        t.reset(0).unwrap();
        act(&mut t, "turn left");
        act(&mut t, "go forward");
        assert_eq!(t.pose().unwrap(), Pose { x: 0, y: 0, facing: Facing::North });
        act(&mut t, "turn left");
        act(&mut t, "turn left");
        act(&mut t, "go forward");
        let out = act(&mut t, "go forward");
        assert_eq!(t.pose().unwrap().y, 1, "closed door blocks");
        assert!(out.observation.text.contains("a closed blue door 1 step forward"), "{}", out.observation.text);
        act(&mut t, "toggle");
        act(&mut t, "go forward");
        assert_eq!(t.pose().unwrap().y, 2, "open door passable");
    }

    #[test]
    fn four_left_turns_are_identity() {
        let mut t = GridWorldTask::from_spec("corridor", corridor()).unwrap();
        t.reset(0).unwrap();
        let start = t.pose();
        for _ in 0..4 {
            act(&mut t, "turn left");
        }
        assert_eq!(t.pose(), start);
    }

    #[test]
    fn inadmissible_is_noop_with_reminder() {
        let mut t = GridWorldTask::from_spec("corridor", corridor()).unwrap();
        t.reset(0).unwrap();
        let out = act(&mut t, "fly");
        assert!(out.observation.text.contains("not an admissible action"));
        assert_eq!(t.pose().unwrap(), corridor().agent);
    }

    #[test]
    fn truncation_gives_zero() {
        let mut spec = corridor();
        spec.max_steps = 3;
        let mut t = GridWorldTask::from_spec("short", spec).unwrap();
        t.reset(0).unwrap();
        act(&mut t, "turn left");
        act(&mut t, "turn left");
        let out = act(&mut t, "turn left");
        assert!(out.truncated && !out.terminated);
        assert_eq!(out.reward.value, 0.0);
    }

    #[test]
    fn spec_validation() {
        let mut s = corridor();
        s.width = 9;
        assert!(s.validate().is_err());
        let mut s = corridor();
        s.mission = "go to the green ball".into();
        assert!(s.validate().is_err());
        let json = serde_json::to_string(&corridor()).unwrap();
        let back: GridSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, corridor());
    }

    #[test]
    fn random_layouts_are_seeded() {
        let mut a = GridWorldTask::random(0);
        let mut b = GridWorldTask::random(0);
        assert_eq!(a.reset(7).unwrap(), b.reset(7).unwrap());
        for seed in 0..50 {
            let spec = GridSpec::random(seed);
            spec.validate().unwrap();
        }
    }
}
