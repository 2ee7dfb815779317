//! Tree search over a generative model: breadth-first beam search,
//! depth-first search with pruning, and UCT Monte-Carlo tree search.
//!
//! The same [`SearchModel`] interface serves symbolic puzzles and
//! LLM-backed models where the language model proposes actions and rates
//! states.

mod llm_model;
pub mod models;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use llm_model::{plan_then_act, Commit, LlmPlanState, LlmSearchModel, PlanOutcome, PlanningSettings};

/// A candidate action with its (unnormalised) prior weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub action: String,
    pub prior: f64,
}

impl Proposal {
    pub fn new(action: impl Into<String>, prior: f64) -> Self {
        Proposal {
            action: action.into(),
            prior,
        }
    }

    pub fn uniform(action: impl Into<String>) -> Self {
        Proposal::new(action, 1.0)
    }
}

/// Policy, dynamics and value functions for search.
pub trait SearchModel {
    type State: Clone;

    fn propose(&self, state: &Self::State) -> Result<Vec<Proposal>>;
    /// Must be deterministic for a fixed model.
    fn transition(&self, state: &Self::State, action: &str) -> Result<Self::State>;
    fn evaluate(&self, state: &Self::State) -> Result<f64>;
    /// `Some(reward)` when the state ends the episode.
    fn terminal(&self, state: &Self::State) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBudget {
    pub max_expansions: usize,
    pub max_depth: usize,
    /// Beam width for BFS, children per node for DFS and MCTS.
    pub width: usize,
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_expansions", self.max_expansions),
            ("max_depth", self.max_depth),
            ("width", self.width),
        ] {
            if v == 0 {
                return Err(Error::config(format!("planner.{name}"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SearchStats {
    /// Calls to `propose` on tree nodes (rollouts excluded).
    pub expansions: usize,
    pub evaluations: usize,
    /// Deepest node generated, in actions from the root.
    pub max_depth: usize,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanResult {
    pub actions: Vec<String>,
    pub value: f64,
    pub stats: SearchStats,
    /// Root children with their visit counts; filled by MCTS only.
    pub root_visits: Vec<(String, u32)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Bfs,
    Dfs,
    Mcts,
}

/// The `planner:` block of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub algorithm: Algorithm,
    pub max_expansions: usize,
    pub max_depth: usize,
    pub beam_width: usize,
    pub branch_cap: usize,
    pub c_uct: f64,
    /// DFS abandons children valued below this; no pruning when absent.
    pub prune_threshold: Option<f64>,
    pub rollout_depth: usize,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            algorithm: Algorithm::Bfs,
            max_expansions: 100,
            max_depth: 4,
            beam_width: 4,
            branch_cap: 4,
            c_uct: 1.4,
            prune_threshold: None,
            rollout_depth: 0,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn budget(&self) -> SearchBudget {
        SearchBudget {
            max_expansions: self.max_expansions,
            max_depth: self.max_depth,
            width: match self.algorithm {
                Algorithm::Bfs => self.beam_width,
                Algorithm::Dfs | Algorithm::Mcts => self.branch_cap,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.budget().validate()?;
        if !(self.c_uct >= 0.0 && self.c_uct.is_finite()) {
            return Err(Error::config("planner.c_uct", "must be a finite non-negative number"));
        }
        Ok(())
    }

    pub fn plan<M: SearchModel>(&self, model: &M, root: M::State) -> Result<PlanResult> {
        self.validate()?;
        let budget = self.budget();
        match self.algorithm {
            Algorithm::Bfs => bfs_plan(model, root, &budget),
            Algorithm::Dfs => dfs_plan(model, root, &budget, self.prune_threshold.unwrap_or(f64::NEG_INFINITY)),
            Algorithm::Mcts => mcts_plan(
                model,
                root,
                &budget,
                &MctsParams {
                    c_uct: self.c_uct,
                    rollout_depth: self.rollout_depth,
                    seed: self.seed,
                },
            ),
        }
    }
}

/// Best leaf so far: higher value wins, then the shorter path, then
/// whichever was found first.
#[derive(Default)]
struct Best {
    found: Option<(Vec<String>, f64)>,
}

impl Best {
    fn offer(&mut self, actions: &[String], value: f64) {
        let better = match &self.found {
            None => true,
            Some((a, v)) => value > *v || (value == *v && actions.len() < a.len()),
        };
        if better {
            self.found = Some((actions.to_vec(), value));
        }
    }
}

fn checked(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Invariant(format!("{what} returned non-finite value {value}")))
    }
}

fn terminal_root<M: SearchModel>(model: &M, root: &M::State) -> Option<PlanResult> {
    model.terminal(root).map(|r| PlanResult {
        actions: Vec::new(),
        value: r,
        stats: SearchStats {
            nodes: 1,
            ..SearchStats::default()
        },
        root_visits: Vec::new(),
    })
}

fn no_root_actions() -> Error {
    Error::NoPlan("the model proposed no actions at the root".into())
}

struct Frontier<S> {
    state: S,
    actions: Vec<String>,
    score: f64,
}

/// Level-by-level expansion keeping the `width` best nodes per depth.
pub fn bfs_plan<M: SearchModel>(model: &M, root: M::State, budget: &SearchBudget) -> Result<PlanResult> {
    budget.validate()?;
    if let Some(done) = terminal_root(model, &root) {
        return Ok(done);
    }
    let mut stats = SearchStats {
        nodes: 1,
        ..SearchStats::default()
    };
    let mut best = Best::default();
    let mut frontier = vec![Frontier {
        state: root,
        actions: Vec::new(),
        score: f64::NEG_INFINITY,
    }];

    for depth in 0..budget.max_depth {
        let mut next = Vec::new();
        let mut expanded = 0;
        for node in &frontier {
            if stats.expansions == budget.max_expansions {
                break;
            }
            let proposals = model.propose(&node.state)?;
            stats.expansions += 1;
            expanded += 1;
            if proposals.is_empty() {
                if depth == 0 {
                    return Err(no_root_actions());
                }
                best.offer(&node.actions, node.score);
                continue;
            }
            for p in proposals {
                let state = model.transition(&node.state, &p.action)?;
                let mut actions = node.actions.clone();
                actions.push(p.action);
                stats.nodes += 1;
                stats.max_depth = stats.max_depth.max(actions.len());
                match model.terminal(&state) {
                    Some(r) => best.offer(&actions, checked(r, "terminal")?),
                    None => {
                        let score = checked(model.evaluate(&state)?, "evaluate")?;
                        stats.evaluations += 1;
                        next.push(Frontier { state, actions, score });
                    }
                }
            }
        }
        // Nodes the budget did not reach are scored as they stand.
        for node in &frontier[expanded..] {
            best.offer(&node.actions, node.score);
        }
        next.sort_by(|a, b| b.score.total_cmp(&a.score));
        next.truncate(budget.width);
        frontier = next;
        if frontier.is_empty() || stats.expansions == budget.max_expansions {
            break;
        }
    }
    for node in &frontier {
        best.offer(&node.actions, node.score);
    }
    finish(best, stats)
}

fn finish(best: Best, stats: SearchStats) -> Result<PlanResult> {
    let (actions, value) = best
        .found
        .ok_or_else(|| Error::NoPlan("search ended without a scored leaf".into()))?;
    Ok(PlanResult {
        actions,
        value,
        stats,
        root_visits: Vec::new(),
    })
}

/// Depth-first search over at most `width` children per node, in proposal
/// order, abandoning children valued below `prune_threshold`.
pub fn dfs_plan<M: SearchModel>(
    model: &M,
    root: M::State,
    budget: &SearchBudget,
    prune_threshold: f64,
) -> Result<PlanResult> {
    budget.validate()?;
    if let Some(done) = terminal_root(model, &root) {
        return Ok(done);
    }
    let mut search = Dfs {
        model,
        budget,
        prune_threshold,
        stats: SearchStats {
            nodes: 1,
            ..SearchStats::default()
        },
        best: Best::default(),
    };
    let mut path = Vec::new();
    search.visit(&root, &mut path, f64::NEG_INFINITY)?;
    finish(search.best, search.stats)
}

struct Dfs<'m, M: SearchModel> {
    model: &'m M,
    budget: &'m SearchBudget,
    prune_threshold: f64,
    stats: SearchStats,
    best: Best,
}

impl<M: SearchModel> Dfs<'_, M> {
    fn visit(&mut self, state: &M::State, path: &mut Vec<String>, score: f64) -> Result<()> {
        let proposals = self.model.propose(state)?;
        self.stats.expansions += 1;
        if proposals.is_empty() {
            if path.is_empty() {
                return Err(no_root_actions());
            }
            self.best.offer(path, score);
            return Ok(());
        }
        for p in proposals.into_iter().take(self.budget.width) {
            let child = self.model.transition(state, &p.action)?;
            path.push(p.action);
            self.stats.nodes += 1;
            self.stats.max_depth = self.stats.max_depth.max(path.len());
            let terminal = self.model.terminal(&child);
            let value = match terminal {
                Some(r) => checked(r, "terminal")?,
                None => {
                    self.stats.evaluations += 1;
                    checked(self.model.evaluate(&child)?, "evaluate")?
                }
            };
            if value >= self.prune_threshold {
                let leaf = terminal.is_some()
                    || path.len() >= self.budget.max_depth
                    || self.stats.expansions >= self.budget.max_expansions;
                if leaf {
                    self.best.offer(path, value);
                } else {
                    self.visit(&child, path, value)?;
                }
            }
            path.pop();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MctsParams {
    pub c_uct: f64,
    /// Random playout length from each new leaf; 0 uses `evaluate` directly.
    pub rollout_depth: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SearchNode<S> {
    pub state: S,
    pub action: Option<String>,
    pub depth: usize,
    pub prior: f64,
    pub visits: u32,
    pub total_value: f64,
    pub children: Vec<usize>,
    pub expanded: bool,
    pub terminal: Option<f64>,
}

impl<S> SearchNode<S> {
    pub fn mean_value(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.total_value / self.visits as f64
        }
    }
}

/// An MCTS tree that can be advanced one simulation at a time.
pub struct Mcts<'m, M: SearchModel> {
    model: &'m M,
    budget: SearchBudget,
    params: MctsParams,
    nodes: Vec<SearchNode<M::State>>,
    rng: ChaCha8Rng,
    stats: SearchStats,
}

impl<'m, M: SearchModel> Mcts<'m, M> {
    pub fn new(model: &'m M, root: M::State, budget: SearchBudget, params: MctsParams) -> Result<Self> {
        budget.validate()?;
        if !(params.c_uct >= 0.0 && params.c_uct.is_finite()) {
            return Err(Error::InvalidInput(format!("c_uct must be non-negative, got {}", params.c_uct)));
        }
        let terminal = model.terminal(&root);
        Ok(Mcts {
            model,
            budget,
            params,
            nodes: vec![SearchNode {
                state: root,
                action: None,
                depth: 0,
                prior: 1.0,
                visits: 0,
                total_value: 0.0,
                children: Vec::new(),
                expanded: false,
                terminal,
            }],
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            stats: SearchStats {
                nodes: 1,
                ..SearchStats::default()
            },
        })
    }

    pub fn nodes(&self) -> &[SearchNode<M::State>] {
        &self.nodes
    }

    pub fn stats(&self) -> SearchStats {
        self.stats
    }

    fn select_child(&self, parent: usize) -> usize {
        let node = &self.nodes[parent];
        if let Some(&c) = node.children.iter().find(|&&c| self.nodes[c].visits == 0) {
            return c;
        }
        let ln_n = (node.visits.max(1) as f64).ln();
        let mut best = node.children[0];
        let mut best_score = f64::NEG_INFINITY;
        for &c in &node.children {
            let child = &self.nodes[c];
            let explore = self.params.c_uct * child.prior * (ln_n / (1.0 + child.visits as f64)).sqrt();
            let score = child.mean_value() + explore;
            if score > best_score {
                best_score = score;
                best = c;
            }
        }
        best
    }

    fn expand(&mut self, index: usize) -> Result<()> {
        let proposals = self.model.propose(&self.nodes[index].state)?;
        self.stats.expansions += 1;
        self.nodes[index].expanded = true;
        if proposals.is_empty() && index == 0 {
            return Err(no_root_actions());
        }
        let proposals: Vec<Proposal> = proposals.into_iter().take(self.budget.width).collect();
        let priors = normalised_priors(&proposals);
        let depth = self.nodes[index].depth + 1;
        for (p, prior) in proposals.into_iter().zip(priors) {
            let state = self.model.transition(&self.nodes[index].state, &p.action)?;
            let terminal = self.model.terminal(&state);
            let child = self.nodes.len();
            self.nodes.push(SearchNode {
                state,
                action: Some(p.action),
                depth,
                prior,
                visits: 0,
                total_value: 0.0,
                children: Vec::new(),
                expanded: false,
                terminal,
            });
            self.nodes[index].children.push(child);
            self.stats.nodes += 1;
            self.stats.max_depth = self.stats.max_depth.max(depth);
        }
        Ok(())
    }

    fn leaf_value(&mut self, index: usize) -> Result<f64> {
        if let Some(r) = self.nodes[index].terminal {
            return checked(r, "terminal");
        }
        if self.params.rollout_depth == 0 {
            self.stats.evaluations += 1;
            return checked(self.model.evaluate(&self.nodes[index].state)?, "evaluate");
        }
        let mut state = self.nodes[index].state.clone();
        for _ in 0..self.params.rollout_depth {
            if let Some(r) = self.model.terminal(&state) {
                return checked(r, "terminal");
            }
            let proposals = self.model.propose(&state)?;
            if proposals.is_empty() {
                break;
            }
            let priors = normalised_priors(&proposals);
            let mut draw: f64 = self.rng.random();
            let mut pick = proposals.len() - 1;
            for (i, p) in priors.iter().enumerate() {
                if draw < *p {
                    pick = i;
                    break;
                }
                draw -= p;
            }
            state = self.model.transition(&state, &proposals[pick].action)?;
        }
        if let Some(r) = self.model.terminal(&state) {
            return checked(r, "terminal");
        }
        self.stats.evaluations += 1;
        checked(self.model.evaluate(&state)?, "evaluate")
    }

    /// Runs one select, expand, evaluate and backpropagate cycle.
    pub fn simulate(&mut self) -> Result<()> {
        let mut path = vec![0];
        let mut current = 0;
        while self.nodes[current].expanded && !self.nodes[current].children.is_empty() {
            current = self.select_child(current);
            path.push(current);
        }
        let node = &self.nodes[current];
        if node.terminal.is_none() && !node.expanded && node.depth < self.budget.max_depth {
            self.expand(current)?;
            if !self.nodes[current].children.is_empty() {
                current = self.select_child(current);
                path.push(current);
            }
        }
        let value = self.leaf_value(current)?;
        for &i in &path {
            self.nodes[i].visits += 1;
            self.nodes[i].total_value += value;
        }
        Ok(())
    }

    /// Most-visited child of `index`, earliest proposal on ties.
    fn most_visited(&self, index: usize) -> Option<usize> {
        let mut best: Option<usize> = None;
        for &c in &self.nodes[index].children {
            if best.is_none_or(|b| self.nodes[c].visits > self.nodes[b].visits) {
                best = Some(c);
            }
        }
        best.filter(|&b| self.nodes[b].visits > 0)
    }

    pub fn result(&self) -> Result<PlanResult> {
        if let Some(r) = self.nodes[0].terminal {
            return Ok(PlanResult {
                actions: Vec::new(),
                value: r,
                stats: self.stats,
                root_visits: Vec::new(),
            });
        }
        let first = self
            .most_visited(0)
            .ok_or_else(|| Error::NoPlan("no root action was visited".into()))?;
        let mut actions = Vec::new();
        let mut current = Some(first);
        while let Some(c) = current {
            actions.push(self.nodes[c].action.clone().expect("non-root node has an action"));
            current = self.most_visited(c);
        }
        Ok(PlanResult {
            actions,
            value: self.nodes[first].mean_value(),
            stats: self.stats,
            root_visits: self.nodes[0]
                .children
                .iter()
                .map(|&c| (self.nodes[c].action.clone().expect("child action"), self.nodes[c].visits))
                .collect(),
        })
    }
}

fn normalised_priors(proposals: &[Proposal]) -> Vec<f64> {
    let total: f64 = proposals.iter().map(|p| p.prior).sum();
    let valid = proposals.iter().all(|p| p.prior.is_finite() && p.prior >= 0.0);
    if !valid || total <= 0.0 || !total.is_finite() {
        let n = proposals.len() as f64;
        return vec![1.0 / n; proposals.len()];
    }
    proposals.iter().map(|p| p.prior / total).collect()
}

/// Runs `budget.max_expansions` simulations and commits to the most-visited
/// root action.
pub fn mcts_plan<M: SearchModel>(
    model: &M,
    root: M::State,
    budget: &SearchBudget,
    params: &MctsParams,
) -> Result<PlanResult> {
    let mut tree = Mcts::new(model, root, *budget, *params)?;
    if tree.nodes[0].terminal.is_some() {
        return tree.result();
    }
    for _ in 0..budget.max_expansions {
        tree.simulate()?;
    }
    tree.result()
}

#[cfg(test)]
mod tests {
    use super::models::Countdown;
    use super::*;

    fn budget(max_expansions: usize, width: usize) -> SearchBudget {
        SearchBudget {
            max_expansions,
            max_depth: 4,
            width,
        }
    }

    #[test]
    fn bfs_finds_shortest_solution() {
        let m = Countdown::new(1, 6, 4);
        let r = bfs_plan(&m, m.root(), &budget(1000, 16)).unwrap();
        assert_eq!(r.actions, ["*2", "+1", "*2"]);
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn expansion_budget_is_exact() {
        let m = Countdown::new(1, 6, 4);
        for n in 1..6 {
            assert_eq!(bfs_plan(&m, m.root(), &budget(n, 16)).unwrap().stats.expansions, n);
            assert_eq!(dfs_plan(&m, m.root(), &budget(n, 2), f64::NEG_INFINITY).unwrap().stats.expansions, n);
        }
    }

    #[test]
    fn terminal_root_gives_empty_plan() {
        let m = Countdown::new(6, 6, 4);
        let r = bfs_plan(&m, m.root(), &budget(10, 2)).unwrap();
        assert!(r.actions.is_empty());
        assert_eq!(r.value, 1.0);
    }

    #[test]
    fn pruning_everything_is_no_plan() {
        let m = Countdown::new(1, 6, 4);
        assert!(matches!(dfs_plan(&m, m.root(), &budget(100, 2), 2.0), Err(Error::NoPlan(_))));
    }

    #[test]
    fn zero_budget_rejected() {
        let m = Countdown::new(1, 6, 4);
        assert!(matches!(bfs_plan(&m, m.root(), &budget(0, 2)), Err(Error::Config { .. })));
    }

    #[test]
    fn priors_fall_back_to_uniform() {
        let p = [Proposal::new("a", 0.0), Proposal::new("b", 0.0)];
        assert_eq!(normalised_priors(&p), [0.5, 0.5]);
        let p = [Proposal::new("a", 3.0), Proposal::new("b", 1.0)];
        assert_eq!(normalised_priors(&p), [0.75, 0.25]);
    }
}
