use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use agent_core::episode::{run_episode, EpisodeConfig};
use agent_core::planning::{PlanResult, PlannerConfig, PlanningSettings, SearchModel};
use agent_core::tasks::build_source;
use agent_core::tuning::data::{read_trajectories, trajectory_advantages, ValueRecord};
use agent_core::tuning::{build_sft_dataset, rejection_sample, GaeParams, RejectionPolicy, WhitespaceTokenizer};
use serde::Serialize;
use serde_json::json;

use crate::config::{PlanModelSpec, RunConfig, TaskEntry};
use crate::error::{CliError, Result};
use crate::harness::{create_run_dir, episode_seed, run_grid, write_run_artifacts, SharedBackend};
use crate::table::ResultTable;

/// Command-line values that replace config fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub tasks: Vec<String>,
    pub methods: Vec<String>,
    pub episodes: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if !self.tasks.is_empty() {
            cfg.tasks = self.tasks.iter().cloned().map(TaskEntry::Builtin).collect();
        }
        if !self.methods.is_empty() {
            cfg.methods = self.methods.clone();
        }
        if let Some(n) = self.episodes {
            cfg.episodes_per_run = Some(n);
        }
        if let Some(n) = self.runs {
            cfg.runs = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()
    }
}

fn write_manifest(dir: &Path, value: serde_json::Value) -> Result<()> {
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&value)? + "\n")?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub table: ResultTable,
}

pub fn cmd_run(cfg: &RunConfig) -> Result<RunSummary> {
    let outcome = run_grid(cfg)?;
    let table = ResultTable::from_outcome(&outcome);
    let hash = cfg.hash();
    let dir = create_run_dir(&cfg.output_dir, &hash)?;
    write_run_artifacts(&dir, &outcome, &table)?;
    let dashes: Vec<String> = outcome
        .cells
        .iter()
        .filter(|c| !c.applicable)
        .map(|c| format!("{}/{}", c.task, c.method))
        .collect();
    write_manifest(
        &dir,
        json!({
            "command": "run",
            "config_hash": hash,
            "cells": outcome.cells.len(),
            "episodes": outcome.episodes.len(),
            "failed": outcome.episodes.iter().filter(|e| e.error.is_some()).count(),
            "dashes": dashes,
            "config": cfg,
        }),
    )?;
    Ok(RunSummary { dir, table })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MethodCount {
    pub total: usize,
    pub kept: usize,
    pub survival_rate: f64,
}

#[derive(Debug, Clone)]
pub struct CollectSummary {
    pub dir: PathBuf,
    pub total: usize,
    pub kept: usize,
    pub per_method: BTreeMap<String, MethodCount>,
}

/// Runs the grid, keeps trajectories that pass `policy` and writes them as
/// chat-format SFT samples. An empty result is written and then reported
/// as [`CliError::EmptyDataset`].
pub fn cmd_collect(cfg: &RunConfig, policy: RejectionPolicy, strip_thoughts: bool) -> Result<CollectSummary> {
    let outcome = run_grid(cfg)?;
    let hash = cfg.hash();
    let dir = create_run_dir(&cfg.output_dir, &hash)?;
    let all: Vec<_> = outcome.trajectories().cloned().collect();
    let rejection = rejection_sample(&all, policy);
    let samples = build_sft_dataset(&rejection.kept, strip_thoughts);
    let mut lines = String::new();
    for s in &samples {
        lines.push_str(&s.to_json_line()?);
        lines.push('\n');
    }
    std::fs::write(dir.join("sft.jsonl"), lines)?;
    let table = ResultTable::from_outcome(&outcome);
    write_run_artifacts(&dir, &outcome, &table)?;

    let mut per_method: BTreeMap<String, MethodCount> = BTreeMap::new();
    for t in &all {
        per_method.entry(t.method.clone()).or_default().total += 1;
    }
    for t in &rejection.kept {
        per_method.entry(t.method.clone()).or_default().kept += 1;
    }
    for c in per_method.values_mut() {
        c.survival_rate = if c.total == 0 { 0.0 } else { c.kept as f64 / c.total as f64 };
    }
    let total = all.len();
    let kept = rejection.kept.len();
    write_manifest(
        &dir,
        json!({
            "command": "collect",
            "config_hash": hash,
            "policy": policy,
            "strip_thoughts": strip_thoughts,
            "total": total,
            "kept": kept,
            "survival_rate": if total == 0 { 0.0 } else { kept as f64 / total as f64 },
            "per_method": per_method,
            "warning": rejection.warning,
        }),
    )?;
    if let Some(w) = rejection.warning {
        return Err(CliError::EmptyDataset(format!("{w}; files written to {}", dir.display())));
    }
    Ok(CollectSummary {
        dir,
        total,
        kept,
        per_method,
    })
}

/// Reads a trajectory log and a value file, writes one advantage record per
/// trajectory and returns how many were written.
pub fn cmd_advantages(
    trajectories: &Path,
    values: &Path,
    params: &GaeParams,
    strip_thoughts: bool,
    out: &Path,
) -> Result<usize> {
    params.validate()?;
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| CliError::config(p.display().to_string(), e.to_string()))
    };
    let log = read_trajectories(&read(trajectories)?)?;
    let value_text = read(values)?;
    let records: Vec<ValueRecord> = value_text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::config(values.display().to_string(), format!("line {}: {e}", i + 1)))
        })
        .collect::<Result<_>>()?;
    let mut lines = String::new();
    for scored in &log {
        let t = &scored.trajectory;
        let v = records
            .iter()
            .find(|r| r.episode == t.episode_id && r.agent.as_deref().is_none_or(|a| a == t.agent_id.as_str()))
            .ok_or_else(|| {
                agent_core::Error::InvalidInput(format!("trajectory {}: no value series supplied", t.episode_id))
            })?;
        let record = trajectory_advantages(scored, v, params, &WhitespaceTokenizer, strip_thoughts)?;
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(out, lines)?;
    Ok(log.len())
}

fn algorithm_name(planner: &PlannerConfig) -> String {
    serde_json::to_value(planner.algorithm)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn describe(planner: &PlannerConfig, r: &PlanResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "algorithm: {}", algorithm_name(planner));
    let _ = writeln!(out, "expansions: {}", r.stats.expansions);
    let _ = writeln!(out, "max depth: {}", r.stats.max_depth);
    let _ = writeln!(out, "nodes: {}", r.stats.nodes);
    let _ = writeln!(out, "evaluations: {}", r.stats.evaluations);
    let _ = writeln!(out, "best value: {:.4}", r.value);
    let plan = if r.actions.is_empty() {
        "(empty)".to_string()
    } else {
        r.actions.join(" -> ")
    };
    let _ = writeln!(out, "plan: {plan}");
    if !r.root_visits.is_empty() {
        let visits: Vec<String> = r.root_visits.iter().map(|(a, n)| format!("{a}={n}")).collect();
        let _ = writeln!(out, "root visits: {}", visits.join(", "));
    }
    out
}

fn search<M: SearchModel>(planner: &PlannerConfig, model: &M, root: M::State) -> Result<String> {
    let result = planner.plan(model, root)?;
    Ok(describe(planner, &result))
}

/// Runs one planning episode and returns a plain-text report.
pub fn cmd_plan(cfg: &RunConfig) -> Result<String> {
    let planner = cfg.planner.clone().unwrap_or_default();
    planner.validate()?;
    let model = cfg
        .model
        .as_ref()
        .ok_or_else(|| CliError::config("model", "`agent plan` needs a model block"))?;
    match model {
        PlanModelSpec::Countdown(m) => search(&planner, m, m.root()),
        PlanModelSpec::Game24(m) => {
            let mut report = search(&planner, m, m.root())?;
            let result = planner.plan(m, m.root())?;
            let mut state = m.root();
            for a in &result.actions {
                state = m.transition(&state, a)?;
            }
            if let Some(expr) = state.expression() {
                let _ = writeln!(report, "expression: {expr}");
            }
            Ok(report)
        }
        PlanModelSpec::Llm { commit, samples } => {
            let spec = cfg.task_specs()?.remove(0);
            let method = cfg.resolved_methods()?.remove(0);
            let backend_cfg = cfg
                .backend
                .as_ref()
                .ok_or_else(|| CliError::config("backend", "no backend configured"))?;
            let backend = SharedBackend::build(backend_cfg)?;
            backend.health_check()?;
            let main = backend.for_episode();
            let source = build_source(&spec, &cfg.base_dir)?;
            let mut task = source.instance(0)?;
            let mut config = EpisodeConfig::new(&*main);
            config.settings = cfg.settings.clone();
            if let Some(h) = cfg.horizon {
                config.horizon = h;
            }
            config.planning = Some(PlanningSettings {
                planner: planner.clone(),
                commit: *commit,
                samples: *samples,
            });
            let out = run_episode(
                task.as_mut(),
                &method.policy,
                &config,
                episode_seed(cfg.seed, 0, 0),
                &format!("{}/plan", source.name()),
            )?;
            let mut report = format!("algorithm: {}\n", algorithm_name(&planner));
            for r in &out.records {
                let action = r.action.as_ref().map_or("", |a| a.text.as_str());
                let _ = writeln!(report, "step {}: {action} [{}]", r.step, r.notes.join("; "));
            }
            let _ = writeln!(report, "return: {:.4}", out.score.episode_return);
            let _ = writeln!(report, "llm calls: {}", out.llm_calls());
            Ok(report)
        }
    }
}
