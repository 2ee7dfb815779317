//! Runs a task × method grid for several runs on a bounded worker pool.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use agent_core::env::TaskTraits;
use agent_core::episode::{run_episode, EpisodeConfig};
use agent_core::flows::FlowRunRecord;
use agent_core::llm::{Backend, HttpBackend, ScriptedBackend};
use agent_core::tasks::{build_source, TaskSource};
use agent_core::tuning::ScoredTrajectory;
use serde::Serialize;
use tracing::{info, warn};

use crate::config::{BackendConfig, ResolvedMethod, RunConfig};
use crate::error::{CliError, Result};
use crate::table::ResultTable;

/// Upper bound on concurrent episodes.
pub const MAX_WORKERS: usize = 8;

/// A backend shared by all workers. Scripted backends hand every episode a
/// fresh copy so results do not depend on scheduling.
pub enum SharedBackend {
    Scripted(ScriptedBackend),
    Http(HttpBackend),
}

impl SharedBackend {
    pub fn build(cfg: &BackendConfig) -> Result<SharedBackend> {
        Ok(match cfg {
            BackendConfig::Scripted { mode, .. } => {
                SharedBackend::Scripted(ScriptedBackend::new(cfg.script_entries(), *mode))
            }
            BackendConfig::Http(http) => SharedBackend::Http(HttpBackend::new(http.clone())?),
        })
    }

    pub fn health_check(&self) -> Result<()> {
        match self {
            SharedBackend::Scripted(s) => s.health_check()?,
            SharedBackend::Http(h) => h.health_check()?,
        }
        Ok(())
    }

    pub fn for_episode(&self) -> Box<dyn Backend + '_> {
        match self {
            SharedBackend::Scripted(s) => Box::new(s.rewound()),
            SharedBackend::Http(h) => Box::new(h),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Cell {
    pub task: String,
    pub method: String,
    pub applicable: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EpisodeRecord {
    pub cell: usize,
    pub run: usize,
    pub episode: usize,
    pub episode_id: String,
    /// The return the table aggregates.
    pub value: f64,
    pub success: bool,
    /// Sum over agents, for multi-agent tasks.
    pub joint: Option<f64>,
    pub llm_calls: usize,
    pub error: Option<String>,
    #[serde(skip)]
    pub trajectories: Vec<ScoredTrajectory>,
    pub records: Vec<FlowRunRecord>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub cells: Vec<Cell>,
    /// Sorted by cell, run and episode.
    pub episodes: Vec<EpisodeRecord>,
    pub runs: usize,
}

impl GridOutcome {
    pub fn trajectories(&self) -> impl Iterator<Item = &ScoredTrajectory> {
        self.episodes.iter().flat_map(|e| e.trajectories.iter())
    }
}

struct Job {
    cell: usize,
    run: usize,
    episode: usize,
}

/// Seed for one episode of one run.
pub fn episode_seed(base: u64, run: usize, episode: usize) -> u64 {
    base.wrapping_add(run as u64 * 10_007).wrapping_add(episode as u64)
}

fn applicable(method: &ResolvedMethod, traits: &TaskTraits) -> bool {
    method.catalog.as_ref().is_none_or(|c| c.applies_to(traits))
}

/// Runs every applicable cell `runs × episodes` times, where a task's
/// episode count defaults to its number of instances.
pub fn run_grid(cfg: &RunConfig) -> Result<GridOutcome> {
    let specs = cfg.task_specs()?;
    let methods = cfg.resolved_methods()?;
    let backend_cfg = cfg
        .backend
        .as_ref()
        .ok_or_else(|| CliError::config("backend", "no backend configured"))?;
    let sources: Vec<Arc<dyn TaskSource>> = specs
        .iter()
        .map(|s| build_source(s, &cfg.base_dir))
        .collect::<agent_core::Result<_>>()?;

    let mut cells = Vec::new();
    for source in &sources {
        for m in &methods {
            let ok = applicable(m, &source.traits());
            if !ok {
                info!("{} is not defined for {}; reporting a dash", m.name, source.name());
            }
            cells.push(Cell {
                task: source.name().to_string(),
                method: m.name.clone(),
                applicable: ok,
            });
        }
    }

    let backend = SharedBackend::build(backend_cfg)?;
    backend.health_check()?;
    let sage = cfg.sage_backend.as_ref().map(SharedBackend::build).transpose()?;
    if let Some(s) = &sage {
        s.health_check()?;
    }

    let mut jobs = Vec::new();
    for c in (0..cells.len()).filter(|&c| cells[c].applicable) {
        let episodes = cfg.episodes_per_run.unwrap_or_else(|| sources[c / methods.len()].len());
        for run in 0..cfg.runs {
            for episode in 0..episodes {
                jobs.push(Job { cell: c, run, episode });
            }
        }
    }
    let live_cells = cells.iter().filter(|c| c.applicable).count();
    let workers = cfg.workers.unwrap_or(live_cells.min(MAX_WORKERS)).max(1);

    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel();
    let mut episodes: Vec<EpisodeRecord> = std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next, cells, sources, methods) = (&jobs, &next, &cells, &sources, &methods);
            let (backend, sage) = (&backend, &sage);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let task_index = job.cell / methods.len();
                let method = &methods[job.cell % methods.len()];
                let record = run_job(cfg, job, &cells[job.cell], &*sources[task_index], method, backend, sage.as_ref());
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        rx.into_iter().collect()
    });
    episodes.sort_by_key(|e| (e.cell, e.run, e.episode));
    Ok(GridOutcome {
        cells,
        episodes,
        runs: cfg.runs,
    })
}

fn run_job(
    cfg: &RunConfig,
    job: &Job,
    cell: &Cell,
    source: &dyn TaskSource,
    method: &ResolvedMethod,
    backend: &SharedBackend,
    sage: Option<&SharedBackend>,
) -> EpisodeRecord {
    let episode_id = format!("{}/{}/r{}/e{:04}", cell.task, cell.method, job.run, job.episode);
    let mut record = EpisodeRecord {
        cell: job.cell,
        run: job.run,
        episode: job.episode,
        episode_id: episode_id.clone(),
        value: 0.0,
        success: false,
        joint: None,
        llm_calls: 0,
        error: None,
        trajectories: Vec::new(),
        records: Vec::new(),
    };
    let main = backend.for_episode();
    let sage_backend = sage.map(SharedBackend::for_episode);
    let mut config = EpisodeConfig::new(&*main);
    config.sage_backend = sage_backend.as_deref();
    config.settings = cfg.settings.clone();
    config.gamma = cfg.gamma.unwrap_or(config.gamma);
    if let Some(h) = cfg.horizon {
        config.horizon = h;
    }
    config.planning = cfg.planning.clone();

    let outcome = source.instance(job.episode % source.len()).and_then(|mut task| {
        run_episode(
            task.as_mut(),
            &method.policy,
            &config,
            episode_seed(cfg.seed, job.run, job.episode),
            &episode_id,
        )
    });
    match outcome {
        Ok(out) => {
            record.value = match cfg.gamma {
                Some(_) => out.results.iter().map(|r| r.return_discounted).sum::<f64>() / out.results.len() as f64,
                None => out.score.episode_return,
            };
            record.success = out.score.success;
            record.joint = out.score.joint;
            record.llm_calls = out.llm_calls();
            record.trajectories = out
                .results
                .iter()
                .map(|r| ScoredTrajectory::new(&cell.method, job.run, r))
                .collect();
            record.records = out.records;
        }
        Err(e) => {
            warn!("{episode_id} failed: {e}");
            record.error = Some(e.to_string());
        }
    }
    record
}

/// Creates `output_dir/run-<timestamp>-<hash>`, adding a suffix rather
/// than reusing an existing directory.
pub fn create_run_dir(output_dir: &Path, hash: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(output_dir)?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    let base = format!("run-{stamp}-{hash}");
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = output_dir.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("unbounded suffix search")
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&item)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Serialize)]
struct TranscriptLine<'a> {
    episode: &'a str,
    task: &'a str,
    method: &'a str,
    run: usize,
    error: Option<&'a str>,
    records: &'a [FlowRunRecord],
}

/// Writes trajectories, transcripts and both table formats.
pub fn write_run_artifacts(dir: &Path, outcome: &GridOutcome, table: &ResultTable) -> Result<()> {
    write_lines(&dir.join("trajectories.jsonl"), outcome.trajectories())?;
    write_lines(
        &dir.join("transcripts.jsonl"),
        outcome.episodes.iter().map(|e| TranscriptLine {
            episode: &e.episode_id,
            task: &outcome.cells[e.cell].task,
            method: &outcome.cells[e.cell].method,
            run: e.run,
            error: e.error.as_deref(),
            records: &e.records,
        }),
    )?;
    std::fs::write(dir.join("results.csv"), table.to_csv())?;
    std::fs::write(dir.join("results.md"), table.to_markdown())?;
    Ok(())
}
