use std::path::PathBuf;
use std::process::ExitCode;

use agent_cli::commands::{cmd_advantages, cmd_collect, cmd_plan, cmd_run, Overrides};
use agent_cli::config::RunConfig;
use agent_cli::CliError;
use agent_core::tuning::{GaeParams, RejectionPolicy};
use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "agent", version, about = "Run, plan and collect data with LLM agent flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GridArgs {
    /// YAML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task to run; repeat for several. Replaces the config's list.
    #[arg(long = "task")]
    tasks: Vec<String>,
    /// Method to run; repeat for several. Replaces the config's list.
    #[arg(long = "method")]
    methods: Vec<String>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory that receives the timestamped run folder.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl GridArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        Overrides {
            tasks: self.tasks.clone(),
            methods: self.methods.clone(),
            episodes: self.episodes,
            runs: self.runs,
            seed: self.seed,
            out: self.out.clone(),
        }
        .apply(&mut cfg)?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Filter {
    KeepSuccessful,
    KeepBestPerTask,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every task × method cell and write a results table.
    Run(GridArgs),
    /// Run the grid and write rejection-sampled SFT data.
    Collect {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long, value_enum, default_value = "keep-successful")]
        filter: Filter,
        /// Drop thoughts and reflections from the messages.
        #[arg(long)]
        strip_thoughts: bool,
    },
    /// Compute per-token advantages from a trajectory log and value series.
    Advantages {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long)]
        values: PathBuf,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 0.95)]
        lambda: f64,
        #[arg(long)]
        strip_thoughts: bool,
        #[arg(long, default_value = "advantages.jsonl")]
        out: PathBuf,
    },
    /// Search with the configured planner and print the statistics.
    Plan {
        #[arg(long)]
        config: PathBuf,
    },
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(grid) => {
            let cfg = grid.load()?;
            let summary = cmd_run(&cfg)?;
            print!("{}", summary.table.to_markdown());
            println!("results written to {}", summary.dir.display());
        }
        Command::Collect {
            grid,
            filter,
            strip_thoughts,
        } => {
            let cfg = grid.load()?;
            let policy = match filter {
                Filter::KeepSuccessful => RejectionPolicy::KeepSuccessful,
                Filter::KeepBestPerTask => RejectionPolicy::KeepBestPerTask,
            };
            let summary = cmd_collect(&cfg, policy, strip_thoughts)?;
            for (method, c) in &summary.per_method {
                println!("{method}: kept {}/{} ({:.1}%)", c.kept, c.total, 100.0 * c.survival_rate);
            }
            println!("{} of {} trajectories kept; written to {}", summary.kept, summary.total, summary.dir.display());
        }
        Command::Advantages {
            trajectories,
            values,
            gamma,
            lambda,
            strip_thoughts,
            out,
        } => {
            let n = cmd_advantages(&trajectories, &values, &GaeParams { gamma, lambda }, strip_thoughts, &out)
                .with_context(|| format!("computing advantages for {}", trajectories.display()))?;
            println!("{n} advantage records written to {}", out.display());
        }
        Command::Plan { config } => {
            let cfg = RunConfig::load(&config)?;
            print!("{}", cmd_plan(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<CliError>().map_or(1, CliError::exit_code);
            ExitCode::from(code)
        }
    }
}
