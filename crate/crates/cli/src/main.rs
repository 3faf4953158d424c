mod config;
mod plot;
mod results;
mod run;
mod sweep;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{read_flat, RunConfig};

#[derive(Parser)]
#[command(name = "unle", about = "Energy-based likelihood estimation for simulation-based inference")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one pipeline and write its run directory.
    Run(RunArgs),
    /// Run the Cartesian product of a grid file.
    Sweep(SweepArgs),
    /// Reshape results.csv into tidy plotting tables.
    EmitPlotData(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` file (or a run's config.json).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    budget: Option<String>,
    #[arg(long)]
    rounds: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    observation: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long = "train.max_iter")]
    train_max_iter: Option<String>,
    #[arg(long = "train.lr")]
    train_lr: Option<String>,
    #[arg(long = "train.mode")]
    train_mode: Option<String>,
    #[arg(long = "smc.L")]
    smc_l: Option<String>,
    #[arg(long = "smc.kernel_steps")]
    smc_kernel_steps: Option<String>,
    #[arg(long = "sampler.chains")]
    sampler_chains: Option<String>,
    #[arg(long = "sampler.inner_steps")]
    sampler_inner_steps: Option<String>,
    #[arg(long = "metric.n")]
    metric_n: Option<String>,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Do not append to `<out>/results.csv`.
    #[arg(long, hide = true)]
    no_aggregate: bool,
}

impl RunArgs {
    fn flags(&self) -> Result<BTreeMap<String, String>> {
        let mut m = BTreeMap::new();
        let named = [
            ("task", &self.task),
            ("method", &self.method),
            ("budget", &self.budget),
            ("rounds", &self.rounds),
            ("seed", &self.seed),
            ("observation", &self.observation),
            ("out", &self.out),
            ("train.max_iter", &self.train_max_iter),
            ("train.lr", &self.train_lr),
            ("train.mode", &self.train_mode),
            ("smc.L", &self.smc_l),
            ("smc.kernel_steps", &self.smc_kernel_steps),
            ("sampler.chains", &self.sampler_chains),
            ("sampler.inner_steps", &self.sampler_inner_steps),
            ("metric.n", &self.metric_n),
        ];
        for (k, v) in named {
            if let Some(v) = v {
                m.insert(k.to_string(), v.clone());
            }
        }
        for s in &self.set {
            let (k, v) = s.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
            m.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(m)
    }

    fn resolve(&self) -> Result<RunConfig> {
        let mut kv = match &self.config {
            Some(p) => read_flat(p)?,
            None => BTreeMap::new(),
        };
        kv.extend(self.flags()?);
        RunConfig::resolve(&kv)
    }
}

#[derive(Args)]
struct SweepArgs {
    /// Grid file; `task`, `method`, `budget`, `seed` and `observation` take comma lists.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cells run concurrently as separate processes.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct PlotArgs {
    /// Input results table.
    #[arg(long)]
    results: PathBuf,
    /// Directory for accuracy.csv and runtime.csv.
    #[arg(long)]
    out: PathBuf,
}

/// Prints a one-line JSON error record and, when possible, leaves it as
/// `error.json` next to the run's other files.
fn report(err: &anyhow::Error, dir: Option<&std::path::Path>) {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<unle::Error>())
        .map(|e| match e {
            unle::Error::InvalidArgument(_) => "invalid_argument",
            unle::Error::Unsupported(_) => "unsupported",
            unle::Error::InitializationFailure { .. } => "initialization_failure",
            unle::Error::SamplerFailure(_) => "sampler_failure",
            unle::Error::DegenerateBridge { .. } => "degenerate_bridge",
            unle::Error::TrainingFailure { .. } => "training_failure",
            unle::Error::TaskUnsuitable { .. } => "task_unsuitable",
            unle::Error::Parse { .. } => "parse",
            unle::Error::Io(_) => "io",
            unle::Error::Csv(_) => "csv",
            unle::Error::Json(_) => "json",
        })
        .unwrap_or("error");
    let record = serde_json::json!({ "error": { "kind": kind, "message": format!("{err:#}") } });
    eprintln!("{record}");
    if let Some(dir) = dir {
        if dir.is_dir() {
            let _ = std::fs::write(dir.join("error.json"), record.to_string());
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, dir) = match cli.command {
        Cmd::Run(args) => match args.resolve() {
            Ok(cfg) => {
                let dir = cfg.run_dir();
                let r = run::execute(&cfg, !args.no_aggregate).map(|(d, _)| println!("{}", d.display()));
                (r, Some(dir))
            }
            Err(e) => (Err(e), None),
        },
        Cmd::Sweep(args) => {
            let r = read_flat(&args.grid).and_then(|grid| sweep::sweep(&grid, args.out.as_deref(), args.jobs)).map(|rep| {
                println!("{} runs, {} failed cells, {} result rows", rep.runs.len(), rep.failures.len(), rep.rows.len());
            });
            (r, None)
        }
        Cmd::EmitPlotData(args) => (results::read_path(&args.results).and_then(|rows| plot::emit(&rows, &args.out)), None),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e, dir.as_deref());
            ExitCode::FAILURE
        }
    }
}
