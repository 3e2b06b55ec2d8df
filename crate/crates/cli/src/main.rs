mod report;
mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sensorsim::experiment::{run_plan, summarize, write_results, SUMMARY_FILE};
use sensorsim::{table1_plan, DetectionMode, ExperimentPlan, PlanError, Preset, Strategy};

/// Exit status 1: the environment failed us. Exit status 2: the input is wrong.
pub enum Failure {
    Runtime(String),
    Usage(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        match self {
            Failure::Runtime(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
            Failure::Usage(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
        }
    }
}

#[derive(Parser)]
#[command(name = "sensorsim", version, about = "Index freshness simulation and web-server change sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment plan and write one CSV per run plus a summary.
    Simulate(SimulateArgs),
    /// Print the grids of mean last-half freshness and final Gb per strategy.
    Report {
        /// Directory written by `simulate`.
        #[arg(env = "SENSORSIM_RESULTS")]
        dir: PathBuf,
    },
    /// Reverse proxy that notifies a robot when a served response changes.
    SensorProxy(serve::ProxyArgs),
    /// Robot endpoint: receives notifications and refetches changed URLs.
    Robotd(serve::RobotArgs),
    /// Run a loopback origin, sensor proxy and robot, and check a change propagates.
    Selftest,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Plan file (JSON). Without one the 3x3 grid plan is used.
    #[arg(long, env = "SENSORSIM_PLAN")]
    plan: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "SENSORSIM_OUT", default_value = "results")]
    out: PathBuf,
    /// World size preset; replaces the plan's world when given.
    #[arg(long, env = "SENSORSIM_PRESET", value_enum)]
    preset: Option<PresetArg>,
    /// Base seed.
    #[arg(long, env = "SENSORSIM_SEED")]
    seed: Option<u64>,
    /// Comma-separated strategies to run.
    #[arg(long, env = "SENSORSIM_STRATEGIES", value_enum, value_delimiter = ',')]
    strategies: Option<Vec<StrategyArg>>,
    /// How sensors notice changes.
    #[arg(long, env = "SENSORSIM_MODE", value_enum)]
    mode: Option<ModeArg>,
    /// Comma-separated series labels to keep, e.g. `[3-3]`.
    #[arg(long, env = "SENSORSIM_SERIES", value_delimiter = ',')]
    series: Option<Vec<String>>,
    /// Runs per series.
    #[arg(long, env = "SENSORSIM_RUNS")]
    runs: Option<u32>,
    /// Worker threads. Output does not depend on it.
    #[arg(long, env = "SENSORSIM_JOBS")]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Robot,
    Sensors,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    ChangeTriggered,
    RequestTriggered,
}

fn build_plan(args: &SimulateArgs) -> Result<ExperimentPlan, Failure> {
    let mut plan = match &args.plan {
        Some(path) => load_plan(path)?,
        None => table1_plan(Preset::Desk.world()),
    };
    if let Some(preset) = args.preset {
        plan.world = match preset {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
        .world();
    }
    if let Some(seed) = args.seed {
        plan.base_seed = seed;
    }
    if let Some(strategies) = &args.strategies {
        plan.strategies = strategies
            .iter()
            .map(|s| match s {
                StrategyArg::Robot => Strategy::Robot,
                StrategyArg::Sensors => Strategy::Sensors,
            })
            .collect();
    }
    if let Some(mode) = args.mode {
        plan.detection_mode = match mode {
            ModeArg::ChangeTriggered => DetectionMode::ChangeTriggered,
            ModeArg::RequestTriggered => DetectionMode::RequestTriggered,
        };
    }
    if let Some(keep) = &args.series {
        if let Some(missing) = keep.iter().find(|k| !plan.series.iter().any(|s| &s.label == *k)) {
            return Err(Failure::Usage(format!("invalid `--series`: no series labelled `{missing}`")));
        }
        plan.series.retain(|s| keep.contains(&s.label));
    }
    if let Some(runs) = args.runs {
        plan.runs_per_series = runs;
    }
    plan.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(plan)
}

fn load_plan(path: &Path) -> Result<ExperimentPlan, Failure> {
    ExperimentPlan::load(path).map_err(|e| match e {
        PlanError::Read { .. } => Failure::Runtime(e.to_string()),
        PlanError::Parse(_) | PlanError::Invalid(_) => {
            Failure::Usage(format!("{}: {e}", path.display()))
        }
    })
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let plan = build_plan(&args)?;
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let results = run_plan(&plan, jobs).map_err(|e| Failure::Runtime(e.to_string()))?;
    let written = write_results(&results, &args.out).map_err(|e| Failure::Runtime(e.to_string()))?;
    for row in summarize(results.iter().map(|r| r.view())) {
        println!(
            "{} {}: freshness_last_half={:.2}% final_gb={:.3} runs={}",
            row.series, row.strategy, row.mean_freshness_last_half, row.final_gb_mean, row.runs
        );
    }
    println!(
        "wrote {} files to {} ({} + run CSVs)",
        written.len(),
        args.out.display(),
        SUMMARY_FILE
    );
    Ok(())
}

fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Report { dir } => report::run(&dir),
        Command::SensorProxy(args) => {
            init_tracing();
            serve::sensor_proxy(args)
        }
        Command::Robotd(args) => {
            init_tracing();
            serve::robotd(args)
        }
        Command::Selftest => serve::selftest(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}
