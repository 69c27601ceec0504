use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use switching_adg::batch::{run_batch, write_csv, BatchSpec, Mode};
use switching_adg::roadmap::{open_grid, warehouse_grid};
use switching_adg::{build_adg, run_episode, solve_mapf_with, MapfSolution, Roadmap, SimConfig, SolverConfig};

/// Runs Monte Carlo comparisons of plain and switching plan execution, or one
/// of the helper subcommands.
#[derive(Parser, Debug)]
#[command(name = "sadg", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    batch: BatchArgs,
}

#[derive(Args, Debug)]
struct BatchArgs {
    /// Roadmap JSON file.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Team sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [30, 40, 50, 60, 70])]
    agents: Vec<usize>,
    /// Delay lengths in ticks, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1, 3, 5, 10, 15, 20, 25])]
    delay: Vec<u64>,
    /// Horizons, comma separated; "inf" is unbounded.
    #[arg(long, value_delimiter = ',', default_value = "1", value_parser = parse_horizon)]
    horizon: Vec<Horizon>,
    /// Scenarios per cell.
    #[arg(long, default_value_t = 100)]
    scenarios: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, conflicts_with = "switching_only")]
    baseline_only: bool,
    #[arg(long)]
    switching_only: bool,
    /// Simulation step in seconds.
    #[arg(long, default_value_t = 0.1)]
    tick: f64,
    /// Minimum separation between dependent events, seconds.
    #[arg(long, default_value_t = switching_adg::optimizer::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Big-M constant, seconds.
    #[arg(long = "big-m", default_value_t = switching_adg::optimizer::DEFAULT_BIG_M)]
    big_m: f64,
    /// Write zeros in the timing columns so repeated runs produce identical files.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a generated grid roadmap.
    GenMap(GenMapArgs),
    /// Solve a MAPF instance and write the plans as JSON.
    Plan(PlanArgs),
    /// Print the action dependency graph of a plan file.
    Adg {
        #[command(subcommand)]
        action: AdgAction,
    },
    /// Run one episode and print its metrics.
    Episode(EpisodeArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MapKind {
    Warehouse,
    Open,
}

#[derive(Args, Debug)]
struct GenMapArgs {
    #[arg(long, value_enum, default_value_t = MapKind::Warehouse)]
    kind: MapKind,
    #[arg(long, default_value_t = 30)]
    width: usize,
    #[arg(long, default_value_t = 30)]
    height: usize,
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    #[arg(long, default_value_t = 1.0)]
    edge_time: f64,
    #[arg(long, default_value_t = 0.3)]
    radius: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[arg(long)]
    map: PathBuf,
    /// Start vertex ids, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    starts: Vec<String>,
    /// Goal vertex ids, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    goals: Vec<String>,
    /// Suboptimality bound.
    #[arg(long, default_value_t = 1.6)]
    w: f64,
    /// Time resolution of the planner, seconds.
    #[arg(long, default_value_t = 0.1)]
    tick: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum AdgAction {
    Dump {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        plan: PathBuf,
    },
}

#[derive(Args, Debug)]
struct EpisodeArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    /// Delay length in ticks.
    #[arg(long, default_value_t = 0)]
    delay: u64,
    /// Fraction of agents that are halted.
    #[arg(long, default_value_t = 0.2)]
    delay_fraction: f64,
    /// Tick of the halt; defaults to the delay length.
    #[arg(long)]
    onset: Option<u64>,
    #[arg(long, default_value = "1", value_parser = parse_horizon)]
    horizon: Horizon,
    #[arg(long)]
    switching: bool,
    #[arg(long, default_value_t = 0.1)]
    tick: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = switching_adg::optimizer::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long = "big-m", default_value_t = switching_adg::optimizer::DEFAULT_BIG_M)]
    big_m: f64,
    /// Write the event log as NDJSON.
    #[arg(long)]
    log: Option<PathBuf>,
}

/// Horizon in vertices; `None` is unbounded.
#[derive(Clone, Copy, Debug)]
struct Horizon(Option<usize>);

fn parse_horizon(s: &str) -> Result<Horizon, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(Horizon(None));
    }
    match s.parse::<usize>() {
        Ok(0) => Err("horizon must be at least 1".into()),
        Ok(h) => Ok(Horizon(Some(h))),
        Err(e) => Err(format!("{s:?}: {e}")),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), String> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => io::stdout().write_all(text.as_bytes()).map_err(|e| e.to_string()),
    }
}

fn load_map(p: &Path) -> Result<Roadmap, String> {
    Roadmap::load(p).map_err(|e| e.to_string())
}

fn load_plan(p: &Path) -> Result<MapfSolution, String> {
    let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    MapfSolution::from_json(&text).map_err(|e| format!("{}: {e}", p.display()))
}

fn batch(args: BatchArgs) -> Result<(), String> {
    let map_path = args.map.ok_or("--map is required")?;
    let map = load_map(&map_path)?;
    let mode = if args.baseline_only {
        Mode::BaselineOnly
    } else if args.switching_only {
        Mode::SwitchingOnly
    } else {
        Mode::Both
    };
    let spec = BatchSpec {
        agents: args.agents,
        delays: args.delay,
        horizons: args.horizon.iter().map(|h| h.0).collect(),
        scenarios: args.scenarios,
        seed: args.seed,
        mode,
        tick: args.tick,
        epsilon: args.epsilon,
        big_m: args.big_m,
        record_timing: !args.no_timing,
        ..BatchSpec::default()
    };
    let outcome = run_batch(&map, &spec).map_err(|e| e.to_string())?;
    match args.out {
        Some(p) => {
            let f = fs::File::create(&p).map_err(|e| format!("{}: {e}", p.display()))?;
            write_csv(&outcome.rows, io::BufWriter::new(f)).map_err(|e| e.to_string())
        }
        None => write_csv(&outcome.rows, io::stdout().lock()).map_err(|e| e.to_string()),
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        None => batch(cli.batch),
        Some(Command::GenMap(a)) => {
            let file = match a.kind {
                MapKind::Warehouse => warehouse_grid(a.width, a.height, a.spacing, a.edge_time, a.radius),
                MapKind::Open => open_grid(a.width, a.height, a.spacing, a.edge_time, a.radius),
            };
            let map = Roadmap::from_file_spec(file).map_err(|e| e.to_string())?;
            emit(a.out.as_deref(), &(map.to_json_pretty() + "\n"))
        }
        Some(Command::Plan(a)) => {
            let map = load_map(&a.map)?;
            let cfg = SolverConfig { tick: a.tick, w: a.w, seed: a.seed, ..SolverConfig::default() };
            let sol = solve_mapf_with(&map, &a.starts, &a.goals, &cfg).map_err(|e| e.to_string())?;
            emit(a.out.as_deref(), &(sol.to_json() + "\n"))
        }
        Some(Command::Adg { action: AdgAction::Dump { map, plan } }) => {
            let map = load_map(&map)?;
            let adg = build_adg(&load_plan(&plan)?, &map).map_err(|e| e.to_string())?;
            let text = serde_json::to_string_pretty(&adg.dump_json()).map_err(|e| e.to_string())?;
            emit(None, &(text + "\n"))
        }
        Some(Command::Episode(a)) => {
            let map = load_map(&a.map)?;
            let sol = load_plan(&a.plan)?;
            let cfg = SimConfig {
                tick: a.tick,
                delay_ticks: a.delay,
                delay_fraction: a.delay_fraction,
                delay_onset: a.onset,
                horizon: a.horizon.0,
                seed: a.seed,
                switching: a.switching,
                epsilon: a.epsilon,
                big_m: a.big_m,
                ..SimConfig::default()
            };
            let (metrics, log) = run_episode(&map, &sol, &cfg).map_err(|e| e.to_string())?;
            if let Some(p) = &a.log {
                fs::write(p, log.to_ndjson()).map_err(|e| format!("{}: {e}", p.display()))?;
            }
            let text = serde_json::to_string_pretty(&metrics.summary_json()).map_err(|e| e.to_string())?;
            emit(None, &(text + "\n"))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
