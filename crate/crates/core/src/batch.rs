//! Scenario generation and Monte Carlo batches comparing baseline execution
//! with switching execution.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::adg::{build_adg, Adg};
use crate::mapf::{solve_mapf_with, MapfSolution, SolverConfig};
use crate::roadmap::Roadmap;
use crate::sim::{audit_collisions, improvement_from, run_adg, AuditReport, EpisodeMetrics, EventLog, SimConfig};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("invalid batch specification: {0}")]
    Spec(String),
    #[error("cannot place {wanted} agents: only {available} mutually exclusive vertices found")]
    InsufficientVertices { wanted: usize, available: usize },
    #[error("team {team}, scenario {scenario} (seed {seed}): {message}")]
    Scenario { team: usize, scenario: usize, seed: u64, message: String },
    #[error("team {team}, k {k}, H {horizon}, scenario {scenario} (seed {seed}): {message}")]
    Episode { team: usize, k: u64, horizon: String, scenario: usize, seed: u64, message: String },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Both,
    BaselineOnly,
    SwitchingOnly,
}

#[derive(Debug, Clone)]
pub struct BatchSpec {
    pub agents: Vec<usize>,
    pub delays: Vec<u64>,
    /// `None` is an unbounded horizon.
    pub horizons: Vec<Option<usize>>,
    pub scenarios: usize,
    pub seed: u64,
    pub mode: Mode,
    pub tick: f64,
    pub epsilon: f64,
    pub big_m: f64,
    pub delay_fraction: f64,
    pub suboptimality_w: f64,
    /// Write measured solve times; when false the timing columns are zero so
    /// that repeated runs give identical files.
    pub record_timing: bool,
    /// Run optimizer checks and the collision replay on every episode.
    pub audit: bool,
    /// Keep every episode's event log in the outcome.
    pub keep_logs: bool,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            agents: vec![30, 40, 50, 60, 70],
            delays: vec![1, 3, 5, 10, 15, 20, 25],
            horizons: vec![Some(1)],
            scenarios: 100,
            seed: 0,
            mode: Mode::Both,
            tick: 0.1,
            epsilon: crate::optimizer::DEFAULT_EPSILON,
            big_m: crate::optimizer::DEFAULT_BIG_M,
            delay_fraction: 0.2,
            suboptimality_w: 1.6,
            record_timing: true,
            audit: false,
            keep_logs: false,
        }
    }
}

impl BatchSpec {
    fn validate(&self) -> Result<(), BatchError> {
        let bad = |m: &str| Err(BatchError::Spec(m.to_string()));
        if self.agents.is_empty() || self.delays.is_empty() || self.horizons.is_empty() {
            return bad("agent, delay and horizon lists must be nonempty");
        }
        if self.agents.contains(&0) || self.scenarios == 0 {
            return bad("agent counts and scenario count must be positive");
        }
        if self.horizons.contains(&Some(0)) {
            return bad("horizons must be at least 1");
        }
        if !(self.tick.is_finite() && self.tick > 0.0) {
            return bad("tick must be positive");
        }
        if !(self.epsilon > 0.0) || !(self.big_m > 0.0) {
            return bad("epsilon and big-M must be positive");
        }
        Ok(())
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRow {
    pub team_size: usize,
    pub k: u64,
    #[serde(rename = "H")]
    pub horizon: String,
    pub scenario_id: usize,
    pub seed: u64,
    pub t_baseline: Option<f64>,
    pub t_switching: Option<f64>,
    pub improvement_pct: Option<f64>,
    #[serde(rename = "m_T")]
    pub m_t: usize,
    pub peak_solve_ms: f64,
    pub median_solve_ms: f64,
}

/// Per-row diagnostics that do not go into the CSV.
#[derive(Debug, Clone, Default)]
pub struct RowDetail {
    pub baseline: Option<EpisodeMetrics>,
    pub switching: Option<EpisodeMetrics>,
    /// Collision replay results of the two episodes.
    pub collisions: usize,
    pub optimizer_audit: Option<AuditReport>,
    pub baseline_log: Option<EventLog>,
    pub switching_log: Option<EventLog>,
}

#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub rows: Vec<BatchRow>,
    pub details: Vec<RowDetail>,
    /// Scenarios whose start/goal assignment repeated an earlier one.
    pub duplicate_scenarios: usize,
}

pub fn horizon_label(h: Option<usize>) -> String {
    h.map_or_else(|| "inf".to_string(), |h| h.to_string())
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn scenario_seed(base: u64, team: usize, scenario: usize) -> u64 {
    mix(mix(mix(base) ^ team as u64) ^ scenario as u64)
}

pub fn delay_seed(scenario_seed: u64, k: u64) -> u64 {
    mix(scenario_seed ^ mix(k.wrapping_add(1)))
}

/// Random distinct starts and distinct goals. Starts are pairwise exclusive,
/// goals are pairwise exclusive, and no agent starts at its own goal.
pub fn generate_scenario(map: &Roadmap, n_agents: usize, seed: u64) -> Result<(Vec<String>, Vec<String>), BatchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Greedy draw over a shuffled pool; `avoid[i]` may not be given to agent `i`.
    let mut pick = |avoid: Option<&[usize]>| -> Result<Vec<usize>, BatchError> {
        let mut pool: Vec<usize> = (0..map.len()).collect();
        pool.shuffle(&mut rng);
        let mut chosen: Vec<usize> = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let found = pool.iter().position(|&v| {
                avoid.map_or(true, |a| a[i] != v) && chosen.iter().all(|&c| map.exclusive(c, v))
            });
            match found {
                Some(p) => chosen.push(pool.remove(p)),
                None => return Err(BatchError::InsufficientVertices { wanted: n_agents, available: chosen.len() }),
            }
        }
        Ok(chosen)
    };
    let starts = pick(None)?;
    let goals = pick(Some(&starts))?;
    let ids = |v: Vec<usize>| v.into_iter().map(|x| map.vertex_id(x).to_string()).collect();
    Ok((ids(starts), ids(goals)))
}

/// Solver settings used for a scenario.
pub fn solver_config(spec: &BatchSpec, seed: u64) -> SolverConfig {
    SolverConfig { tick: spec.tick, w: spec.suboptimality_w, seed, ..SolverConfig::default() }
}

/// Generates and solves one scenario, returning the solution and its graph.
pub fn prepare_scenario(
    map: &Roadmap,
    spec: &BatchSpec,
    team: usize,
    scenario: usize,
) -> Result<(MapfSolution, Adg), BatchError> {
    let seed = scenario_seed(spec.seed, team, scenario);
    let fail = |message: String| BatchError::Scenario { team, scenario, seed, message };
    let (starts, goals) = generate_scenario(map, team, seed)?;
    let sol = solve_mapf_with(map, &starts, &goals, &solver_config(spec, seed)).map_err(|e| fail(e.to_string()))?;
    let adg = build_adg(&sol, map).map_err(|e| fail(e.to_string()))?;
    Ok((sol, adg))
}

/// Episode settings for one cell.
pub fn sim_config(spec: &BatchSpec, seed: u64, k: u64, horizon: Option<usize>, switching: bool) -> SimConfig {
    SimConfig {
        tick: spec.tick,
        delay_ticks: k,
        delay_fraction: spec.delay_fraction,
        horizon,
        seed: delay_seed(seed, k),
        switching,
        epsilon: spec.epsilon,
        big_m: spec.big_m,
        audit: spec.audit && switching,
        ..SimConfig::default()
    }
}

/// Runs every (team size, k, H, scenario) cell. Baseline episodes do not
/// depend on H and are run once per (team size, k, scenario).
pub fn run_batch(map: &Roadmap, spec: &BatchSpec) -> Result<BatchOutcome, BatchError> {
    spec.validate()?;
    let tasks: Vec<(usize, usize)> = spec
        .agents
        .iter()
        .flat_map(|&team| (0..spec.scenarios).map(move |s| (team, s)))
        .collect();

    let results: Vec<Result<Vec<(BatchRow, RowDetail)>, BatchError>> =
        tasks.par_iter().map(|&(team, scenario)| run_scenario(map, spec, team, scenario)).collect();

    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    let horizon_rank = |h: &str| h.parse::<usize>().unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        (a.0.team_size, a.0.k, horizon_rank(&a.0.horizon), a.0.scenario_id)
            .cmp(&(b.0.team_size, b.0.k, horizon_rank(&b.0.horizon), b.0.scenario_id))
    });

    let mut seen = HashSet::new();
    let mut duplicate_scenarios = 0;
    for &team in &spec.agents {
        for s in 0..spec.scenarios {
            let seed = scenario_seed(spec.seed, team, s);
            if let Ok(pair) = generate_scenario(map, team, seed) {
                if !seen.insert(pair) {
                    duplicate_scenarios += 1;
                    log::info!("team {team}, scenario {s}: start/goal assignment repeats an earlier scenario");
                }
            }
        }
    }

    let (rows, details) = rows.into_iter().unzip();
    Ok(BatchOutcome { rows, details, duplicate_scenarios })
}

fn run_scenario(map: &Roadmap, spec: &BatchSpec, team: usize, scenario: usize) -> Result<Vec<(BatchRow, RowDetail)>, BatchError> {
    let seed = scenario_seed(spec.seed, team, scenario);
    let (_, adg) = prepare_scenario(map, spec, team, scenario)?;
    let mut out = Vec::new();
    for &k in &spec.delays {
        let episode_err = |h: Option<usize>, message: String| BatchError::Episode {
            team,
            k,
            horizon: horizon_label(h),
            scenario,
            seed,
            message,
        };
        let baseline = if spec.mode != Mode::SwitchingOnly {
            let cfg = sim_config(spec, seed, k, None, false);
            let (m, log) = run_adg(adg.clone(), &cfg).map_err(|e| episode_err(None, e.to_string()))?;
            let collisions = if spec.audit { audit_collisions(&log, &adg, map).len() } else { 0 };
            Some((m, log, collisions))
        } else {
            None
        };
        for &h in &spec.horizons {
            let switching = if spec.mode != Mode::BaselineOnly {
                let cfg = sim_config(spec, seed, k, h, true);
                let (m, log) = run_adg(adg.clone(), &cfg).map_err(|e| episode_err(h, e.to_string()))?;
                let collisions = if spec.audit { audit_collisions(&log, &adg, map).len() } else { 0 };
                Some((m, log, collisions))
            } else {
                None
            };
            let t_baseline = baseline.as_ref().map(|b| b.0.cumulative);
            let t_switching = switching.as_ref().map(|s| s.0.cumulative);
            let improvement_pct = match (t_baseline, t_switching) {
                (Some(b), Some(s)) => improvement_from(b, s).ok(),
                _ => None,
            };
            let (m_t, peak, median) = switching.as_ref().map_or((0, 0.0, 0.0), |s| {
                let (p, m) = if spec.record_timing { (s.0.peak_solve_ms, s.0.median_solve_ms) } else { (0.0, 0.0) };
                (s.0.peak_switchable, p, m)
            });
            let row = BatchRow {
                team_size: team,
                k,
                horizon: horizon_label(h),
                scenario_id: scenario,
                seed,
                t_baseline,
                t_switching,
                improvement_pct,
                m_t,
                peak_solve_ms: peak,
                median_solve_ms: median,
            };
            let detail = RowDetail {
                collisions: baseline.as_ref().map_or(0, |b| b.2) + switching.as_ref().map_or(0, |s| s.2),
                optimizer_audit: switching.as_ref().and_then(|s| s.0.audit.clone()),
                baseline_log: baseline.as_ref().filter(|_| spec.keep_logs).map(|b| b.1.clone()),
                switching_log: switching.as_ref().filter(|_| spec.keep_logs).map(|s| s.1.clone()),
                baseline: baseline.as_ref().map(|b| b.0.clone()),
                switching: switching.map(|s| s.0),
            };
            out.push((row, detail));
        }
    }
    Ok(out)
}

pub fn write_csv<W: Write>(rows: &[BatchRow], out: W) -> Result<(), BatchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crossing() -> Roadmap {
        Roadmap::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../maps/crossing.json")).unwrap()
    }

    #[test]
    fn scenario_is_reproducible_and_distinct() {
        let map = crossing();
        let a = generate_scenario(&map, 2, 7).unwrap();
        assert_eq!(a, generate_scenario(&map, 2, 7).unwrap());
        assert_ne!(a.0[0], a.0[1]);
        assert_ne!(a.1[0], a.1[1]);
        assert!(a.0.iter().zip(&a.1).all(|(s, g)| s != g));
    }

    #[test]
    fn too_many_agents_is_an_error() {
        assert!(matches!(
            generate_scenario(&crossing(), 9, 1),
            Err(BatchError::InsufficientVertices { .. })
        ));
    }

    #[test]
    fn seeds_differ_per_coordinate() {
        let s = scenario_seed(1, 10, 0);
        assert_ne!(s, scenario_seed(1, 10, 1));
        assert_ne!(s, scenario_seed(1, 11, 0));
        assert_ne!(s, scenario_seed(2, 10, 0));
        assert_ne!(delay_seed(s, 1), delay_seed(s, 3));
    }
}
