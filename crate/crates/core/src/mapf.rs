//! MAPF solutions: data types, a bounded-suboptimal solver and a post-hoc
//! collision checker.
//!
//! Time is discretized into ticks. Every edge takes `ceil(time / tick)` ticks
//! (at least one). An agent occupies a location from the moment it starts
//! moving into it until the moment it has finished moving out of it; it
//! occupies its start from time zero and its goal forever. Two agents may never
//! occupy non-exclusive locations at the same time. This rules out vertex,
//! following and swap conflicts, which keeps the dependency graph built from a
//! solution acyclic.

mod ecbs;
mod sipp;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roadmap::Roadmap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTuple {
    pub loc: String,
    pub t: f64,
}

impl PlanTuple {
    pub fn new(loc: impl Into<String>, t: f64) -> Self {
        PlanTuple { loc: loc.into(), t }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub agent: usize,
    pub tuples: Vec<PlanTuple>,
}

impl Plan {
    pub fn completion_time(&self) -> f64 {
        self.tuples.last().map_or(0.0, |p| p.t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapfSolution {
    pub plans: Vec<Plan>,
    #[serde(default = "default_w")]
    pub suboptimality_w: f64,
}

fn default_w() -> f64 {
    1.0
}

impl MapfSolution {
    /// Builds a solution from `(location id, time)` lists, one per agent.
    pub fn from_lists(plans: &[&[(&str, f64)]]) -> Self {
        MapfSolution {
            plans: plans
                .iter()
                .enumerate()
                .map(|(agent, tuples)| Plan {
                    agent,
                    tuples: tuples.iter().map(|&(l, t)| PlanTuple::new(l, t)).collect(),
                })
                .collect(),
            suboptimality_w: 1.0,
        }
    }

    pub fn agents(&self) -> usize {
        self.plans.len()
    }

    pub fn sum_of_completion_times(&self) -> f64 {
        self.plans.iter().map(Plan::completion_time).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Error)]
pub enum MapfError {
    #[error("invalid MAPF instance: {0}")]
    BadInput(String),
    #[error("no solution found: {0}")]
    Unsolvable(String),
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Base time discretization in seconds.
    pub tick: f64,
    /// Focal suboptimality factor.
    pub w: f64,
    /// High-level conflict-tree expansions before falling back to prioritized planning.
    pub ecbs_node_budget: usize,
    /// Low-level state expansions per single-agent search.
    pub low_level_budget: usize,
    /// Random priority orders tried by the fallback.
    pub sipp_restarts: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tick: 0.1,
            w: 1.6,
            ecbs_node_budget: 300,
            low_level_budget: 200_000,
            sipp_restarts: 2000,
            seed: 0,
        }
    }
}

/// Convenience wrapper around [`solve_mapf_with`] with default settings.
pub fn solve_mapf<S: AsRef<str>>(map: &Roadmap, starts: &[S], goals: &[S], w: f64) -> Result<MapfSolution, MapfError> {
    let cfg = SolverConfig { w, ..SolverConfig::default() };
    solve_mapf_with(map, starts, goals, &cfg)
}

pub fn solve_mapf_with<S: AsRef<str>>(
    map: &Roadmap,
    starts: &[S],
    goals: &[S],
    cfg: &SolverConfig,
) -> Result<MapfSolution, MapfError> {
    if !(cfg.tick.is_finite() && cfg.tick > 0.0) {
        return Err(MapfError::BadInput(format!("tick must be positive, got {}", cfg.tick)));
    }
    if !(cfg.w >= 1.0) {
        return Err(MapfError::BadInput(format!("suboptimality factor must be >= 1, got {}", cfg.w)));
    }
    let inst = Instance::new(map, starts, goals, cfg.tick)?;
    let paths = match ecbs::solve(&inst, cfg) {
        Some(paths) => paths,
        None => {
            log::debug!("focal search over budget; falling back to prioritized planning");
            sipp::solve(&inst, cfg).ok_or_else(|| {
                MapfError::Unsolvable(format!(
                    "{} agents: search budget exhausted and no priority order succeeded",
                    inst.agents()
                ))
            })?
        }
    };
    Ok(inst.to_solution(&paths, cfg))
}

/// Tick-discretized view of an instance shared by both solvers.
pub(crate) struct Instance {
    pub adj: Vec<Vec<(u32, u32)>>,
    pub overlap: Vec<Vec<u32>>,
    pub starts: Vec<u32>,
    pub goals: Vec<u32>,
    /// `h[i][v]`: ticks from `v` to agent `i`'s goal.
    pub h: Vec<Vec<u32>>,
    ids: Vec<String>,
}

impl Instance {
    fn new<S: AsRef<str>>(map: &Roadmap, starts: &[S], goals: &[S], tick: f64) -> Result<Self, MapfError> {
        if starts.len() != goals.len() {
            return Err(MapfError::BadInput(format!(
                "{} starts but {} goals",
                starts.len(),
                goals.len()
            )));
        }
        let lookup = |id: &str| {
            map.vertex_index(id)
                .map(|v| v as u32)
                .ok_or_else(|| MapfError::BadInput(format!("unknown vertex id \"{id}\"")))
        };
        let starts: Vec<u32> = starts.iter().map(|s| lookup(s.as_ref())).collect::<Result<_, _>>()?;
        let goals: Vec<u32> = goals.iter().map(|s| lookup(s.as_ref())).collect::<Result<_, _>>()?;
        for (name, list) in [("start", &starts), ("goal", &goals)] {
            let mut seen = HashSet::new();
            for &v in list.iter() {
                if !seen.insert(v) {
                    return Err(MapfError::BadInput(format!(
                        "duplicate {name} \"{}\"",
                        map.vertex_id(v as usize)
                    )));
                }
            }
            for (i, &a) in list.iter().enumerate() {
                for &b in &list[i + 1..] {
                    if !map.exclusive(a as usize, b as usize) {
                        return Err(MapfError::BadInput(format!(
                            "{name}s \"{}\" and \"{}\" overlap",
                            map.vertex_id(a as usize),
                            map.vertex_id(b as usize)
                        )));
                    }
                }
            }
        }

        let ticks = |w: f64| ((w / tick - 1e-9).ceil() as u32).max(1);
        let adj = (0..map.len())
            .map(|v| map.neighbors(v).iter().map(|&(u, w)| (u as u32, ticks(w))).collect())
            .collect();
        let overlap = (0..map.len())
            .map(|v| map.overlapping(v).iter().map(|&u| u as u32).collect())
            .collect();

        let mut h = Vec::with_capacity(goals.len());
        for (i, &g) in goals.iter().enumerate() {
            let d = map.times_to_with(g as usize, |w| ticks(w) as f64);
            if !d[starts[i] as usize].is_finite() {
                return Err(MapfError::BadInput(format!(
                    "goal \"{}\" unreachable from start \"{}\" (agent {i})",
                    map.vertex_id(g as usize),
                    map.vertex_id(starts[i] as usize)
                )));
            }
            h.push(d.iter().map(|&x| if x.is_finite() { x as u32 } else { u32::MAX }).collect());
        }
        Ok(Instance {
            adj,
            overlap,
            starts,
            goals,
            h,
            ids: (0..map.len()).map(|v| map.vertex_id(v).to_string()).collect(),
        })
    }

    pub fn agents(&self) -> usize {
        self.starts.len()
    }

    pub fn locations(&self) -> usize {
        self.adj.len()
    }

    fn to_solution(&self, paths: &[TickPath], cfg: &SolverConfig) -> MapfSolution {
        let plans = paths
            .iter()
            .enumerate()
            .map(|(agent, path)| {
                let mut tuples = Vec::new();
                let last = path.len() - 1;
                for (m, seg) in path.iter().enumerate() {
                    let id = &self.ids[seg.loc as usize];
                    tuples.push(PlanTuple::new(id.clone(), seg.arrive as f64 * cfg.tick));
                    if m < last && seg.depart > seg.arrive {
                        tuples.push(PlanTuple::new(id.clone(), seg.depart as f64 * cfg.tick));
                    }
                }
                Plan { agent, tuples }
            })
            .collect();
        MapfSolution { plans, suboptimality_w: cfg.w }
    }
}

pub(crate) const INF: u32 = u32::MAX;

/// A stay at one location: arrived at `arrive`, started moving on at `depart`
/// (`INF` for the final segment).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Segment {
    pub loc: u32,
    pub arrive: u32,
    pub depart: u32,
}

pub(crate) type TickPath = Vec<Segment>;

/// Half-open occupancy intervals `(loc, from, to)` of a path.
pub(crate) fn occupancy(path: &[Segment]) -> impl Iterator<Item = (u32, u32, u32)> + '_ {
    path.iter().enumerate().map(move |(m, seg)| {
        let from = if m == 0 { 0 } else { path[m - 1].depart };
        let to = path.get(m + 1).map_or(INF, |next| next.arrive);
        (seg.loc, from, to)
    })
}

pub(crate) fn path_cost(path: &[Segment]) -> u32 {
    path.last().map_or(0, |s| s.arrive)
}

/// A problem found by [`validate_solution`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyPlan { agent: usize },
    AgentIndexMismatch { position: usize, agent: usize },
    UnknownLocation { agent: usize, loc: String },
    NonIncreasingTime { agent: usize, index: usize },
    NonFiniteTime { agent: usize, index: usize },
    NotAnEdge { agent: usize, index: usize, from: String, to: String },
    SharedStart { agents: (usize, usize), loc: String },
    SharedGoal { agents: (usize, usize), loc: String },
    Collision { agents: (usize, usize), locs: (String, String), from: f64, to: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyPlan { agent } => write!(f, "agent {agent}: empty plan"),
            Violation::AgentIndexMismatch { position, agent } => {
                write!(f, "plan at position {position} is labelled agent {agent}")
            }
            Violation::UnknownLocation { agent, loc } => write!(f, "agent {agent}: unknown location \"{loc}\""),
            Violation::NonIncreasingTime { agent, index } => {
                write!(f, "agent {agent}: time does not increase at tuple {index}")
            }
            Violation::NonFiniteTime { agent, index } => write!(f, "agent {agent}: non-finite time at tuple {index}"),
            Violation::NotAnEdge { agent, index, from, to } => {
                write!(f, "agent {agent}: tuple {index} moves {from} -> {to} without an edge")
            }
            Violation::SharedStart { agents, loc } => {
                write!(f, "agents {} and {} both start at {loc}", agents.0, agents.1)
            }
            Violation::SharedGoal { agents, loc } => write!(f, "agents {} and {} share goal {loc}", agents.0, agents.1),
            Violation::Collision { agents, locs, from, to } => write!(
                f,
                "agents {} and {} occupy {} / {} during [{from}, {to})",
                agents.0, agents.1, locs.0, locs.1
            ),
        }
    }
}

/// Checks a solution against the roadmap. An empty result means every plan is
/// well formed and no two agents ever occupy non-exclusive locations at the
/// same time.
pub fn validate_solution(sol: &MapfSolution, map: &Roadmap) -> Vec<Violation> {
    let mut out = Vec::new();
    // (agent, loc, from, to)
    let mut intervals: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut endpoints: Vec<Option<(usize, usize)>> = Vec::new();

    for (position, plan) in sol.plans.iter().enumerate() {
        let agent = position;
        if plan.agent != position {
            out.push(Violation::AgentIndexMismatch { position, agent: plan.agent });
        }
        if plan.tuples.is_empty() {
            out.push(Violation::EmptyPlan { agent });
            endpoints.push(None);
            continue;
        }
        let mut locs = Vec::with_capacity(plan.tuples.len());
        let mut ok = true;
        for (index, p) in plan.tuples.iter().enumerate() {
            match map.vertex_index(&p.loc) {
                Some(v) => locs.push(v),
                None => {
                    out.push(Violation::UnknownLocation { agent, loc: p.loc.clone() });
                    ok = false;
                }
            }
            if !p.t.is_finite() {
                out.push(Violation::NonFiniteTime { agent, index });
                ok = false;
            } else if index > 0 && p.t <= plan.tuples[index - 1].t {
                out.push(Violation::NonIncreasingTime { agent, index });
                ok = false;
            }
        }
        if !ok {
            endpoints.push(None);
            continue;
        }
        for index in 1..locs.len() {
            let (a, b) = (locs[index - 1], locs[index]);
            if a != b && map.edge_time(a, b).is_none() {
                out.push(Violation::NotAnEdge {
                    agent,
                    index,
                    from: plan.tuples[index - 1].loc.clone(),
                    to: plan.tuples[index].loc.clone(),
                });
            }
        }
        endpoints.push(Some((locs[0], *locs.last().unwrap())));

        // Collapse wait runs into stays: (loc, first time, last time).
        let mut stays: Vec<(usize, f64, f64)> = Vec::new();
        for (p, &v) in plan.tuples.iter().zip(&locs) {
            match stays.last_mut() {
                Some(last) if last.0 == v => last.2 = p.t,
                _ => stays.push((v, p.t, p.t)),
            }
        }
        for m in 0..stays.len() {
            let from = if m == 0 { f64::NEG_INFINITY } else { stays[m - 1].2 };
            let to = stays.get(m + 1).map_or(f64::INFINITY, |s| s.1);
            intervals.push((agent, stays[m].0, from, to));
        }
    }

    for i in 0..endpoints.len() {
        for j in (i + 1)..endpoints.len() {
            if let (Some(a), Some(b)) = (endpoints[i], endpoints[j]) {
                if a.0 == b.0 {
                    out.push(Violation::SharedStart { agents: (i, j), loc: map.vertex_id(a.0).to_string() });
                }
                if a.1 == b.1 {
                    out.push(Violation::SharedGoal { agents: (i, j), loc: map.vertex_id(a.1).to_string() });
                }
            }
        }
    }

    let mut by_loc: Vec<Vec<usize>> = vec![Vec::new(); map.len()];
    for (k, iv) in intervals.iter().enumerate() {
        by_loc[iv.1].push(k);
    }
    let mut reported = HashSet::new();
    let mut check = |x: usize, y: usize, out: &mut Vec<Violation>| {
        let (a, la, fa, ta) = intervals[x];
        let (b, lb, fb, tb) = intervals[y];
        if a == b {
            return;
        }
        let (from, to) = (fa.max(fb), ta.min(tb));
        if from < to && reported.insert((x.min(y), x.max(y))) {
            let (first, second) = if a < b { ((a, la), (b, lb)) } else { ((b, lb), (a, la)) };
            out.push(Violation::Collision {
                agents: (first.0, second.0),
                locs: (map.vertex_id(first.1).to_string(), map.vertex_id(second.1).to_string()),
                from,
                to,
            });
        }
    };
    for loc in 0..map.len() {
        let here = &by_loc[loc];
        for (n, &x) in here.iter().enumerate() {
            for &y in &here[n + 1..] {
                check(x, y, &mut out);
            }
            for &other in map.overlapping(loc) {
                if other > loc {
                    for &y in &by_loc[other] {
                        check(x, y, &mut out);
                    }
                }
            }
        }
    }
    out
}
