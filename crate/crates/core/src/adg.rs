//! Action dependency graph: per-agent chains of motion events plus
//! cross-agent ordering constraints at shared locations.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::dag;
use crate::mapf::{MapfSolution, PlanTuple};
use crate::roadmap::Roadmap;

/// `(agent, index)` of an event, both 0-based. Serialized as `[agent, index]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct VertexRef {
    pub agent: usize,
    pub index: usize,
}

impl VertexRef {
    pub const fn new(agent: usize, index: usize) -> Self {
        VertexRef { agent, index }
    }
}

impl From<[usize; 2]> for VertexRef {
    fn from([agent, index]: [usize; 2]) -> Self {
        VertexRef { agent, index }
    }
}

impl From<VertexRef> for [usize; 2] {
    fn from(v: VertexRef) -> Self {
        [v.agent, v.index]
    }
}

impl fmt::Display for VertexRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v[{},{}]", self.agent, self.index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Staged,
    InProgress,
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DependencyKind {
    Type1,
    Type2,
}

/// `to` may not start before `from` has completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dependency {
    pub from: VertexRef,
    pub to: VertexRef,
    pub kind: DependencyKind,
}

impl Dependency {
    pub fn type2(from: VertexRef, to: VertexRef) -> Self {
        Dependency { from, to, kind: DependencyKind::Type2 }
    }
}

impl fmt::Display for Dependency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.from, self.to)
    }
}

/// One motion event: the agent leaves `locs[0]` and ends at the last entry.
#[derive(Debug, Clone, PartialEq)]
pub struct AdgVertex {
    pub agent: usize,
    pub index: usize,
    pub tuples: Vec<PlanTuple>,
    /// Roadmap vertex index of every tuple.
    pub locs: Vec<usize>,
    pub planned_start: f64,
    pub planned_goal: f64,
    /// Planned time the agent starts moving (end of any leading dwell).
    pub motion_start: f64,
}

impl AdgVertex {
    pub fn start_loc(&self) -> usize {
        self.locs[0]
    }

    pub fn goal_loc(&self) -> usize {
        *self.locs.last().unwrap()
    }

    /// Modeled execution time: the planned motion, excluding planned waiting
    /// at the start location (that waiting is enforced by dependencies).
    pub fn nominal_duration(&self) -> f64 {
        self.planned_goal - self.motion_start
    }

    /// Index of the first tuple of the motion part.
    pub fn motion_offset(&self) -> usize {
        self.locs.iter().take_while(|&&l| l == self.locs[0]).count() - 1
    }
}

/// Standalone duration of a vertex.
pub fn nominal_duration(v: &AdgVertex) -> f64 {
    v.nominal_duration()
}

#[derive(Debug, Error, PartialEq)]
pub enum AdgError {
    #[error("plan of agent {agent} references unknown location \"{loc}\"")]
    UnknownLocation { agent: usize, loc: String },
    #[error("plan of agent {0} is empty")]
    EmptyPlan(usize),
    #[error("assumption 1 violated: the dependency graph contains a cycle")]
    Cyclic,
    #[error("no vertex {0}")]
    NoSuchVertex(VertexRef),
    #[error("illegal status transition of {vertex}: {from:?} -> {to:?}")]
    IllegalTransition { vertex: VertexRef, from: Status, to: Status },
}

#[derive(Debug)]
struct Structure {
    chains: Vec<Vec<AdgVertex>>,
    offsets: Vec<usize>,
    /// Per agent, completion time of its plan (used when it has no vertices).
    plan_end: Vec<f64>,
    start_locs: Vec<usize>,
    loc_ids: Vec<String>,
}

/// The graph together with execution state. Cloning is cheap for the
/// structure (shared) and linear in vertex count for the state.
#[derive(Debug, Clone)]
pub struct Adg {
    structure: Arc<Structure>,
    type2: Vec<Dependency>,
    incoming: Vec<Vec<VertexRef>>,
    status: Vec<Status>,
    actual_start: Vec<Option<f64>>,
    actual_goal: Vec<Option<f64>>,
    ties: Vec<Dependency>,
}

/// Builds the dependency graph of a solution.
///
/// A vertex is closed when the next tuple's location is spatially exclusive
/// from the vertex's first location. A Type 2 edge `u -> v` is added between
/// different agents whenever `u` leaves the location `v` ends at and `u` is
/// planned to finish no later than `v`.
pub fn build_adg(sol: &MapfSolution, map: &Roadmap) -> Result<Adg, AdgError> {
    let mut chains = Vec::with_capacity(sol.plans.len());
    let mut plan_end = Vec::with_capacity(sol.plans.len());
    let mut start_locs = Vec::with_capacity(sol.plans.len());
    for (agent, plan) in sol.plans.iter().enumerate() {
        if plan.tuples.is_empty() {
            return Err(AdgError::EmptyPlan(agent));
        }
        let locs: Vec<usize> = plan
            .tuples
            .iter()
            .map(|p| {
                map.vertex_index(&p.loc)
                    .ok_or_else(|| AdgError::UnknownLocation { agent, loc: p.loc.clone() })
            })
            .collect::<Result<_, _>>()?;
        plan_end.push(plan.completion_time());
        start_locs.push(locs[0]);

        let mut chain = Vec::new();
        let mut buf: Vec<usize> = vec![0];
        let close = |buf: &[usize], chain: &mut Vec<AdgVertex>| {
            let tuples: Vec<PlanTuple> = buf.iter().map(|&m| plan.tuples[m].clone()).collect();
            let vlocs: Vec<usize> = buf.iter().map(|&m| locs[m]).collect();
            let lead = vlocs.iter().take_while(|&&l| l == vlocs[0]).count() - 1;
            chain.push(AdgVertex {
                agent,
                index: chain.len(),
                planned_start: tuples[0].t,
                planned_goal: tuples.last().unwrap().t,
                motion_start: tuples[lead].t,
                tuples,
                locs: vlocs,
            });
        };
        for m in 1..plan.tuples.len() {
            buf.push(m);
            if map.exclusive(locs[buf[0]], locs[m]) {
                close(&buf, &mut chain);
                buf = vec![m];
            }
        }
        // Tuples after the last exclusivity break still need a home.
        if buf.len() > 1 {
            close(&buf, &mut chain);
        }
        chains.push(chain);
    }

    let mut offsets = Vec::with_capacity(chains.len() + 1);
    let mut total = 0;
    for c in &chains {
        offsets.push(total);
        total += c.len();
    }
    offsets.push(total);

    // Index vertices by start and goal location.
    let mut leaving: HashMap<usize, Vec<&AdgVertex>> = HashMap::new();
    let mut arriving: HashMap<usize, Vec<&AdgVertex>> = HashMap::new();
    for v in chains.iter().flatten() {
        leaving.entry(v.start_loc()).or_default().push(v);
        arriving.entry(v.goal_loc()).or_default().push(v);
    }
    let mut type2 = Vec::new();
    let mut ties = Vec::new();
    let mut locs_sorted: Vec<_> = leaving.keys().copied().collect();
    locs_sorted.sort_unstable();
    for loc in locs_sorted {
        let Some(targets) = arriving.get(&loc) else { continue };
        for u in &leaving[&loc] {
            for v in targets {
                if u.agent != v.agent && u.planned_goal <= v.planned_goal {
                    let d = Dependency::type2(VertexRef::new(u.agent, u.index), VertexRef::new(v.agent, v.index));
                    if u.planned_goal == v.planned_goal {
                        ties.push(d);
                    }
                    type2.push(d);
                }
            }
        }
    }
    type2.sort_unstable();
    ties.sort_unstable();
    for t in &ties {
        log::debug!("dependency {t} joins events with equal planned completion times");
    }

    let structure = Arc::new(Structure {
        chains,
        offsets,
        plan_end,
        start_locs,
        loc_ids: (0..map.len()).map(|v| map.vertex_id(v).to_string()).collect(),
    });
    let adg = Adg::from_parts(structure, type2, ties);
    if !adg.is_acyclic() {
        return Err(AdgError::Cyclic);
    }
    Ok(adg)
}

impl Adg {
    fn from_parts(structure: Arc<Structure>, type2: Vec<Dependency>, ties: Vec<Dependency>) -> Self {
        let n = *structure.offsets.last().unwrap();
        let mut adg = Adg {
            structure,
            type2: Vec::new(),
            incoming: Vec::new(),
            status: vec![Status::Staged; n],
            actual_start: vec![None; n],
            actual_goal: vec![None; n],
            ties,
        };
        adg.replace_type2(type2);
        adg
    }

    pub fn agents(&self) -> usize {
        self.structure.chains.len()
    }

    pub fn vertex_count(&self) -> usize {
        *self.structure.offsets.last().unwrap()
    }

    pub fn chain_len(&self, agent: usize) -> usize {
        self.structure.chains[agent].len()
    }

    pub fn chain(&self, agent: usize) -> &[AdgVertex] {
        &self.structure.chains[agent]
    }

    pub fn contains(&self, v: VertexRef) -> bool {
        v.agent < self.agents() && v.index < self.chain_len(v.agent)
    }

    pub fn vertex(&self, v: VertexRef) -> &AdgVertex {
        &self.structure.chains[v.agent][v.index]
    }

    /// Dense index of `v` in `0..vertex_count()`.
    pub fn flat(&self, v: VertexRef) -> usize {
        self.structure.offsets[v.agent] + v.index
    }

    pub fn offsets(&self) -> &[usize] {
        &self.structure.offsets
    }

    pub fn vertex_refs(&self) -> impl Iterator<Item = VertexRef> + '_ {
        (0..self.agents()).flat_map(move |a| (0..self.chain_len(a)).map(move |k| VertexRef::new(a, k)))
    }

    /// Planned completion time of an agent's whole plan.
    pub fn plan_end(&self, agent: usize) -> f64 {
        self.structure.plan_end[agent]
    }

    /// Roadmap vertex where the agent's plan begins.
    pub fn start_location(&self, agent: usize) -> usize {
        self.structure.start_locs[agent]
    }

    pub fn location_id(&self, loc: usize) -> &str {
        &self.structure.loc_ids[loc]
    }

    pub fn type1_edges(&self) -> impl Iterator<Item = Dependency> + '_ {
        (0..self.agents()).flat_map(move |a| {
            (1..self.chain_len(a)).map(move |k| Dependency {
                from: VertexRef::new(a, k - 1),
                to: VertexRef::new(a, k),
                kind: DependencyKind::Type1,
            })
        })
    }

    /// Currently active cross-agent dependencies, sorted.
    pub fn type2_edges(&self) -> &[Dependency] {
        &self.type2
    }

    pub fn edges(&self) -> Vec<Dependency> {
        self.type1_edges().chain(self.type2.iter().copied()).collect()
    }

    /// Dependencies whose planned completion times were equal at construction.
    pub fn ties(&self) -> &[Dependency] {
        &self.ties
    }

    pub fn incoming_type2(&self, v: VertexRef) -> &[VertexRef] {
        &self.incoming[self.flat(v)]
    }

    /// Returns a copy with the active Type 2 edges replaced.
    pub fn with_type2(&self, type2: Vec<Dependency>) -> Adg {
        let mut out = self.clone();
        out.replace_type2(type2);
        out
    }

    pub(crate) fn replace_type2(&mut self, mut type2: Vec<Dependency>) {
        type2.sort_unstable();
        type2.dedup();
        let mut incoming = vec![Vec::new(); self.vertex_count()];
        for d in &type2 {
            incoming[self.flat(d.to)].push(d.from);
        }
        self.incoming = incoming;
        self.type2 = type2;
    }

    pub fn is_acyclic(&self) -> bool {
        is_acyclic_edges(self, self.type2.iter())
    }

    pub fn status(&self, v: VertexRef) -> Status {
        self.status[self.flat(v)]
    }

    pub fn actual_start(&self, v: VertexRef) -> Option<f64> {
        self.actual_start[self.flat(v)]
    }

    pub fn actual_goal(&self, v: VertexRef) -> Option<f64> {
        self.actual_goal[self.flat(v)]
    }

    /// Def. of adherence: `v` is staged, its predecessor in the chain is
    /// completed and every Type 2 source pointing at it is completed.
    pub fn may_start(&self, v: VertexRef) -> bool {
        if !self.contains(v) || self.status(v) != Status::Staged {
            return false;
        }
        if v.index > 0 && self.status(VertexRef::new(v.agent, v.index - 1)) != Status::Completed {
            return false;
        }
        self.incoming_type2(v).iter().all(|&u| self.status(u) == Status::Completed)
    }

    /// The only way to change a status: staged -> in_progress -> completed.
    pub fn transition(&mut self, v: VertexRef, to: Status, time: f64) -> Result<(), AdgError> {
        if !self.contains(v) {
            return Err(AdgError::NoSuchVertex(v));
        }
        let f = self.flat(v);
        let from = self.status[f];
        match (from, to) {
            (Status::Staged, Status::InProgress) => self.actual_start[f] = Some(time),
            (Status::InProgress, Status::Completed) => self.actual_goal[f] = Some(time),
            _ => return Err(AdgError::IllegalTransition { vertex: v, from, to }),
        }
        self.status[f] = to;
        Ok(())
    }

    /// Index of the agent's last completed vertex, if any.
    pub fn last_completed(&self, agent: usize) -> Option<usize> {
        let base = self.structure.offsets[agent];
        (0..self.chain_len(agent))
            .take_while(|&k| self.status[base + k] == Status::Completed)
            .last()
    }

    pub fn all_completed(&self) -> bool {
        self.status.iter().all(|&s| s == Status::Completed)
    }

    /// JSON dump: vertices with locations, planned times and status, and all
    /// active edges.
    pub fn dump_json(&self) -> serde_json::Value {
        let vertices: Vec<_> = self
            .vertex_refs()
            .map(|r| {
                let v = self.vertex(r);
                json!({
                    "agent": r.agent,
                    "k": r.index,
                    "locs": v.locs.iter().map(|&l| self.location_id(l)).collect::<Vec<_>>(),
                    "t_s": v.planned_start,
                    "t_g": v.planned_goal,
                    "status": self.status(r),
                })
            })
            .collect();
        let edges: Vec<_> = self
            .edges()
            .iter()
            .map(|d| json!({"from": d.from, "to": d.to, "kind": d.kind}))
            .collect();
        json!({"vertices": vertices, "edges": edges})
    }
}

/// Cycle check of the graph made of `g`'s Type 1 chains and the given Type 2 edges.
pub fn is_acyclic_edges<'a>(g: &Adg, type2: impl IntoIterator<Item = &'a Dependency>) -> bool {
    let mut edges: Vec<(usize, usize)> = g.type1_edges().map(|d| (g.flat(d.from), g.flat(d.to))).collect();
    edges.extend(type2.into_iter().map(|d| (g.flat(d.from), g.flat(d.to))));
    dag::is_acyclic(g.vertex_count(), &edges)
}
