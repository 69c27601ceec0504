//! Temporal constraint model of an executing dependency graph and an exact
//! branch-and-bound over the group booleans.
//!
//! Every vertex `f` has a start variable (node `2f`) and a goal variable (node
//! `2f + 1`). All constraints are difference constraints `t[to] >= t[from] + w`,
//! so for a fixed switch vector the earliest schedule is a longest-path
//! computation over a DAG.

use std::time::Instant;

use serde::Serialize;

use crate::adg::{Adg, Dependency, Status, VertexRef};
use crate::dag;
use crate::sadg::{DependencyGroup, DependencyPair, SwitchVector};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_BIG_M: f64 = 1e4;

const TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Anchor {
    /// Both times already happened.
    Completed { start: f64, goal: f64 },
    /// Start happened; the goal time is the predicted completion.
    InProgress { start: f64, goal: f64 },
    /// Earliest admissible start.
    Staged { release: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Arc {
    from: u32,
    to: u32,
    w: f64,
}

/// Execution-time inputs of [`build_problem`].
#[derive(Debug, Clone)]
pub struct ProblemParams {
    pub t_now: f64,
    pub epsilon: f64,
    pub big_m: f64,
    /// Remaining known halt time of each agent, in seconds.
    pub hold: Vec<f64>,
    /// Fraction of the motion already done by each in-progress vertex, by
    /// agent. Missing entries count as zero.
    pub progress: Vec<f64>,
}

impl ProblemParams {
    pub fn at(t_now: f64, agents: usize) -> Self {
        ProblemParams {
            t_now,
            epsilon: DEFAULT_EPSILON,
            big_m: DEFAULT_BIG_M,
            hold: vec![0.0; agents],
            progress: vec![0.0; agents],
        }
    }
}

/// Constraint system of one optimizer call.
#[derive(Debug, Clone)]
pub struct TemporalProblem {
    nodes: usize,
    offsets: Vec<usize>,
    anchors: Vec<Anchor>,
    /// Type 1 chains and fixed Type 2 edges.
    fixed_arcs: Vec<Arc>,
    /// Per group, per member: (forward arc, reverse arc).
    groups: Vec<Vec<(Arc, Arc)>>,
    /// Node of each agent's final goal variable, if the agent has vertices.
    last_goal: Vec<Option<u32>>,
    /// Completion of agents without vertices.
    constant: f64,
    pub epsilon: f64,
    pub big_m: f64,
    pub t_now: f64,
    /// Set when `big_m` does not clearly dominate the schedule length.
    pub big_m_warning: bool,
}

/// Earliest schedule for one switch vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Schedule {
    pub b: SwitchVector,
    /// Per agent, per vertex.
    pub start_times: Vec<Vec<f64>>,
    pub goal_times: Vec<Vec<f64>>,
    pub objective: f64,
}

impl Schedule {
    pub fn start(&self, v: VertexRef) -> f64 {
        self.start_times[v.agent][v.index]
    }

    pub fn goal(&self, v: VertexRef) -> f64 {
        self.goal_times[v.agent][v.index]
    }
}

/// Search statistics of one [`solve_traced`] call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveTrace {
    pub nodes_explored: u64,
    pub time_ms: f64,
    pub objective: f64,
    pub b: SwitchVector,
}

fn start_node(g: &Adg, v: VertexRef) -> u32 {
    2 * g.flat(v) as u32
}

fn goal_node(g: &Adg, v: VertexRef) -> u32 {
    2 * g.flat(v) as u32 + 1
}

/// Builds the constraint system for the current state of `g`.
///
/// Chains give `t_g >= t_s + tau` and `t_s(next) >= t_g`; every fixed Type 2
/// edge gives `t_s(to) >= t_g(from) + epsilon`; each group contributes one
/// big-M pair per member. Completed vertices are pinned to their recorded
/// times, in-progress ones to their actual start and predicted completion,
/// and staged ones may not start before `t_now` plus their agent's hold.
pub fn build_problem(
    g: &Adg,
    switchable: &[DependencyPair],
    groups: &[DependencyGroup],
    params: &ProblemParams,
) -> TemporalProblem {
    let n = g.vertex_count();
    let mut tau = Vec::with_capacity(n);
    let mut anchors = Vec::with_capacity(n);
    let mut remaining = 0.0;
    for r in g.vertex_refs() {
        let d = g.vertex(r).nominal_duration();
        let hold = params.hold.get(r.agent).copied().unwrap_or(0.0);
        tau.push(d);
        anchors.push(match g.status(r) {
            Status::Completed => Anchor::Completed {
                start: g.actual_start(r).expect("completed vertex has a start"),
                goal: g.actual_goal(r).expect("completed vertex has a goal"),
            },
            Status::InProgress => {
                let done = params.progress.get(r.agent).copied().unwrap_or(0.0).clamp(0.0, 1.0);
                remaining += hold + d * (1.0 - done);
                Anchor::InProgress {
                    start: g.actual_start(r).expect("in-progress vertex has a start"),
                    goal: params.t_now + hold + d * (1.0 - done),
                }
            }
            Status::Staged => {
                remaining += d;
                Anchor::Staged { release: params.t_now + hold }
            }
        });
    }

    let mut fixed_arcs = Vec::new();
    for r in g.vertex_refs() {
        let f = g.flat(r);
        fixed_arcs.push(Arc { from: 2 * f as u32, to: 2 * f as u32 + 1, w: tau[f] });
        if r.index > 0 {
            let prev = VertexRef::new(r.agent, r.index - 1);
            fixed_arcs.push(Arc { from: goal_node(g, prev), to: start_node(g, r), w: 0.0 });
        }
    }
    let switching: std::collections::HashSet<Dependency> = switchable.iter().map(|p| p.forward).collect();
    let type2_arc = |d: &Dependency| Arc { from: goal_node(g, d.from), to: start_node(g, d.to), w: params.epsilon };
    let mut type2_count = 0usize;
    for d in g.type2_edges() {
        type2_count += 1;
        if !switching.contains(d) {
            fixed_arcs.push(type2_arc(d));
        }
    }
    let groups: Vec<Vec<(Arc, Arc)>> = groups
        .iter()
        .map(|grp| {
            grp.members
                .iter()
                .map(|&m| (type2_arc(&switchable[m].forward), type2_arc(&switchable[m].reverse)))
                .collect()
        })
        .collect();

    let mut last_goal = Vec::with_capacity(g.agents());
    let mut constant = 0.0;
    for a in 0..g.agents() {
        let len = g.chain_len(a);
        if len == 0 {
            last_goal.push(None);
            constant += g.plan_end(a);
        } else {
            last_goal.push(Some(goal_node(g, VertexRef::new(a, len - 1))));
        }
    }

    let bound = params.t_now + remaining + params.epsilon * type2_count as f64;
    let big_m_warning = params.big_m <= bound;
    if big_m_warning {
        log::warn!("big-M {} does not exceed the schedule bound {bound:.3}", params.big_m);
    }

    let mut offsets = g.offsets().to_vec();
    offsets.truncate(g.agents());
    TemporalProblem {
        nodes: 2 * n,
        offsets,
        anchors,
        fixed_arcs,
        groups,
        last_goal,
        constant,
        epsilon: params.epsilon,
        big_m: params.big_m,
        t_now: params.t_now,
        big_m_warning,
    }
}

impl TemporalProblem {
    pub fn group_count(&self) -> usize {
        self.groups.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.nodes / 2
    }

    fn fixed_value(&self, node: u32) -> Option<f64> {
        let f = node as usize / 2;
        let is_goal = node % 2 == 1;
        match self.anchors[f] {
            Anchor::Completed { start, goal } => Some(if is_goal { goal } else { start }),
            Anchor::InProgress { start, goal } => Some(if is_goal { goal } else { start }),
            Anchor::Staged { .. } => None,
        }
    }

    /// Earliest times under the fixed arcs plus the given group choices
    /// (`None` = group left out). Returns `None` if the arcs contain a cycle
    /// or a relaxed big-M constraint is violated.
    fn evaluate(&self, choice: &[Option<bool>]) -> Option<(Vec<f64>, f64)> {
        let mut arcs: Vec<(usize, usize)> = Vec::with_capacity(self.fixed_arcs.len() + 2 * self.groups.len());
        let mut weights: Vec<f64> = Vec::with_capacity(arcs.capacity());
        let mut relaxed: Vec<Arc> = Vec::new();
        for a in &self.fixed_arcs {
            arcs.push((a.from as usize, a.to as usize));
            weights.push(a.w);
        }
        for (members, c) in self.groups.iter().zip(choice) {
            let Some(flip) = *c else { continue };
            for &(fwd, rev) in members {
                let (on, off) = if flip { (rev, fwd) } else { (fwd, rev) };
                arcs.push((on.from as usize, on.to as usize));
                weights.push(on.w);
                relaxed.push(off);
            }
        }
        let order = dag::topo_order(self.nodes, &arcs)?;

        let mut head = vec![usize::MAX; self.nodes];
        let mut next = vec![usize::MAX; arcs.len()];
        for (e, &(a, _)) in arcs.iter().enumerate() {
            next[e] = head[a];
            head[a] = e;
        }
        let mut t = vec![f64::NEG_INFINITY; self.nodes];
        let mut pinned = vec![false; self.nodes];
        for node in 0..self.nodes {
            if let Some(v) = self.fixed_value(node as u32) {
                t[node] = v;
                pinned[node] = true;
            } else if node % 2 == 0 {
                if let Anchor::Staged { release } = self.anchors[node / 2] {
                    t[node] = release;
                }
            }
        }
        for &u in &order {
            let tu = t[u];
            let mut e = head[u];
            while e != usize::MAX {
                let v = arcs[e].1;
                if !pinned[v] {
                    let cand = tu + weights[e];
                    if cand > t[v] {
                        t[v] = cand;
                    }
                }
                e = next[e];
            }
        }
        for off in relaxed {
            if t[off.to as usize] < t[off.from as usize] + off.w - self.big_m {
                return None;
            }
        }
        let objective = self.constant + self.last_goal.iter().flatten().map(|&n| t[n as usize]).sum::<f64>();
        Some((t, objective))
    }

    fn schedule(&self, b: SwitchVector, t: Vec<f64>, objective: f64) -> Schedule {
        let mut start_times = Vec::with_capacity(self.offsets.len());
        let mut goal_times = Vec::with_capacity(self.offsets.len());
        for a in 0..self.offsets.len() {
            let end = self.offsets.get(a + 1).copied().unwrap_or(self.vertex_count());
            let range = self.offsets[a]..end;
            start_times.push(range.clone().map(|f| t[2 * f]).collect());
            goal_times.push(range.map(|f| t[2 * f + 1]).collect());
        }
        Schedule { b, start_times, goal_times, objective }
    }

    /// Earliest start times of every vertex when no group constraint applies.
    fn root_starts(&self) -> Vec<f64> {
        let choice = vec![None; self.groups.len()];
        self.evaluate(&choice).map(|(t, _)| t).unwrap_or_else(|| vec![0.0; self.nodes])
    }
}

/// Earliest schedule for a fully assigned switch vector, or `None` if that
/// assignment is infeasible (cyclic).
pub fn evaluate_fixed(p: &TemporalProblem, b: &SwitchVector) -> Option<Schedule> {
    assert_eq!(b.len(), p.groups.len(), "switch vector length");
    let choice: Vec<Option<bool>> = b.iter().map(|&x| Some(x)).collect();
    p.evaluate(&choice).map(|(t, obj)| p.schedule(b.clone(), t, obj))
}

/// Optimal switch vector and its schedule.
pub fn solve(p: &TemporalProblem) -> Schedule {
    solve_traced(p, None).0
}

struct Search<'a> {
    p: &'a TemporalProblem,
    order: Vec<usize>,
    choice: Vec<Option<bool>>,
    best: Vec<bool>,
    best_obj: f64,
    best_weight: usize,
    best_t: Vec<f64>,
    nodes: u64,
    cap: Option<u64>,
}

impl Search<'_> {
    fn better(&self, obj: f64, bits: &[bool]) -> bool {
        if obj < self.best_obj - TIE {
            return true;
        }
        if obj > self.best_obj + TIE {
            return false;
        }
        let w = bits.iter().filter(|&&b| b).count();
        w < self.best_weight || (w == self.best_weight && bits < self.best.as_slice())
    }

    fn dfs(&mut self, depth: usize, weight: usize) {
        if self.cap.is_some_and(|c| self.nodes >= c) {
            return;
        }
        self.nodes += 1;
        let Some((t, lb)) = self.p.evaluate(&self.choice) else { return };
        if lb > self.best_obj + TIE || (lb >= self.best_obj - TIE && weight > self.best_weight) {
            return;
        }
        if depth == self.order.len() {
            let bits: Vec<bool> = self.choice.iter().map(|c| c.unwrap()).collect();
            if self.better(lb, &bits) {
                self.best_weight = weight;
                self.best = bits;
                self.best_obj = lb;
                self.best_t = t;
            }
            return;
        }
        let gi = self.order[depth];
        for flip in [false, true] {
            self.choice[gi] = Some(flip);
            self.dfs(depth + 1, weight + flip as usize);
        }
        self.choice[gi] = None;
    }
}

/// Branch-and-bound over group booleans with an optional node cap. Node
/// relaxations drop unassigned groups, which can only make times earlier.
pub fn solve_traced(p: &TemporalProblem, node_cap: Option<u64>) -> (Schedule, SolveTrace) {
    let clock = Instant::now();
    let k = p.groups.len();
    let zero = vec![Some(false); k];
    let (t0, obj0) = p
        .evaluate(&zero)
        .expect("the all-zero switch vector is infeasible: the active graph is cyclic");

    let mut search = Search {
        p,
        order: Vec::new(),
        choice: vec![None; k],
        best: vec![false; k],
        best_obj: obj0,
        best_weight: 0,
        best_t: t0,
        nodes: 1,
        cap: node_cap,
    };
    if k > 0 {
        let root = p.root_starts();
        let key = |members: &Vec<(Arc, Arc)>| {
            members
                .iter()
                .flat_map(|(f, r)| [f.from, f.to, r.from, r.to])
                .map(|node| root[(node & !1) as usize])
                .fold(f64::INFINITY, f64::min)
        };
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| key(&p.groups[a]).total_cmp(&key(&p.groups[b])).then(a.cmp(&b)));
        search.order = order;
        search.dfs(0, 0);
    }
    let b = SwitchVector(search.best.clone());
    let schedule = p.schedule(b.clone(), search.best_t.clone(), search.best_obj);
    let trace = SolveTrace {
        nodes_explored: search.nodes,
        time_ms: clock.elapsed().as_secs_f64() * 1e3,
        objective: search.best_obj,
        b,
    };
    (schedule, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adg::build_adg;
    use crate::mapf::MapfSolution;
    use crate::roadmap::{open_grid, Roadmap};
    use crate::sadg::{all_pairs, group_pairs, switchable_set};

    fn crossing() -> Roadmap {
        Roadmap::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../maps/crossing.json")).unwrap()
    }

    #[test]
    fn single_chain_sums_durations() {
        let map = Roadmap::from_file_spec(open_grid(4, 1, 1.0, 1.0, 0.3)).unwrap();
        let sol = MapfSolution::from_lists(&[&[("0_0", 0.0), ("1_0", 1.0), ("2_0", 3.0), ("3_0", 4.0)]]);
        let g = build_adg(&sol, &map).unwrap();
        let p = build_problem(&g, &[], &[], &ProblemParams::at(0.0, 1));
        let s = solve(&p);
        assert!(s.b.is_empty());
        assert_eq!(s.goal_times[0], vec![1.0, 3.0, 4.0]);
        assert_eq!(s.objective, 4.0);
    }

    fn fixture() -> Adg {
        let sol = MapfSolution::from_lists(&[
            &[("A", 0.0), ("B", 1.0), ("C", 2.2), ("G", 3.1), ("H", 3.9)],
            &[("E", 0.0), ("F", 1.1), ("G", 3.9), ("C", 4.8), ("D", 5.9)],
        ]);
        build_adg(&sol, &crossing()).unwrap()
    }

    #[test]
    fn worked_example_prefers_reversal_when_first_agent_is_held() {
        let g = fixture();
        let sw = switchable_set(&g, &all_pairs(&g), None);
        let groups = group_pairs(&sw.pairs);
        let mut params = ProblemParams::at(0.0, 2);
        params.hold[0] = 10.0;
        let p = build_problem(&g, &sw.pairs, &groups, &params);
        let keep = evaluate_fixed(&p, &SwitchVector(vec![false])).unwrap();
        let flip = evaluate_fixed(&p, &SwitchVector(vec![true])).unwrap();
        assert!(flip.objective < keep.objective);
        let best = solve(&p);
        assert_eq!(best.b, SwitchVector(vec![true]));
        assert_eq!(best.objective, flip.objective);
    }

    #[test]
    fn undelayed_example_keeps_order() {
        let g = fixture();
        let sw = switchable_set(&g, &all_pairs(&g), None);
        let groups = group_pairs(&sw.pairs);
        let p = build_problem(&g, &sw.pairs, &groups, &ProblemParams::at(0.0, 2));
        let s = solve(&p);
        assert_eq!(s.b, SwitchVector(vec![false]));
        // Agent 0 runs unobstructed: its predicted completion is its motion total.
        assert!((s.goal(VertexRef::new(0, 3)) - 3.9).abs() < 1e-9);
    }

    #[test]
    fn cyclic_assignment_is_infeasible() {
        let g = fixture();
        let sw = switchable_set(&g, &all_pairs(&g), None);
        let singles: Vec<DependencyGroup> = (0..sw.pairs.len())
            .map(|m| DependencyGroup { members: vec![m], pattern: crate::sadg::GroupPattern::Singleton })
            .collect();
        let p = build_problem(&g, &sw.pairs, &singles, &ProblemParams::at(0.0, 2));
        assert!(evaluate_fixed(&p, &SwitchVector(vec![true, false])).is_none());
        assert!(evaluate_fixed(&p, &SwitchVector(vec![false, false])).is_some());
    }

    #[test]
    fn big_m_warning_fires_when_small() {
        let g = fixture();
        let mut params = ProblemParams::at(0.0, 2);
        params.big_m = 5.0;
        assert!(build_problem(&g, &[], &[], &params).big_m_warning);
        assert!(!build_problem(&g, &[], &[], &ProblemParams::at(0.0, 2)).big_m_warning);
    }
}
