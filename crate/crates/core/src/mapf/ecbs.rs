//! Focal (bounded-suboptimal) conflict-based search.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::rc::Rc;

use super::{occupancy, path_cost, Instance, Segment, SolverConfig, TickPath, INF};

/// "Agent must not occupy `loc` during `[tick, tick + 1)`", chained to its parent node's constraints.
struct Constraint {
    agent: u32,
    loc: u32,
    tick: u32,
    parent: Option<Rc<Constraint>>,
}

#[derive(Default)]
struct AgentConstraints {
    cells: HashSet<(u32, u32)>,
    last_at: HashMap<u32, u32>,
    max_tick: u32,
}

impl AgentConstraints {
    fn collect(agent: u32, mut node: Option<&Rc<Constraint>>) -> Self {
        let mut out = AgentConstraints::default();
        while let Some(c) = node {
            if c.agent == agent {
                out.cells.insert((c.loc, c.tick));
                let last = out.last_at.entry(c.loc).or_insert(c.tick);
                *last = (*last).max(c.tick);
                out.max_tick = out.max_tick.max(c.tick);
            }
            node = c.parent.as_ref();
        }
        out
    }

    fn blocked(&self, loc: u32, from: u32, to: u32) -> bool {
        !self.cells.is_empty() && (from..to).any(|u| self.cells.contains(&(loc, u)))
    }

    fn may_rest_at(&self, loc: u32, t: u32) -> bool {
        self.last_at.get(&loc).map_or(true, |&u| u < t)
    }
}

/// Occupancy intervals of all other agents, bucketed by location.
struct ConflictTable {
    by_loc: Vec<Vec<(u32, u32)>>,
}

impl ConflictTable {
    fn new(inst: &Instance, paths: &[Rc<TickPath>], skip: usize) -> Self {
        let mut by_loc = vec![Vec::new(); inst.locations()];
        for (a, path) in paths.iter().enumerate() {
            if a == skip || path.is_empty() {
                continue;
            }
            for (loc, s, e) in occupancy(path) {
                by_loc[loc as usize].push((s, e));
                for &o in &inst.overlap[loc as usize] {
                    by_loc[o as usize].push((s, e));
                }
            }
        }
        ConflictTable { by_loc }
    }

    fn count(&self, loc: u32, from: u32, to: u32) -> u32 {
        self.by_loc[loc as usize]
            .iter()
            .filter(|&&(s, e)| s < to && from < e)
            .count() as u32
    }
}

struct LowNode {
    loc: u32,
    t: u32,
    parent: u32,
    conflicts: u32,
    f: u32,
}

/// Focal A* over (location, tick). Returns the path and a lower bound on the
/// agent's optimal cost under its constraints.
fn low_level(
    inst: &Instance,
    agent: usize,
    cons: &AgentConstraints,
    table: &ConflictTable,
    w: f64,
    budget: usize,
) -> Option<(TickPath, u32)> {
    let h = &inst.h[agent];
    let start = inst.starts[agent];
    let goal = inst.goals[agent];
    let t_limit = cons.max_tick + h[start as usize] + inst.locations() as u32 + 1;

    let mut nodes: Vec<LowNode> = Vec::new();
    let mut best: HashMap<(u32, u32), u32> = HashMap::new();
    let mut closed: HashSet<(u32, u32)> = HashSet::new();
    let mut open_count: BTreeMap<u32, u32> = BTreeMap::new();
    let mut pending: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    let mut focal: BinaryHeap<Reverse<(u32, u32, Reverse<u32>, u32)>> = BinaryHeap::new();

    let f0 = h[start as usize];
    let mut bound = (w * f0 as f64).floor() as u32;
    nodes.push(LowNode { loc: start, t: 0, parent: u32::MAX, conflicts: 0, f: f0 });
    best.insert((start, 0), 0);
    *open_count.entry(f0).or_default() += 1;
    focal.push(Reverse((0, f0, Reverse(0), 0)));

    let mut expansions = 0usize;
    while let Some(Reverse((_, f, _, id))) = focal.pop() {
        let f_min = *open_count.keys().next().expect("popped node is counted");
        let slot = open_count.get_mut(&f).unwrap();
        *slot -= 1;
        if *slot == 0 {
            open_count.remove(&f);
        }
        let (loc, t, conflicts) = {
            let n = &nodes[id as usize];
            (n.loc, n.t, n.conflicts)
        };
        if closed.contains(&(loc, t)) || best.get(&(loc, t)).is_some_and(|&c| c < conflicts) {
            refill(&open_count, &mut pending, &mut focal, &mut bound, w, &nodes);
            continue;
        }
        closed.insert((loc, t));

        if loc == goal && cons.may_rest_at(goal, t) {
            return Some((reconstruct(&nodes, id), f_min.min(t)));
        }
        expansions += 1;
        if expansions > budget {
            return None;
        }

        let mut push = |nloc: u32, nt: u32, nconf: u32, nodes: &mut Vec<LowNode>| {
            if nt > t_limit || closed.contains(&(nloc, nt)) {
                return;
            }
            if best.get(&(nloc, nt)).is_some_and(|&c| c <= nconf) {
                return;
            }
            best.insert((nloc, nt), nconf);
            let nf = nt + h[nloc as usize];
            let nid = nodes.len() as u32;
            nodes.push(LowNode { loc: nloc, t: nt, parent: id, conflicts: nconf, f: nf });
            *open_count.entry(nf).or_default() += 1;
            if nf <= bound {
                focal.push(Reverse((nconf, nf, Reverse(nt), nid)));
            } else {
                pending.entry(nf).or_default().push(nid);
            }
        };

        if !cons.blocked(loc, t, t + 1) {
            push(loc, t + 1, conflicts + table.count(loc, t, t + 1), &mut nodes);
        }
        for &(next, d) in &inst.adj[loc as usize] {
            if h[next as usize] == INF || cons.blocked(loc, t, t + d) || cons.blocked(next, t, t + d) {
                continue;
            }
            let c = table.count(loc, t, t + d) + table.count(next, t, t + d);
            push(next, t + d, conflicts + c, &mut nodes);
        }
        refill(&open_count, &mut pending, &mut focal, &mut bound, w, &nodes);
    }
    None
}

fn refill(
    open_count: &BTreeMap<u32, u32>,
    pending: &mut BTreeMap<u32, Vec<u32>>,
    focal: &mut BinaryHeap<Reverse<(u32, u32, Reverse<u32>, u32)>>,
    bound: &mut u32,
    w: f64,
    nodes: &[LowNode],
) {
    let Some(&f_min) = open_count.keys().next() else {
        return;
    };
    let new_bound = (w * f_min as f64).floor() as u32;
    if new_bound > *bound {
        *bound = new_bound;
    }
    while let Some(entry) = pending.first_entry() {
        if *entry.key() > *bound {
            break;
        }
        for nid in entry.remove() {
            let n = &nodes[nid as usize];
            focal.push(Reverse((n.conflicts, n.f, Reverse(n.t), nid)));
        }
    }
}

fn reconstruct(nodes: &[LowNode], mut id: u32) -> TickPath {
    let mut states = Vec::new();
    while id != u32::MAX {
        let n = &nodes[id as usize];
        states.push((n.loc, n.t));
        id = n.parent;
    }
    states.reverse();
    let mut path: TickPath = Vec::new();
    let mut prev_t = 0;
    for (loc, t) in states {
        match path.last_mut() {
            Some(seg) if seg.loc == loc => {}
            Some(seg) => {
                seg.depart = prev_t;
                path.push(Segment { loc, arrive: t, depart: INF });
            }
            None => path.push(Segment { loc, arrive: t, depart: INF }),
        }
        prev_t = t;
    }
    path
}

struct CtNode {
    cons: Option<Rc<Constraint>>,
    paths: Vec<Rc<TickPath>>,
    lbs: Vec<u32>,
    cost: u64,
    lb: u64,
    conflicts: u32,
    id: u64,
}

struct FirstConflict {
    tick: u32,
    a: (u32, u32),
    b: (u32, u32),
}

/// Number of conflicting agent pairs and the earliest conflict.
fn find_conflicts(inst: &Instance, paths: &[Rc<TickPath>]) -> (u32, Option<FirstConflict>) {
    let mut by_loc: Vec<Vec<(u32, u32, u32)>> = vec![Vec::new(); inst.locations()];
    for (a, path) in paths.iter().enumerate() {
        for (loc, s, e) in occupancy(path) {
            by_loc[loc as usize].push((a as u32, s, e));
        }
    }
    let mut pairs: HashSet<(u32, u32)> = HashSet::new();
    let mut first: Option<FirstConflict> = None;
    let mut consider = |x: (u32, u32, u32), lx: u32, y: (u32, u32, u32), ly: u32| {
        if x.0 == y.0 || x.1 >= y.2 || y.1 >= x.2 {
            return;
        }
        let (p, q) = if x.0 < y.0 { ((x.0, lx), (y.0, ly)) } else { ((y.0, ly), (x.0, lx)) };
        pairs.insert((p.0, q.0));
        let tick = x.1.max(y.1);
        let key = (tick, p.0, q.0, p.1, q.1);
        if first.as_ref().map_or(true, |c| key < (c.tick, c.a.0, c.b.0, c.a.1, c.b.1)) {
            first = Some(FirstConflict { tick, a: p, b: q });
        }
    };
    for loc in 0..inst.locations() {
        let here = &by_loc[loc];
        for (n, &x) in here.iter().enumerate() {
            for &y in &here[n + 1..] {
                consider(x, loc as u32, y, loc as u32);
            }
            for &o in &inst.overlap[loc] {
                if (o as usize) > loc {
                    for &y in &by_loc[o as usize] {
                        consider(x, loc as u32, y, o);
                    }
                }
            }
        }
    }
    (pairs.len() as u32, first)
}

pub(super) fn solve(inst: &Instance, cfg: &SolverConfig) -> Option<Vec<TickPath>> {
    let n = inst.agents();
    let mut paths: Vec<Rc<TickPath>> = vec![Rc::new(Vec::new()); n];
    let mut lbs = vec![0u32; n];
    let none = AgentConstraints::default();
    for a in 0..n {
        let table = ConflictTable::new(inst, &paths, a);
        let (p, lb) = low_level(inst, a, &none, &table, cfg.w, cfg.low_level_budget)?;
        paths[a] = Rc::new(p);
        lbs[a] = lb;
    }
    let (conflicts, _) = find_conflicts(inst, &paths);
    let mut next_id = 0u64;
    let mut make = |cons, paths: Vec<Rc<TickPath>>, lbs: Vec<u32>, conflicts| {
        let cost = paths.iter().map(|p| path_cost(p) as u64).sum();
        let lb = lbs.iter().map(|&x| x as u64).sum();
        next_id += 1;
        CtNode { cons, paths, lbs, cost, lb, conflicts, id: next_id }
    };
    let mut open = vec![make(None, paths, lbs, conflicts)];

    for _ in 0..cfg.ecbs_node_budget {
        let lb_min = open.iter().map(|c| c.lb).min()?;
        let threshold = cfg.w * lb_min as f64;
        let pick = open
            .iter()
            .enumerate()
            .filter(|(_, c)| c.cost as f64 <= threshold + 1e-9)
            .min_by_key(|(_, c)| (c.conflicts, c.cost, c.id))
            .or_else(|| open.iter().enumerate().min_by_key(|(_, c)| (c.lb, c.id)))
            .map(|(i, _)| i)?;
        let node = open.swap_remove(pick);
        if node.conflicts == 0 {
            return Some(node.paths.iter().map(|p| (**p).clone()).collect());
        }
        let (_, Some(conflict)) = find_conflicts(inst, &node.paths) else {
            return Some(node.paths.iter().map(|p| (**p).clone()).collect());
        };
        for (agent, loc) in [conflict.a, conflict.b] {
            let cons = Some(Rc::new(Constraint {
                agent,
                loc,
                tick: conflict.tick,
                parent: node.cons.clone(),
            }));
            let ac = AgentConstraints::collect(agent, cons.as_ref());
            let table = ConflictTable::new(inst, &node.paths, agent as usize);
            let Some((p, lb)) = low_level(inst, agent as usize, &ac, &table, cfg.w, cfg.low_level_budget) else {
                continue;
            };
            let mut paths = node.paths.clone();
            let mut lbs = node.lbs.clone();
            paths[agent as usize] = Rc::new(p);
            lbs[agent as usize] = lb;
            let (conflicts, _) = find_conflicts(inst, &paths);
            open.push(make(cons, paths, lbs, conflicts));
        }
    }
    None
}
