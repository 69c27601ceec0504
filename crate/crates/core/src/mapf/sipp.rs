//! Prioritized planning with safe-interval path planning, used when the
//! focal search runs out of budget.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{occupancy, Instance, Segment, SolverConfig, TickPath, INF};

pub(super) fn solve(inst: &Instance, cfg: &SolverConfig) -> Option<Vec<TickPath>> {
    let n = inst.agents();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (Reverse(inst.h[i][inst.starts[i] as usize]), i));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for attempt in 0..=cfg.sipp_restarts {
        if attempt > 0 {
            order.shuffle(&mut rng);
        }
        // Alternate between holding unplanned starts for one tick and until
        // their agent is planned.
        let hold = if attempt % 2 == 0 { 1 } else { INF };
        if let Some(paths) = plan_in_order(inst, &order, hold) {
            return Some(paths);
        }
    }
    None
}

fn plan_in_order(inst: &Instance, order: &[usize], hold: u32) -> Option<Vec<TickPath>> {
    let mut reserved: Vec<Vec<(u32, u32)>> = vec![Vec::new(); inst.locations()];
    let mut waiting: Vec<Option<usize>> = vec![None; inst.locations()];
    for &a in order {
        let s = inst.starts[a] as usize;
        waiting[s] = Some(a);
        for &o in &inst.overlap[s] {
            waiting[o as usize] = Some(a);
        }
    }
    let mut paths = vec![Vec::new(); inst.agents()];
    for &a in order {
        let path = plan_agent(inst, a, &reserved, &waiting, hold)?;
        for (loc, s, e) in occupancy(&path) {
            reserved[loc as usize].push((s, e));
            for &o in &inst.overlap[loc as usize] {
                reserved[o as usize].push((s, e));
            }
        }
        let s = inst.starts[a] as usize;
        waiting[s] = None;
        for &o in &inst.overlap[s] {
            waiting[o as usize] = None;
        }
        paths[a] = path;
    }
    Some(paths)
}

fn safe_intervals(reserved: &[(u32, u32)], hold: u32) -> Vec<(u32, u32)> {
    let mut busy: Vec<(u32, u32)> = reserved.to_vec();
    if hold > 0 {
        busy.push((0, hold));
    }
    busy.sort_unstable();
    let mut out = Vec::new();
    let mut free_from = 0u32;
    for (s, e) in busy {
        if s > free_from {
            out.push((free_from, s));
        }
        if e == INF {
            return out;
        }
        free_from = free_from.max(e);
    }
    out.push((free_from, INF));
    out
}

struct Node {
    loc: u32,
    arrive: u32,
    depart_prev: u32,
    parent: u32,
}

fn plan_agent(
    inst: &Instance,
    agent: usize,
    reserved: &[Vec<(u32, u32)>],
    waiting: &[Option<usize>],
    hold: u32,
) -> Option<TickPath> {
    let h = &inst.h[agent];
    let goal = inst.goals[agent];
    let mut cache: HashMap<u32, Vec<(u32, u32)>> = HashMap::new();
    let mut intervals = |loc: u32| -> Vec<(u32, u32)> {
        cache
            .entry(loc)
            .or_insert_with(|| {
                let held = waiting[loc as usize].is_some_and(|w| w != agent);
                safe_intervals(&reserved[loc as usize], if held { hold } else { 0 })
            })
            .clone()
    };

    let start = inst.starts[agent];
    let first = intervals(start);
    if first.first().map_or(true, |iv| iv.0 != 0) {
        return None;
    }
    let mut nodes = vec![Node { loc: start, arrive: 0, depart_prev: 0, parent: u32::MAX }];
    let mut best: HashMap<(u32, usize), u32> = HashMap::new();
    best.insert((start, 0), 0);
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((h[start as usize], 0u32, 0usize, 0u32)));

    while let Some(Reverse((_, arrive, iv_idx, id))) = heap.pop() {
        let loc = nodes[id as usize].loc;
        if best.get(&(loc, iv_idx)).is_some_and(|&b| b < arrive) {
            continue;
        }
        let iv_end = intervals(loc)[iv_idx].1;
        if loc == goal && iv_end == INF {
            return Some(reconstruct(&nodes, id));
        }
        for &(next, d) in &inst.adj[loc as usize] {
            if h[next as usize] == INF {
                continue;
            }
            for (k, &(c, e)) in intervals(next).iter().enumerate() {
                let dep = arrive.max(c) as u64;
                let arr = dep + d as u64;
                if arr > iv_end as u64 {
                    break;
                }
                if e != INF && arr >= e as u64 {
                    continue;
                }
                let arr = arr as u32;
                if best.get(&(next, k)).is_some_and(|&b| b <= arr) {
                    continue;
                }
                best.insert((next, k), arr);
                let nid = nodes.len() as u32;
                nodes.push(Node { loc: next, arrive: arr, depart_prev: dep as u32, parent: id });
                heap.push(Reverse((arr + h[next as usize], arr, k, nid)));
            }
        }
    }
    None
}

fn reconstruct(nodes: &[Node], mut id: u32) -> TickPath {
    let mut chain = Vec::new();
    while id != u32::MAX {
        chain.push(id);
        id = nodes[id as usize].parent;
    }
    chain.reverse();
    let mut path: TickPath = chain
        .iter()
        .map(|&i| Segment { loc: nodes[i as usize].loc, arrive: nodes[i as usize].arrive, depart: INF })
        .collect();
    for m in 1..chain.len() {
        path[m - 1].depart = nodes[chain[m] as usize].depart_prev;
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intervals_complement_reservations() {
        assert_eq!(safe_intervals(&[], 0), vec![(0, INF)]);
        assert_eq!(safe_intervals(&[(3, 5), (4, 7)], 1), vec![(1, 3), (7, INF)]);
        assert_eq!(safe_intervals(&[(2, INF)], 0), vec![(0, 2)]);
        assert!(safe_intervals(&[], INF).is_empty());
    }
}
