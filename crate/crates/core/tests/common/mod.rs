#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use switching_adg::adg::{Adg, Dependency, Status, VertexRef};
use switching_adg::batch::generate_scenario;
use switching_adg::optimizer::ProblemParams;
use switching_adg::roadmap::{grid_file, warehouse_grid, RoadmapFile};
use switching_adg::sadg::Switchable;
use switching_adg::sim::SimState;
use switching_adg::{build_adg, run_adg_with, solve_mapf_with, DependencyGroup, MapfSolution, Roadmap, SimConfig, SolverConfig};

pub fn map_path(name: &str) -> String {
    format!("{}/../../maps/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn crossing() -> Roadmap {
    Roadmap::load(map_path("crossing.json")).unwrap()
}

pub fn warehouse() -> Roadmap {
    Roadmap::load(map_path("warehouse_30x30.json")).unwrap()
}

pub fn small_warehouse() -> Roadmap {
    Roadmap::from_file_spec(warehouse_grid(14, 14, 1.0, 1.0, 0.3)).unwrap()
}

/// Grid with pillars at random odd cells and random edge times.
pub fn random_grid(seed: u64) -> Roadmap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.gen_range(5..=9);
    let h = rng.gen_range(5..=9);
    let pillars: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(0.5)).collect();
    let mut file: RoadmapFile =
        grid_file(w, h, 1.0, 1.0, 0.3, |x, y| x % 2 == 1 && y % 2 == 1 && pillars[y * w + x]);
    for e in &mut file.edges {
        e.time = [0.5, 0.8, 1.0, 1.2, 1.5][rng.gen_range(0..5)];
    }
    Roadmap::from_file_spec(file).unwrap()
}

pub fn crossing_solution() -> MapfSolution {
    switching_adg::solve_mapf(&crossing(), &["A", "E"], &["H", "D"], 1.6).unwrap()
}

pub fn fixture_solution() -> MapfSolution {
    MapfSolution::from_lists(&[
        &[("A", 0.0), ("B", 1.0), ("C", 2.2), ("G", 3.1), ("H", 3.9)],
        &[("E", 0.0), ("F", 1.1), ("G", 3.9), ("C", 4.8), ("D", 5.9)],
    ])
}

pub fn solve_random(map: &Roadmap, agents: usize, seed: u64, tick: f64) -> (Vec<String>, Vec<String>, MapfSolution) {
    let (starts, goals) = generate_scenario(map, agents, seed).unwrap();
    let cfg = SolverConfig { tick, seed, ..SolverConfig::default() };
    let sol = solve_mapf_with(map, &starts, &goals, &cfg).unwrap();
    (starts, goals, sol)
}

pub fn random_adg(map: &Roadmap, agents: usize, seed: u64, tick: f64) -> Adg {
    let (_, _, sol) = solve_random(map, agents, seed, tick);
    build_adg(&sol, map).unwrap()
}

/// Independent earliest-schedule oracle for one fixed orientation.
///
/// Returns `None` when the chosen edges form a cycle, otherwise the objective
/// and the (start, goal) time of every vertex in flat order.
pub fn oracle_schedule(
    g: &Adg,
    sw: &Switchable,
    groups: &[DependencyGroup],
    bits: &[bool],
    params: &ProblemParams,
) -> Option<(f64, Vec<(f64, f64)>)> {
    let mut edges: Vec<Dependency> = sw.fixed.clone();
    for (grp, &flip) in groups.iter().zip(bits) {
        for &m in &grp.members {
            let p = &sw.pairs[m];
            edges.push(if flip { p.reverse } else { p.forward });
        }
    }
    let verts: Vec<VertexRef> = g.vertex_refs().collect();
    let n = verts.len();
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for d in &edges {
        preds[g.flat(d.to)].push(g.flat(d.from));
    }

    // Depth-first post order over predecessors; a grey hit is a cycle.
    let mut colour = vec![0u8; n];
    let mut order = Vec::with_capacity(n);
    for root in 0..n {
        if colour[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, false)];
        while let Some((f, done)) = stack.pop() {
            if done {
                colour[f] = 2;
                order.push(f);
                continue;
            }
            if colour[f] != 0 {
                continue;
            }
            colour[f] = 1;
            stack.push((f, true));
            let v = verts[f];
            let chain_pred = (v.index > 0).then(|| g.flat(VertexRef::new(v.agent, v.index - 1)));
            for &u in preds[f].iter().chain(chain_pred.iter()) {
                match colour[u] {
                    1 => return None,
                    0 => stack.push((u, false)),
                    _ => {}
                }
            }
        }
    }

    let mut times = vec![(0.0, 0.0); n];
    for f in order {
        let v = verts[f];
        let tau = g.vertex(v).nominal_duration();
        let hold = params.hold[v.agent];
        times[f] = match g.status(v) {
            Status::Completed => (g.actual_start(v).unwrap(), g.actual_goal(v).unwrap()),
            Status::InProgress => {
                let p = params.progress[v.agent].clamp(0.0, 1.0);
                (g.actual_start(v).unwrap(), params.t_now + hold + tau * (1.0 - p))
            }
            Status::Staged => {
                let mut s = params.t_now + hold;
                if v.index > 0 {
                    s = s.max(times[f - 1].1);
                }
                for &u in &preds[f] {
                    s = s.max(times[u].1 + params.epsilon);
                }
                (s, s + tau)
            }
        };
    }
    let objective = (0..g.agents())
        .map(|a| match g.chain_len(a) {
            0 => g.plan_end(a),
            len => times[g.flat(VertexRef::new(a, len - 1))].1,
        })
        .sum();
    Some((objective, times))
}

/// States seen before the optimizer step, every `every` ticks, of an episode
/// run with the given configuration.
pub fn snapshots(adg: Adg, cfg: &SimConfig, every: u64) -> Vec<SimState> {
    let mut out = Vec::new();
    run_adg_with(adg, cfg, |s| {
        if s.tick % every == 0 {
            out.push(s.clone());
        }
    })
    .unwrap();
    out
}

/// Acyclicity of the subgraph made of the chains of agents `a` and `b` and
/// the given cross edges between them (Kahn's algorithm).
pub fn two_agent_acyclic(g: &Adg, edges: &[Dependency], a: usize, b: usize) -> bool {
    let id = |v: VertexRef| if v.agent == a { v.index } else { g.chain_len(a) + v.index };
    let n = g.chain_len(a) + g.chain_len(b);
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for agent in [a, b] {
        for k in 1..g.chain_len(agent) {
            succ[id(VertexRef::new(agent, k - 1))].push(id(VertexRef::new(agent, k)));
        }
    }
    for d in edges {
        let inside = |v: VertexRef| v.agent == a || v.agent == b;
        if inside(d.from) && inside(d.to) {
            succ[id(d.from)].push(id(d.to));
        }
    }
    let mut indeg = vec![0usize; n];
    for s in succ.iter().flatten() {
        indeg[*s] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut seen = 0;
    while let Some(v) = ready.pop() {
        seen += 1;
        for &s in &succ[v] {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(s);
            }
        }
    }
    seen == n
}
