mod common;

use proptest::prelude::*;
use switching_adg::adg::VertexRef;
use switching_adg::{build_adg, validate_solution};

use common::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, ..ProptestConfig::default() })]

    #[test]
    fn warehouse_solutions_are_valid(seed in any::<u64>(), agents in 10usize..=50) {
        let map = warehouse();
        let (starts, goals, sol) = solve_random(&map, agents, seed, 1.0);
        prop_assert_eq!(sol.plans.len(), agents);
        prop_assert!(validate_solution(&sol, &map).is_empty());
        for (i, plan) in sol.plans.iter().enumerate() {
            prop_assert_eq!(&plan.tuples[0].loc, &starts[i]);
            prop_assert_eq!(&plan.tuples.last().unwrap().loc, &goals[i]);
            // Never faster than the unconstrained shortest path.
            let goal = map.vertex_index(&goals[i]).unwrap();
            let sp = map.times_to(goal)[map.vertex_index(&starts[i]).unwrap()];
            prop_assert!(plan.completion_time() >= sp - 1e-9);
        }
        prop_assert!(build_adg(&sol, &map).unwrap().is_acyclic());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn weighted_grid_solutions_are_valid(map_seed in any::<u64>(), seed in any::<u64>(), agents in 2usize..=8) {
        let map = random_grid(map_seed);
        // Dense instances may legitimately come back unsolvable.
        let agents = agents.min(map.len() / 5);
        let (starts, goals, sol) = solve_random(&map, agents, seed, 0.1);
        prop_assert!(validate_solution(&sol, &map).is_empty());
        for (i, plan) in sol.plans.iter().enumerate() {
            let goal = map.vertex_index(&goals[i]).unwrap();
            let sp = map.times_to(goal)[map.vertex_index(&starts[i]).unwrap()];
            prop_assert!(plan.completion_time() >= sp - 1e-9);
        }
    }

    #[test]
    fn adg_structure_invariants(seed in any::<u64>(), agents in 2usize..=20) {
        let map = small_warehouse();
        let (_, _, sol) = solve_random(&map, agents, seed, 1.0);
        let g = build_adg(&sol, &map).unwrap();
        prop_assert!(g.is_acyclic());
        for d in g.type2_edges() {
            let (u, v) = (g.vertex(d.from), g.vertex(d.to));
            prop_assert_ne!(d.from.agent, d.to.agent);
            prop_assert_eq!(u.start_loc(), v.goal_loc());
            prop_assert!(u.planned_goal <= v.planned_goal);
        }
        for a in 0..g.agents() {
            prop_assert!(g.chain_len(a) < sol.plans[a].tuples.len().max(1));
            for k in 1..g.chain_len(a) {
                let (p, q) = (g.vertex(VertexRef::new(a, k - 1)), g.vertex(VertexRef::new(a, k)));
                prop_assert!(map.exclusive(p.start_loc(), q.start_loc()));
            }
        }
        let again = build_adg(&sol, &map).unwrap();
        prop_assert_eq!(g.dump_json(), again.dump_json());
    }

    #[test]
    fn solver_is_deterministic(seed in any::<u64>(), agents in 2usize..=15) {
        let map = small_warehouse();
        let a = solve_random(&map, agents, seed, 1.0).2;
        let b = solve_random(&map, agents, seed, 1.0).2;
        prop_assert_eq!(a.to_json(), b.to_json());
    }
}

#[test]
fn roadmap_is_symmetric_when_undirected() {
    for map in [warehouse(), crossing(), random_grid(3)] {
        assert!(!map.directed());
        for u in 0..map.len() {
            for &(v, t) in map.neighbors(u) {
                assert_eq!(map.edge_time(v, u), Some(t));
            }
        }
    }
}

#[test]
fn crossing_solution_reaches_goals() {
    let sol = crossing_solution();
    assert_eq!(sol.plans[0].tuples.last().unwrap().loc, "H");
    assert_eq!(sol.plans[1].tuples.last().unwrap().loc, "D");
    assert!(validate_solution(&sol, &crossing()).is_empty());
    assert!(sol.sum_of_completion_times().is_finite());
}
