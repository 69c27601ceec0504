mod common;

use proptest::prelude::*;
use switching_adg::adg::{Adg, Status};
use switching_adg::optimizer::ProblemParams;
use switching_adg::sadg::{all_pairs, materialize_pairs, Switchable};
use switching_adg::sim::{problem_params, SimState};
use switching_adg::{
    build_problem, evaluate_fixed, group_pairs, materialize, reverse_dependency, solve, switchable_set,
    DependencyGroup, SimConfig, SwitchVector,
};

use common::*;

struct Case {
    g: Adg,
    sw: Switchable,
    groups: Vec<DependencyGroup>,
    params: ProblemParams,
}

/// Optimizer inputs taken from the middle of delayed episodes.
fn cases(seed: u64, agents: usize, k: u64, horizon: Option<usize>, switching: bool) -> Vec<Case> {
    let map = small_warehouse();
    let adg = random_adg(&map, agents, seed, 1.0);
    let pairs = all_pairs(&adg);
    let cfg = SimConfig {
        tick: 1.0,
        delay_ticks: k,
        delay_onset: Some(2),
        delay_fraction: 0.3,
        seed,
        switching,
        horizon,
        ..SimConfig::default()
    };
    snapshots(adg, &cfg, 2)
        .into_iter()
        .map(|s: SimState| {
            let sw = switchable_set(&s.adg, &pairs, horizon);
            let groups = group_pairs(&sw.pairs);
            let params = problem_params(&s, &cfg);
            Case { g: s.adg, sw, groups, params }
        })
        .collect()
}

fn flat_times(s: &switching_adg::Schedule) -> Vec<(f64, f64)> {
    s.start_times.iter().flatten().copied().zip(s.goal_times.iter().flatten().copied()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn reverse_is_an_involution(seed in any::<u64>(), agents in 2usize..=16) {
        let g = random_adg(&small_warehouse(), agents, seed, 1.0);
        for d in g.type2_edges() {
            let Some(p) = reverse_dependency(&g, d).unwrap() else { continue };
            let back = reverse_dependency(&g, &p.reverse).unwrap().expect("reverse of a reverse exists");
            prop_assert_eq!(back.reverse, *d);
            // Both orientations guard the same location.
            prop_assert_eq!(g.vertex(d.from).start_loc(), g.vertex(d.to).goal_loc());
            prop_assert_eq!(g.vertex(p.reverse.from).start_loc(), g.vertex(p.reverse.to).goal_loc());
            prop_assert_eq!(g.vertex(d.from).start_loc(), g.vertex(p.reverse.from).start_loc());
        }
    }

    #[test]
    fn groups_are_sound(seed in any::<u64>(), agents in 3usize..=12, h in prop::option::of(1usize..=4)) {
        for c in cases(seed, agents, 4, h, true) {
            let singles: Vec<DependencyGroup> = (0..c.sw.pairs.len())
                .map(|m| DependencyGroup { members: vec![m], pattern: switching_adg::GroupPattern::Singleton })
                .collect();
            for grp in &c.groups {
                for flip in [false, true] {
                    let mut bits = vec![false; c.sw.pairs.len()];
                    for &m in &grp.members {
                        bits[m] = flip;
                    }
                    let f = c.sw.pairs[grp.members[0]].forward;
                    let own: Vec<_> = grp
                        .members
                        .iter()
                        .map(|&m| if flip { c.sw.pairs[m].reverse } else { c.sw.pairs[m].forward })
                        .collect();
                    prop_assert!(two_agent_acyclic(&c.g, &own, f.from.agent, f.to.agent));
                    if grp.members.len() > 1 {
                        for &m in &grp.members {
                            let mut mixed = bits.clone();
                            mixed[m] = !flip;
                            prop_assert!(oracle_schedule(&c.g, &c.sw, &singles, &mixed, &c.params).is_none());
                            prop_assert!(!materialize_pairs(&c.g, &c.sw.pairs, &mixed).unwrap().is_acyclic());
                        }
                    }
                }
            }
            let zero = materialize(&c.g, &c.sw.pairs, &c.groups, &SwitchVector::zeros(c.groups.len())).unwrap();
            prop_assert!(zero.is_acyclic());
            prop_assert_eq!(zero.type2_edges(), c.g.type2_edges());
        }
    }

    #[test]
    fn solve_matches_brute_force(seed in any::<u64>(), agents in 3usize..=10, h in prop::option::of(1usize..=3)) {
        for c in cases(seed, agents, 5, h, false) {
            let m = c.groups.len();
            if m > 10 {
                continue;
            }
            let p = build_problem(&c.g, &c.sw.pairs, &c.groups, &c.params);
            let got = solve(&p);
            let mut best = f64::INFINITY;
            let mut best_weight = usize::MAX;
            for mask in 0..1u64 << m {
                let b = SwitchVector::from_mask(mask, m);
                let Some((obj, times)) = oracle_schedule(&c.g, &c.sw, &c.groups, &b, &c.params) else {
                    prop_assert!(evaluate_fixed(&p, &b).is_none());
                    continue;
                };
                let fixed = evaluate_fixed(&p, &b).expect("acyclic assignment is feasible");
                prop_assert!((fixed.objective - obj).abs() <= 1e-9);
                for (x, y) in flat_times(&fixed).iter().zip(&times) {
                    prop_assert!((x.0 - y.0).abs() <= 1e-9 && (x.1 - y.1).abs() <= 1e-9);
                }
                if obj < best - 1e-9 || (obj <= best + 1e-9 && b.ones() < best_weight) {
                    best_weight = if obj < best - 1e-9 { b.ones() } else { best_weight.min(b.ones()) };
                    best = best.min(obj);
                }
            }
            prop_assert!((got.objective - best).abs() <= 1e-9, "solve {} vs brute force {}", got.objective, best);
            prop_assert_eq!(got.b.ones(), best_weight);
            let zero = evaluate_fixed(&p, &SwitchVector::zeros(m)).unwrap();
            prop_assert!(got.objective <= zero.objective);

            // No dependency may point from unfinished work into finished work.
            let next = materialize(&c.g, &c.sw.pairs, &c.groups, &got.b).unwrap();
            prop_assert!(next.is_acyclic());
            for d in next.type2_edges() {
                prop_assert!(!(next.status(d.to) == Status::Completed && next.status(d.from) != Status::Completed));
            }
        }
    }

    #[test]
    fn earliest_schedule_is_tight(seed in any::<u64>(), agents in 3usize..=10) {
        for c in cases(seed, agents, 3, None, true) {
            let p = build_problem(&c.g, &c.sw.pairs, &c.groups, &c.params);
            let s = evaluate_fixed(&p, &SwitchVector::zeros(c.groups.len())).unwrap();
            let times = flat_times(&s);
            for v in c.g.vertex_refs() {
                if c.g.status(v) != Status::Staged {
                    continue;
                }
                let f = c.g.flat(v);
                let tau = c.g.vertex(v).nominal_duration();
                prop_assert!((times[f].1 - times[f].0 - tau).abs() <= 1e-9);
                // Lowering the start by any amount breaks one of its lower bounds.
                let mut bounds = vec![c.params.t_now + c.params.hold[v.agent]];
                if v.index > 0 {
                    bounds.push(times[f - 1].1);
                }
                for &u in c.g.incoming_type2(v) {
                    bounds.push(times[c.g.flat(u)].1 + c.params.epsilon);
                }
                let lower = bounds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((times[f].0 - lower).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn longer_holds_never_help(seed in any::<u64>(), agents in 3usize..=10, extra in 0.5f64..20.0, who in any::<prop::sample::Index>()) {
        for c in cases(seed, agents, 3, Some(2), false) {
            if c.groups.len() > 12 {
                continue;
            }
            let a = who.index(c.g.agents());
            let base = solve(&build_problem(&c.g, &c.sw.pairs, &c.groups, &c.params)).objective;
            let mut longer = c.params.clone();
            longer.hold[a] += extra;
            let worse = solve(&build_problem(&c.g, &c.sw.pairs, &c.groups, &longer)).objective;
            prop_assert!(worse >= base - 1e-9, "{} < {}", worse, base);
        }
    }
}
