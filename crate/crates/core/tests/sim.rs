mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use switching_adg::adg::{Adg, VertexRef};
use switching_adg::sim::{Event, Transition};
use switching_adg::{audit_collisions, build_adg, improvement, run_adg, run_adg_with, run_episode, EventLog, MapfSolution, SimConfig};

use common::*;

fn halted_first_agent(switching: bool, horizon: Option<usize>) -> SimConfig {
    SimConfig {
        tick: 0.1,
        delay_ticks: 100,
        delay_onset: Some(0),
        delay_agents: Some(vec![0]),
        switching,
        horizon,
        ..SimConfig::default()
    }
}

/// Position of each (vertex, transition) in the log.
fn event_positions(log: &EventLog) -> HashMap<(VertexRef, Transition), usize> {
    log.events.iter().enumerate().map(|(i, e)| ((e.vertex, e.transition), i)).collect()
}

/// Every dependency of the final graph was satisfied when its target started.
fn check_adherence(log: &EventLog, g: &Adg) -> Result<(), String> {
    let pos = event_positions(log);
    let mut deps: Vec<(VertexRef, VertexRef)> = g.type2_edges().iter().map(|d| (d.from, d.to)).collect();
    deps.extend(g.type1_edges().map(|d| (d.from, d.to)));
    for (u, v) in deps {
        let done = pos.get(&(u, Transition::Complete)).ok_or(format!("{u} never completed"))?;
        let start = pos.get(&(v, Transition::Start)).ok_or(format!("{v} never started"))?;
        if done > start {
            return Err(format!("{v} started before {u} completed"));
        }
    }
    Ok(())
}

#[test]
fn nominal_execution_follows_the_plan() {
    let map = crossing();
    let sol = crossing_solution();
    for switching in [false, true] {
        let cfg = SimConfig { switching, ..SimConfig::default() };
        let (m, log) = run_episode(&map, &sol, &cfg).unwrap();
        for (a, plan) in sol.plans.iter().enumerate() {
            assert!((m.completion[a] - plan.completion_time()).abs() <= cfg.tick + 1e-9);
        }
        assert!(audit_collisions(&log, &build_adg(&sol, &map).unwrap(), &map).is_empty());
    }
}

#[test]
fn held_leader_delays_follower_without_switching() {
    let map = crossing();
    let sol = crossing_solution();
    let (m, log) = run_episode(&map, &sol, &halted_first_agent(false, None)).unwrap();
    assert_eq!(m.halted_agents, vec![0]);
    let nominal: Vec<f64> = sol.plans.iter().map(|p| p.completion_time()).collect();
    assert!((m.completion[0] - nominal[0] - 10.0).abs() <= 0.1 + 1e-9);
    assert!((m.completion[1] - nominal[1] - 10.0).abs() <= 0.1 + 1e-9, "{:?}", m.completion);
    assert!(audit_collisions(&log, &build_adg(&sol, &map).unwrap(), &map).is_empty());
}

#[test]
fn switching_lets_the_follower_overtake() {
    let map = crossing();
    let sol = crossing_solution();
    let nominal: Vec<f64> = sol.plans.iter().map(|p| p.completion_time()).collect();
    let (base, _) = run_episode(&map, &sol, &halted_first_agent(false, None)).unwrap();
    for horizon in [None, Some(2), Some(3)] {
        let (m, log) = run_episode(&map, &sol, &halted_first_agent(true, horizon)).unwrap();
        assert!(m.switch_ticks >= 1);
        assert!(m.completion[1] <= nominal[1] + 0.1 + 1e-9, "{:?}", m.completion);
        assert!(m.cumulative < base.cumulative);
        assert!(improvement(&base, &m).unwrap() > 0.0);
        assert!(audit_collisions(&log, &build_adg(&sol, &map).unwrap(), &map).is_empty());
    }
    // With a one-vertex horizon only one of the two coupled pairs is visible,
    // and flipping it alone would close a cycle.
    let (m, _) = run_episode(&map, &sol, &halted_first_agent(true, Some(1))).unwrap();
    assert_eq!(m.switch_ticks, 0);
    assert_eq!(m.cumulative, base.cumulative);
}

#[test]
fn all_agents_halted_still_finishes() {
    let map = small_warehouse();
    let (_, _, sol) = solve_random(&map, 8, 5, 1.0);
    let cfg = SimConfig { tick: 1.0, delay_ticks: 7, delay_fraction: 1.0, switching: true, ..SimConfig::default() };
    let (m, _) = run_episode(&map, &sol, &cfg).unwrap();
    assert_eq!(m.halted_agents.len(), 8);
    assert!(m.ticks >= 7);
}

#[test]
fn zero_fraction_injects_nothing() {
    let map = small_warehouse();
    let (_, _, sol) = solve_random(&map, 6, 9, 1.0);
    let cfg = SimConfig { tick: 1.0, delay_ticks: 7, delay_fraction: 0.0, ..SimConfig::default() };
    let (m, log) = run_episode(&map, &sol, &cfg).unwrap();
    assert!(m.halted_agents.is_empty());
    assert!(log.events.iter().all(|e| e.transition != Transition::Halt));
}

#[test]
fn bad_config_is_rejected() {
    let map = crossing();
    let sol = crossing_solution();
    assert!(run_episode(&map, &sol, &SimConfig { tick: 0.0, ..SimConfig::default() }).is_err());
    assert!(run_episode(&map, &sol, &SimConfig { delay_fraction: 1.5, ..SimConfig::default() }).is_err());
}

#[test]
fn collision_audit_flags_shared_vertex() {
    let map = crossing();
    let sol = MapfSolution::from_lists(&[&[("C", 0.0)], &[("C", 0.0)]]);
    let g = build_adg(&sol, &map).unwrap();
    assert_eq!(audit_collisions(&EventLog { tick: 0.1, events: vec![] }, &g, &map).len(), 1);

    let single = MapfSolution::from_lists(&[&[("A", 0.0), ("B", 1.0), ("C", 2.2)]]);
    let g = build_adg(&single, &map).unwrap();
    let (_, log) = run_adg(g.clone(), &SimConfig::default()).unwrap();
    assert!(audit_collisions(&log, &g, &map).is_empty());
}

#[test]
fn collision_audit_flags_a_forged_overtake() {
    // Both agents start moving toward C at once although the plan orders them.
    let map = crossing();
    let sol = MapfSolution::from_lists(&[&[("B", 0.0), ("C", 1.2)], &[("D", 0.0), ("C", 1.1)]]);
    let g = build_adg(&sol, &map).unwrap();
    let ev = |agent, transition, clock| Event { tick: 0, agent, vertex: VertexRef::new(agent, 0), transition, clock };
    let log = EventLog {
        tick: 0.1,
        events: vec![
            ev(0, Transition::Start, 0.0),
            ev(1, Transition::Start, 0.0),
            ev(1, Transition::Complete, 1.1),
            ev(0, Transition::Complete, 1.2),
        ],
    };
    assert_eq!(audit_collisions(&log, &g, &map).len(), 1);
}

#[test]
fn event_log_round_trips_through_ndjson() {
    let (_, log) = run_episode(&crossing(), &crossing_solution(), &halted_first_agent(true, None)).unwrap();
    let text = log.to_ndjson();
    assert!(text.lines().all(|l| l.starts_with("{\"tick\":")));
    assert_eq!(EventLog::from_ndjson(&text, log.tick).unwrap(), log);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn episodes_are_safe_and_deterministic(
        seed in any::<u64>(),
        agents in 2usize..=14,
        k in 1u64..=25,
        h in prop::option::of(1usize..=3),
        switching in any::<bool>(),
    ) {
        let map = small_warehouse();
        let g = random_adg(&map, agents, seed, 1.0);
        let cfg = SimConfig { tick: 1.0, delay_ticks: k, seed, switching, horizon: h, audit: true, ..SimConfig::default() };
        let mut cyclic_ticks = 0;
        let (m, log, last) = run_adg_with(g.clone(), &cfg, |s| {
            if !s.adg.is_acyclic() {
                cyclic_ticks += 1;
            }
        })
        .unwrap();
        prop_assert_eq!(cyclic_ticks, 0);
        prop_assert!(last.is_acyclic());
        let report = m.audit.clone().unwrap();
        prop_assert!(report.failures.is_empty(), "{:?}", report.failures);
        if let Err(e) = check_adherence(&log, &last) {
            return Err(TestCaseError::fail(e));
        }
        prop_assert!(audit_collisions(&log, &g, &map).is_empty());
        prop_assert!((m.cumulative - m.completion.iter().sum::<f64>()).abs() <= 1e-9);

        let (m2, log2) = run_adg(g, &cfg).unwrap();
        prop_assert_eq!(log.to_ndjson(), log2.to_ndjson());
        prop_assert_eq!(m.completion, m2.completion);
    }
}
