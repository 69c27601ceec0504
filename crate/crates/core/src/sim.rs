//! Fixed-step execution of dependency-managed plans under injected halts,
//! with the optional per-tick switching optimizer in the loop.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adg::{is_acyclic_edges, Adg, Dependency, Status, VertexRef};
use crate::optimizer::{self, build_problem, evaluate_fixed, ProblemParams, DEFAULT_BIG_M, DEFAULT_EPSILON};
use crate::roadmap::Roadmap;
use crate::sadg::{self, all_pairs, group_pairs, materialize, switchable_set, DependencyGroup, DependencyPair, SwitchVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Step length in seconds.
    pub tick: f64,
    /// Halt length in ticks.
    pub delay_ticks: u64,
    pub delay_fraction: f64,
    /// Halt exactly these agents instead of a random subset.
    pub delay_agents: Option<Vec<usize>>,
    /// Tick at which halts are injected; `None` means tick `delay_ticks`.
    pub delay_onset: Option<u64>,
    /// Re-inject every this many ticks after the onset.
    pub delay_repeat_every: Option<u64>,
    /// Receding horizon in vertices; `None` is unbounded.
    pub horizon: Option<usize>,
    pub seed: u64,
    pub switching: bool,
    /// Only run the optimizer on ticks where some agent is halted.
    pub solve_only_when_halted: bool,
    pub epsilon: f64,
    pub big_m: f64,
    /// Tick budget; `None` derives one from the plans and the halts.
    pub max_ticks: Option<u64>,
    /// Collect per-tick optimizer checks in the metrics.
    pub audit: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tick: 0.1,
            delay_ticks: 0,
            delay_fraction: 0.2,
            delay_agents: None,
            delay_onset: None,
            delay_repeat_every: None,
            horizon: None,
            seed: 0,
            switching: false,
            solve_only_when_halted: false,
            epsilon: DEFAULT_EPSILON,
            big_m: DEFAULT_BIG_M,
            max_ticks: None,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    Start,
    Complete,
    Halt,
    Resume,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    pub agent: usize,
    pub vertex: VertexRef,
    pub transition: Transition,
    pub clock: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub tick: f64,
    pub events: Vec<Event>,
}

impl EventLog {
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            writeln!(out, "{}", serde_json::to_string(e).expect("event serializes")).unwrap();
        }
        out
    }

    pub fn from_ndjson(text: &str, tick: f64) -> Result<Self, serde_json::Error> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(EventLog { tick, events })
    }
}

/// Per-tick checks collected in audit mode.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub ticks_checked: u64,
    pub groups_checked: u64,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub completion: Vec<f64>,
    pub cumulative: f64,
    /// Optimizer step time of every tick on which it ran.
    pub solve_ms: Vec<f64>,
    pub peak_solve_ms: f64,
    pub median_solve_ms: f64,
    /// Largest number of switchable pairs seen in one tick.
    pub peak_switchable: usize,
    /// Number of ticks on which at least one group was flipped.
    pub switch_ticks: u64,
    pub ticks: u64,
    pub halted_agents: Vec<usize>,
    pub audit: Option<AuditReport>,
}

impl EpisodeMetrics {
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "completion": self.completion,
            "cumulative": self.cumulative,
            "ticks": self.ticks,
            "peak_solve_ms": self.peak_solve_ms,
            "median_solve_ms": self.median_solve_ms,
            "peak_switchable": self.peak_switchable,
            "switch_ticks": self.switch_ticks,
            "halted_agents": self.halted_agents,
        })
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("suspected deadlock: not finished after {ticks} ticks")]
    Deadlock { ticks: u64, log: Box<EventLog> },
    #[error("cumulative baseline completion time is zero")]
    ZeroBaseline,
}

/// Mutable execution state of one episode.
#[derive(Debug, Clone)]
pub struct SimState {
    pub adg: Adg,
    /// Index of each agent's current (first not completed) vertex.
    pub current: Vec<usize>,
    /// Motion time accumulated on the current vertex.
    pub elapsed: Vec<f64>,
    /// Remaining halt ticks per agent.
    pub halt: Vec<u64>,
    pub tick: u64,
    pub clock: f64,
}

impl SimState {
    pub fn new(adg: Adg) -> Self {
        let n = adg.agents();
        SimState { adg, current: vec![0; n], elapsed: vec![0.0; n], halt: vec![0; n], tick: 0, clock: 0.0 }
    }

    fn has_remaining(&self, agent: usize) -> bool {
        self.current[agent] < self.adg.chain_len(agent)
    }

    /// Fraction of the current in-progress vertex's motion already done.
    pub fn progress(&self, agent: usize) -> f64 {
        if !self.has_remaining(agent) {
            return 1.0;
        }
        let v = VertexRef::new(agent, self.current[agent]);
        if self.adg.status(v) != Status::InProgress {
            return 0.0;
        }
        let tau = self.adg.vertex(v).nominal_duration();
        if tau <= 0.0 {
            1.0
        } else {
            (self.elapsed[agent] / tau).min(1.0)
        }
    }
}

/// Halts `delay_agents`, or else `ceil(delay_fraction * N)` agents chosen
/// uniformly without replacement, for `delay_ticks` ticks. Returns the halted
/// agents, sorted.
pub fn inject_delays(state: &mut SimState, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = state.adg.agents();
    if cfg.delay_ticks == 0 {
        return Vec::new();
    }
    let mut chosen = match &cfg.delay_agents {
        Some(agents) => agents.iter().copied().filter(|&a| a < n).collect(),
        None => {
            let count = ((cfg.delay_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
            sample(rng, n, count.min(n)).into_vec()
        }
    };
    chosen.sort_unstable();
    chosen.dedup();
    for &a in &chosen {
        state.halt[a] = state.halt[a].max(cfg.delay_ticks);
    }
    chosen
}

/// Runs one episode to completion.
pub fn run_episode(map: &Roadmap, sol: &crate::mapf::MapfSolution, cfg: &SimConfig) -> Result<(EpisodeMetrics, EventLog), SimError> {
    let adg = crate::adg::build_adg(sol, map).map_err(|e| SimError::Config(e.to_string()))?;
    run_adg(adg, cfg)
}

/// Runs one episode on an already built graph.
pub fn run_adg(adg: Adg, cfg: &SimConfig) -> Result<(EpisodeMetrics, EventLog), SimError> {
    run_adg_with(adg, cfg, |_| {}).map(|(m, log, _)| (m, log))
}

/// Like [`run_adg`], calling `observe` on every tick after delay injection and
/// before the optimizer step. Also returns the final graph.
pub fn run_adg_with(
    adg: Adg,
    cfg: &SimConfig,
    mut observe: impl FnMut(&SimState),
) -> Result<(EpisodeMetrics, EventLog, Adg), SimError> {
    if !(cfg.tick.is_finite() && cfg.tick > 0.0) {
        return Err(SimError::Config(format!("tick must be positive, got {}", cfg.tick)));
    }
    if !(0.0..=1.0).contains(&cfg.delay_fraction) {
        return Err(SimError::Config(format!("delay fraction {} outside [0, 1]", cfg.delay_fraction)));
    }
    let n = adg.agents();
    let pairs = all_pairs(&adg);
    let makespan = (0..n).map(|a| adg.plan_end(a)).fold(0.0, f64::max);
    if cfg.switching && cfg.big_m < 10.0 * makespan {
        log::warn!("big-M {} is less than ten times the planned makespan {makespan}", cfg.big_m);
    }
    let onset = cfg.delay_onset.unwrap_or(cfg.delay_ticks);
    let total_motion: f64 = adg.vertex_refs().map(|v| adg.vertex(v).nominal_duration()).sum();
    let budget = cfg.max_ticks.unwrap_or_else(|| {
        let per_halt = cfg.delay_ticks * if cfg.delay_repeat_every.is_some() { 1000 } else { 1 };
        onset + per_halt + ((total_motion / cfg.tick).ceil() as u64 + adg.vertex_count() as u64) * 2 + 100
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SimState::new(adg);
    let mut log = EventLog { tick: cfg.tick, events: Vec::new() };
    let mut metrics = EpisodeMetrics { audit: cfg.audit.then(AuditReport::default), ..Default::default() };
    let mut halted_any: Vec<usize> = Vec::new();

    loop {
        if state.adg.all_completed() {
            break;
        }
        if state.tick >= budget {
            return Err(SimError::Deadlock { ticks: state.tick, log: Box::new(log) });
        }
        let tick = state.tick;
        state.clock = tick as f64 * cfg.tick;

        let inject = tick == onset
            || cfg
                .delay_repeat_every
                .is_some_and(|every| every > 0 && tick > onset && (tick - onset) % every == 0);
        if inject {
            for a in inject_delays(&mut state, cfg, &mut rng) {
                halted_any.push(a);
                if state.has_remaining(a) {
                    log.events.push(Event {
                        tick,
                        agent: a,
                        vertex: VertexRef::new(a, state.current[a]),
                        transition: Transition::Halt,
                        clock: state.clock,
                    });
                }
            }
        }

        observe(&state);

        if cfg.switching && (!cfg.solve_only_when_halted || state.halt.iter().any(|&h| h > 0)) {
            let started = Instant::now();
            let outcome = optimize(&state, &pairs, cfg, metrics.audit.as_mut());
            metrics.solve_ms.push(started.elapsed().as_secs_f64() * 1e3);
            metrics.peak_switchable = metrics.peak_switchable.max(outcome.switchable);
            if let Some(next) = outcome.flipped {
                state.adg = next;
                metrics.switch_ticks += 1;
            }
        }

        // Start phase, repeated while zero-length vertices complete instantly.
        loop {
            let mut changed = false;
            for a in 0..n {
                if state.halt[a] > 0 || !state.has_remaining(a) {
                    continue;
                }
                let v = VertexRef::new(a, state.current[a]);
                if state.adg.may_start(v) {
                    state.adg.transition(v, Status::InProgress, state.clock).expect("staged vertex starts");
                    state.elapsed[a] = 0.0;
                    log.events.push(Event { tick, agent: a, vertex: v, transition: Transition::Start, clock: state.clock });
                    changed = true;
                }
                if state.adg.status(v) == Status::InProgress && state.adg.vertex(v).nominal_duration() <= 1e-9 {
                    let clock = state.clock;
                    complete(&mut state, &mut log, v, tick, clock);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        // Advance.
        let end = (tick + 1) as f64 * cfg.tick;
        for a in 0..n {
            if state.halt[a] > 0 || !state.has_remaining(a) {
                continue;
            }
            let v = VertexRef::new(a, state.current[a]);
            if state.adg.status(v) != Status::InProgress {
                continue;
            }
            state.elapsed[a] += cfg.tick;
            if state.elapsed[a] >= state.adg.vertex(v).nominal_duration() - 1e-9 {
                complete(&mut state, &mut log, v, tick, end);
            }
        }

        for a in 0..n {
            if state.halt[a] > 0 {
                state.halt[a] -= 1;
                if state.halt[a] == 0 && state.has_remaining(a) {
                    log.events.push(Event {
                        tick,
                        agent: a,
                        vertex: VertexRef::new(a, state.current[a]),
                        transition: Transition::Resume,
                        clock: end,
                    });
                }
            }
        }
        state.tick += 1;
    }

    metrics.ticks = state.tick;
    metrics.completion = (0..n)
        .map(|a| match state.adg.chain_len(a) {
            0 => state.adg.plan_end(a),
            len => state.adg.actual_goal(VertexRef::new(a, len - 1)).expect("finished"),
        })
        .collect();
    metrics.cumulative = metrics.completion.iter().sum();
    if !metrics.solve_ms.is_empty() {
        let mut sorted = metrics.solve_ms.clone();
        sorted.sort_by(f64::total_cmp);
        metrics.peak_solve_ms = *sorted.last().unwrap();
        metrics.median_solve_ms = median_sorted(&sorted);
    }
    halted_any.sort_unstable();
    halted_any.dedup();
    metrics.halted_agents = halted_any;
    Ok((metrics, log, state.adg))
}

pub(crate) fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn complete(state: &mut SimState, log: &mut EventLog, v: VertexRef, tick: u64, clock: f64) {
    state.adg.transition(v, Status::Completed, clock).expect("in-progress vertex completes");
    log.events.push(Event { tick, agent: v.agent, vertex: v, transition: Transition::Complete, clock });
    state.current[v.agent] += 1;
    state.elapsed[v.agent] = 0.0;
}

struct StepOutcome {
    switchable: usize,
    flipped: Option<Adg>,
}

/// Problem parameters describing the current state.
pub fn problem_params(state: &SimState, cfg: &SimConfig) -> ProblemParams {
    let n = state.adg.agents();
    ProblemParams {
        t_now: state.clock,
        epsilon: cfg.epsilon,
        big_m: cfg.big_m,
        hold: state.halt.iter().map(|&h| h as f64 * cfg.tick).collect(),
        progress: (0..n).map(|a| state.progress(a)).collect(),
    }
}

/// One optimizer step: switchable set, grouping, solve, materialize.
fn optimize(state: &SimState, pairs: &[DependencyPair], cfg: &SimConfig, audit: Option<&mut AuditReport>) -> StepOutcome {
    let sw = switchable_set(&state.adg, pairs, cfg.horizon);
    if sw.pairs.is_empty() {
        return StepOutcome { switchable: 0, flipped: None };
    }
    let groups = group_pairs(&sw.pairs);
    let params = problem_params(state, cfg);
    let problem = build_problem(&state.adg, &sw.pairs, &groups, &params);
    let schedule = optimizer::solve(&problem);
    let flipped = (schedule.b.ones() > 0)
        .then(|| materialize(&state.adg, &sw.pairs, &groups, &schedule.b).expect("group count matches"));

    if let Some(report) = audit {
        report.ticks_checked += 1;
        let tick = state.tick;
        let mut fail = |msg: String| report.failures.push(format!("tick {tick}: {msg}"));
        match evaluate_fixed(&problem, &SwitchVector::zeros(groups.len())) {
            None => fail("all-zero assignment infeasible".into()),
            Some(zero) if schedule.objective > zero.objective => {
                fail(format!("objective {} above trivial {}", schedule.objective, zero.objective))
            }
            Some(_) => {}
        }
        let next = flipped.as_ref().unwrap_or(&state.adg);
        if !next.is_acyclic() {
            fail("materialized graph is cyclic".into());
        }
        for d in next.type2_edges() {
            if next.status(d.to) == Status::Completed && next.status(d.from) != Status::Completed {
                fail(format!("dependency {d} points into a completed vertex"));
            }
        }
        for group in &groups {
            if let Err(msg) = check_group(&state.adg, &sw.pairs, group) {
                fail(msg);
            }
            report.groups_checked += 1;
        }
    }
    StepOutcome { switchable: sw.pairs.len(), flipped }
}

/// Mixed orientations inside a group must be cyclic; a uniform orientation of
/// the group's own edges must leave the two agents' chains acyclic.
pub fn check_group(g: &Adg, switchable: &[DependencyPair], group: &DependencyGroup) -> Result<(), String> {
    let members = &group.members;
    let first = switchable[members[0]].forward;
    let agents: HashSet<usize> = [first.from.agent, first.to.agent].into();
    for flip in [false, true] {
        let own: Vec<Dependency> = members
            .iter()
            .map(|&m| if flip { switchable[m].reverse } else { switchable[m].forward })
            .collect();
        if own.iter().any(|d| !agents.contains(&d.from.agent) || !agents.contains(&d.to.agent)) {
            return Err(format!("group {members:?} spans more than two agents"));
        }
        if !is_acyclic_edges(g, own.iter()) {
            return Err(format!("group {members:?} uniform orientation {flip} is cyclic"));
        }
        if members.len() > 1 {
            let mut bits = vec![false; switchable.len()];
            for &m in members {
                bits[m] = flip;
            }
            for (pos, &m) in members.iter().enumerate() {
                let mut mixed = bits.clone();
                mixed[m] = !flip;
                let g2 = sadg::materialize_pairs(g, switchable, &mixed).map_err(|e| e.to_string())?;
                if g2.is_acyclic() {
                    return Err(format!("group {members:?} with member {pos} flipped alone is acyclic"));
                }
            }
        }
    }
    Ok(())
}

/// Relative reduction of the cumulative completion time, in percent.
pub fn improvement(baseline: &EpisodeMetrics, switching: &EpisodeMetrics) -> Result<f64, SimError> {
    improvement_from(baseline.cumulative, switching.cumulative)
}

pub fn improvement_from(baseline: f64, switching: f64) -> Result<f64, SimError> {
    if baseline == 0.0 {
        return Err(SimError::ZeroBaseline);
    }
    Ok((baseline - switching) / baseline * 100.0)
}

/// A pair of agents found too close together by [`audit_collisions`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionViolation {
    pub agents: (usize, usize),
    pub time: f64,
    pub distance: f64,
}

/// Replays the log geometrically: every agent moves linearly through its
/// vertex's motion tuples while not halted. Positions are sampled four times
/// per tick. Reports the first close approach (centre distance at most twice
/// the agent radius) of each agent pair whose occupied locations are not
/// mutually exclusive.
pub fn audit_collisions(log: &EventLog, adg: &Adg, map: &Roadmap) -> Vec<CollisionViolation> {
    let n = adg.agents();
    let dt = log.tick;
    // Per agent: (vertex index, start time, optional end) and halt intervals.
    let mut runs: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
    let mut halts: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    let mut t_end = 0.0f64;
    for e in &log.events {
        t_end = t_end.max((e.tick + 1) as f64 * dt).max(e.clock + dt);
        let a = e.agent;
        match e.transition {
            Transition::Start => runs[a].push((e.vertex.index, e.clock, f64::INFINITY)),
            Transition::Complete => {
                if let Some(r) = runs[a].iter_mut().rev().find(|r| r.0 == e.vertex.index) {
                    r.2 = e.clock;
                }
            }
            Transition::Halt => halts[a].push((e.clock, f64::INFINITY)),
            Transition::Resume => {
                if let Some(h) = halts[a].last_mut() {
                    h.1 = e.clock;
                }
            }
        }
    }

    let position = |a: usize, t: f64| -> ((f64, f64), Vec<usize>) {
        let chain = adg.chain(a);
        let active = runs[a].iter().rev().find(|r| r.1 <= t);
        let Some(&(k, start, end)) = active else {
            let loc = adg.start_location(a);
            return (map.position(loc), vec![loc]);
        };
        let v = &chain[k];
        if t >= end {
            return (map.position(v.goal_loc()), vec![v.goal_loc()]);
        }
        let halted: f64 = halts[a].iter().map(|&(s, e)| (e.min(t) - s.max(start)).max(0.0)).sum();
        let moving = (t - start - halted).max(0.0);
        let tau = v.nominal_duration();
        let frac = if tau <= 0.0 { 1.0 } else { (moving / tau).min(1.0) };
        let off = v.motion_offset();
        let target = v.tuples[off].t + frac * tau;
        let mut p = map.position(v.goal_loc());
        for m in off..v.tuples.len() - 1 {
            let (t0, t1) = (v.tuples[m].t, v.tuples[m + 1].t);
            if target <= t1 {
                let s = if t1 > t0 { (target - t0) / (t1 - t0) } else { 1.0 };
                let (x0, y0) = map.position(v.locs[m]);
                let (x1, y1) = map.position(v.locs[m + 1]);
                p = (x0 + s * (x1 - x0), y0 + s * (y1 - y0));
                break;
            }
        }
        let mut occupied = v.locs.clone();
        occupied.sort_unstable();
        occupied.dedup();
        (p, occupied)
    };

    let limit = 2.0 * map.agent_radius();
    let mut out = Vec::new();
    let mut reported: HashSet<(usize, usize)> = HashSet::new();
    let mut at_loc: Vec<Vec<usize>> = vec![Vec::new(); map.len()];
    for step in 0..=(t_end / dt * 4.0).ceil() as u64 {
        let t = step as f64 * dt / 4.0;
        let snap: Vec<_> = (0..n).map(|a| position(a, t)).collect();
        for list in &mut at_loc {
            list.clear();
        }
        for (a, (_, locs)) in snap.iter().enumerate() {
            for &l in locs {
                at_loc[l].push(a);
            }
        }
        let mut candidates: Vec<(usize, usize)> = Vec::new();
        for (a, (_, locs)) in snap.iter().enumerate() {
            for &l in locs {
                for &other_loc in std::iter::once(&l).chain(map.overlapping(l)) {
                    for &b in &at_loc[other_loc] {
                        if b > a {
                            candidates.push((a, b));
                        }
                    }
                }
            }
        }
        candidates.sort_unstable();
        candidates.dedup();
        for (a, b) in candidates {
            let (pa, pb) = (snap[a].0, snap[b].0);
            let d = (pa.0 - pb.0).hypot(pa.1 - pb.1);
            if d <= limit && reported.insert((a, b)) {
                out.push(CollisionViolation { agents: (a, b), time: t, distance: d });
            }
        }
    }
    out
}
