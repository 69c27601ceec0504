//! Plan-execution engine for multi-agent path finding solutions.
//!
//! A solved MAPF instance is turned into an action dependency graph whose
//! cross-agent dependencies come in forward/reverse pairs. During execution a
//! small mixed-integer scheduling problem picks an orientation for each pair
//! so that delayed agents do not hold up the rest of the fleet.

pub mod adg;
pub mod batch;
pub mod dag;
pub mod mapf;
pub mod optimizer;
pub mod roadmap;
pub mod sadg;
pub mod sim;

pub use adg::{build_adg, Adg, AdgError, AdgVertex, Dependency, DependencyKind, Status, VertexRef};
pub use mapf::{solve_mapf, solve_mapf_with, validate_solution, MapfError, MapfSolution, Plan, PlanTuple, SolverConfig};
pub use optimizer::{build_problem, evaluate_fixed, solve, Schedule, TemporalProblem};
pub use roadmap::{Roadmap, RoadmapError};
pub use sadg::{group_pairs, materialize, reverse_dependency, switchable_set, DependencyGroup, DependencyPair, GroupPattern, SwitchVector};
pub use sim::{audit_collisions, improvement, run_adg, run_adg_with, run_episode, EpisodeMetrics, EventLog, SimConfig};

use std::cmp::Ordering;

/// Reverse-ordered float wrapper so `BinaryHeap` pops the smallest value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct MinF64(pub f64);

impl Eq for MinF64 {}

impl PartialOrd for MinF64 {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MinF64 {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0)
    }
}
