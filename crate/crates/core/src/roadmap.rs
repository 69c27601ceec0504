//! Workspace graph: vertices with planar coordinates, weighted directed edges
//! and the disk footprint used for the spatial-exclusivity test.

use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::MinF64;

#[derive(Debug, Error)]
pub enum RoadmapError {
    #[error("cannot read roadmap file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("roadmap parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("empty roadmap")]
    Empty,
    #[error("duplicate vertex id \"{0}\"")]
    DuplicateVertex(String),
    #[error("edge references unknown vertex id \"{0}\"")]
    UnknownVertex(String),
    #[error("edge {from} -> {to} has non-positive traversal time {time}")]
    NonPositiveTime { from: String, to: String, time: f64 },
    #[error("edge {from} -> {to} listed twice with different traversal times")]
    ConflictingEdge { from: String, to: String },
    #[error("vertex \"{0}\" has a non-finite coordinate")]
    NonFiniteCoordinate(String),
    #[error("agent radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
}

/// A vertex as it appears in the roadmap file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vertex {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

/// An edge as it appears in the roadmap file (ids, not indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadmapFile {
    pub agent_radius: f64,
    pub directed: bool,
    pub vertices: Vec<Vertex>,
    pub edges: Vec<EdgeSpec>,
}

/// Directed, weighted workspace graph. Undirected input is expanded to two
/// directed edges at construction. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Roadmap {
    vertices: Vec<Vertex>,
    index: HashMap<String, usize>,
    out_edges: Vec<Vec<(usize, f64)>>,
    in_edges: Vec<Vec<(usize, f64)>>,
    // Distinct vertices whose footprints overlap (usually empty).
    overlapping: Vec<Vec<usize>>,
    directed: bool,
    agent_radius: f64,
    source: RoadmapFile,
}

impl Roadmap {
    pub fn from_file_spec(spec: RoadmapFile) -> Result<Self, RoadmapError> {
        if spec.vertices.is_empty() {
            return Err(RoadmapError::Empty);
        }
        if !(spec.agent_radius.is_finite() && spec.agent_radius > 0.0) {
            return Err(RoadmapError::InvalidRadius(spec.agent_radius));
        }
        let mut index = HashMap::with_capacity(spec.vertices.len());
        for (i, v) in spec.vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite()) {
                return Err(RoadmapError::NonFiniteCoordinate(v.id.clone()));
            }
            if index.insert(v.id.clone(), i).is_some() {
                return Err(RoadmapError::DuplicateVertex(v.id.clone()));
            }
        }

        let n = spec.vertices.len();
        let mut out_edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut add = |a: usize, b: usize, t: f64, e: &EdgeSpec| -> Result<(), RoadmapError> {
            match out_edges[a].iter().find(|(to, _)| *to == b) {
                Some(&(_, existing)) if existing != t => Err(RoadmapError::ConflictingEdge {
                    from: e.from.clone(),
                    to: e.to.clone(),
                }),
                Some(_) => Ok(()),
                None => {
                    out_edges[a].push((b, t));
                    Ok(())
                }
            }
        };
        for e in &spec.edges {
            let a = *index
                .get(&e.from)
                .ok_or_else(|| RoadmapError::UnknownVertex(e.from.clone()))?;
            let b = *index
                .get(&e.to)
                .ok_or_else(|| RoadmapError::UnknownVertex(e.to.clone()))?;
            if !(e.time.is_finite() && e.time > 0.0) {
                return Err(RoadmapError::NonPositiveTime {
                    from: e.from.clone(),
                    to: e.to.clone(),
                    time: e.time,
                });
            }
            add(a, b, e.time, e)?;
            if !spec.directed {
                add(b, a, e.time, e)?;
            }
        }
        for list in &mut out_edges {
            list.sort_by_key(|&(to, _)| to);
        }
        let mut in_edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (a, list) in out_edges.iter().enumerate() {
            for &(b, t) in list {
                in_edges[b].push((a, t));
            }
        }

        let limit = 2.0 * spec.agent_radius;
        let mut overlapping = vec![Vec::new(); n];
        for a in 0..n {
            for b in (a + 1)..n {
                let (va, vb) = (&spec.vertices[a], &spec.vertices[b]);
                if (va.x - vb.x).hypot(va.y - vb.y) <= limit {
                    overlapping[a].push(b);
                    overlapping[b].push(a);
                }
            }
        }

        Ok(Roadmap {
            vertices: spec.vertices.clone(),
            index,
            out_edges,
            in_edges,
            overlapping,
            directed: spec.directed,
            agent_radius: spec.agent_radius,
            source: spec,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, RoadmapError> {
        let spec: RoadmapFile = serde_json::from_str(text)?;
        Self::from_file_spec(spec)
    }

    /// Reads and validates a roadmap JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RoadmapError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| RoadmapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// The roadmap in its file format, as originally given.
    pub fn to_file_spec(&self) -> &RoadmapFile {
        &self.source
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.source).expect("roadmap serializes")
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn agent_radius(&self) -> f64 {
        self.agent_radius
    }

    pub fn vertex(&self, v: usize) -> &Vertex {
        &self.vertices[v]
    }

    pub fn vertex_id(&self, v: usize) -> &str {
        &self.vertices[v].id
    }

    pub fn vertex_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn position(&self, v: usize) -> (f64, f64) {
        let vx = &self.vertices[v];
        (vx.x, vx.y)
    }

    /// Outgoing `(target, traversal_time)` pairs, sorted by target.
    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.out_edges[v]
    }

    pub fn edge_time(&self, from: usize, to: usize) -> Option<f64> {
        self.out_edges[from]
            .iter()
            .find(|(t, _)| *t == to)
            .map(|&(_, w)| w)
    }

    pub fn edge_count(&self) -> usize {
        self.out_edges.iter().map(Vec::len).sum()
    }

    /// Other vertices whose footprint disks intersect the footprint at `v`.
    pub fn overlapping(&self, v: usize) -> &[usize] {
        &self.overlapping[v]
    }

    /// True iff agents at `a` and `b` cannot touch: the center distance
    /// exceeds twice the agent radius.
    pub fn exclusive(&self, a: usize, b: usize) -> bool {
        if a == b {
            return false;
        }
        let (pa, pb) = (self.position(a), self.position(b));
        (pa.0 - pb.0).hypot(pa.1 - pb.1) > 2.0 * self.agent_radius
    }

    pub fn spatially_exclusive(&self, a: &str, b: &str) -> Result<bool, RoadmapError> {
        let ia = self
            .vertex_index(a)
            .ok_or_else(|| RoadmapError::UnknownVertex(a.to_string()))?;
        let ib = self
            .vertex_index(b)
            .ok_or_else(|| RoadmapError::UnknownVertex(b.to_string()))?;
        Ok(self.exclusive(ia, ib))
    }

    /// Shortest traversal time from every vertex to `goal` (Dijkstra over
    /// reversed edges). Unreachable vertices get `f64::INFINITY`.
    pub fn times_to(&self, goal: usize) -> Vec<f64> {
        self.times_to_with(goal, |w| w)
    }

    /// Like [`Roadmap::times_to`] with each edge weight passed through `cost`.
    pub fn times_to_with(&self, goal: usize, cost: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.len()];
        let mut heap = BinaryHeap::new();
        dist[goal] = 0.0;
        heap.push((MinF64(0.0), goal));
        while let Some((MinF64(d), v)) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            for &(u, w) in &self.in_edges[v] {
                let nd = d + cost(w);
                if nd < dist[u] {
                    dist[u] = nd;
                    heap.push((MinF64(nd), u));
                }
            }
        }
        dist
    }
}

/// Builds a warehouse-style grid: shelf blocks two cells deep and five cells
/// wide, separated by one-cell aisles, with a free two-cell border.
///
/// Vertices sit on a unit lattice (`spacing` meters apart), edges connect
/// 4-neighbours with traversal time `edge_time`.
pub fn warehouse_grid(width: usize, height: usize, spacing: f64, edge_time: f64, agent_radius: f64) -> RoadmapFile {
    let is_shelf = |x: usize, y: usize| {
        let inner_x = x >= 2 && x + 2 < width;
        let inner_y = y >= 2 && y + 2 < height;
        inner_x && inner_y && y % 3 != 0 && x % 6 != 0
    };
    grid_file(width, height, spacing, edge_time, agent_radius, is_shelf)
}

/// An open grid with every cell free.
pub fn open_grid(width: usize, height: usize, spacing: f64, edge_time: f64, agent_radius: f64) -> RoadmapFile {
    grid_file(width, height, spacing, edge_time, agent_radius, |_, _| false)
}

pub fn grid_file(
    width: usize,
    height: usize,
    spacing: f64,
    edge_time: f64,
    agent_radius: f64,
    blocked: impl Fn(usize, usize) -> bool,
) -> RoadmapFile {
    let id = |x: usize, y: usize| format!("{x}_{y}");
    let mut vertices = Vec::new();
    let mut edges = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if blocked(x, y) {
                continue;
            }
            vertices.push(Vertex {
                id: id(x, y),
                x: x as f64 * spacing,
                y: y as f64 * spacing,
            });
            if x + 1 < width && !blocked(x + 1, y) {
                edges.push(EdgeSpec {
                    from: id(x, y),
                    to: id(x + 1, y),
                    time: edge_time,
                });
            }
            if y + 1 < height && !blocked(x, y + 1) {
                edges.push(EdgeSpec {
                    from: id(x, y),
                    to: id(x, y + 1),
                    time: edge_time,
                });
            }
        }
    }
    RoadmapFile {
        agent_radius,
        directed: false,
        vertices,
        edges,
    }
}
