//! Forward/reverse dependency pairs, the switchable subset under a receding
//! horizon, grouping into jointly switched patterns, and materialization of a
//! concrete graph from a switch vector.

use std::collections::{BTreeMap, HashSet};
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adg::{Adg, Dependency, DependencyKind, Status, VertexRef};

#[derive(Debug, Error, PartialEq)]
pub enum SadgError {
    #[error("dependency {0} is not a Type 2 dependency")]
    NotType2(Dependency),
    #[error("switch vector has length {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("neither orientation of pair {0} is active")]
    Inactive(usize),
}

/// A dependency and its reverse: `(v_i^k -> v_j^l)` and `(v_j^{l+1} -> v_i^{k-1})`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DependencyPair {
    pub forward: Dependency,
    pub reverse: Dependency,
    /// Position in the list of all pairs of the original graph.
    pub index: usize,
}

impl DependencyPair {
    /// The four endpoint vertices.
    pub fn endpoints(&self) -> [VertexRef; 4] {
        [self.forward.from, self.forward.to, self.reverse.from, self.reverse.to]
    }

    pub fn flipped(&self) -> DependencyPair {
        DependencyPair { forward: self.reverse, reverse: self.forward, index: self.index }
    }
}

/// Reverse of a Type 2 dependency, or `None` when one of the two extra
/// vertices does not exist.
pub fn reverse_dependency(g: &Adg, d: &Dependency) -> Result<Option<DependencyPair>, SadgError> {
    if d.kind != DependencyKind::Type2 || d.from.agent == d.to.agent {
        return Err(SadgError::NotType2(*d));
    }
    let (i, k) = (d.from.agent, d.from.index);
    let (j, l) = (d.to.agent, d.to.index);
    if k == 0 || l + 1 >= g.chain_len(j) {
        return Ok(None);
    }
    let reverse = Dependency::type2(VertexRef::new(j, l + 1), VertexRef::new(i, k - 1));
    Ok(Some(DependencyPair { forward: *d, reverse, index: 0 }))
}

/// All pairs of a freshly built graph, indexed in edge order.
pub fn all_pairs(g: &Adg) -> Vec<DependencyPair> {
    let mut out = Vec::new();
    for d in g.type2_edges() {
        if let Some(mut p) = reverse_dependency(g, d).expect("type2 edges only") {
            p.index = out.len();
            out.push(p);
        }
    }
    out
}

/// Boolean selection, one entry per group: `false` keeps the active
/// orientation, `true` flips to the other one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SwitchVector(pub Vec<bool>);

impl SwitchVector {
    pub fn zeros(n: usize) -> Self {
        SwitchVector(vec![false; n])
    }

    pub fn ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Bits from the low end of `mask`.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        SwitchVector((0..n).map(|m| mask >> m & 1 == 1).collect())
    }
}

impl Deref for SwitchVector {
    type Target = [bool];
    fn deref(&self) -> &[bool] {
        &self.0
    }
}

/// Result of [`switchable_set`].
#[derive(Debug, Clone, Default)]
pub struct Switchable {
    /// Pairs oriented so that `forward` is the currently active edge.
    pub pairs: Vec<DependencyPair>,
    /// Every other active Type 2 dependency.
    pub fixed: Vec<Dependency>,
}

/// Splits the active cross-agent dependencies of `g` into switchable pairs and
/// fixed edges.
///
/// A pair is switchable when its four endpoints are staged and at least one
/// endpoint lies within the `horizon` vertices that follow its agent's last
/// completed vertex (`None` = unbounded).
pub fn switchable_set(g: &Adg, pairs: &[DependencyPair], horizon: Option<usize>) -> Switchable {
    let active: HashSet<Dependency> = g.type2_edges().iter().copied().collect();
    let next: Vec<usize> = (0..g.agents()).map(|a| g.last_completed(a).map_or(0, |c| c + 1)).collect();
    let in_window = |v: VertexRef| match horizon {
        None => true,
        Some(h) => v.index < next[v.agent] + h,
    };
    let mut switchable = Vec::new();
    let mut taken: HashSet<Dependency> = HashSet::new();
    for p in pairs {
        let oriented = if active.contains(&p.forward) {
            *p
        } else if active.contains(&p.reverse) {
            p.flipped()
        } else {
            panic!("{}", SadgError::Inactive(p.index));
        };
        let ends = oriented.endpoints();
        if ends.iter().all(|&v| g.status(v) == Status::Staged) && ends.iter().any(|&v| in_window(v)) {
            taken.insert(oriented.forward);
            switchable.push(oriented);
        }
    }
    let fixed = g.type2_edges().iter().filter(|d| !taken.contains(d)).copied().collect();
    Switchable { pairs: switchable, fixed }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupPattern {
    Singleton,
    SameDirection,
    OppositeDirection,
}

/// Pairs switched together by a single boolean.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyGroup {
    /// Positions in the switchable pair list.
    pub members: Vec<usize>,
    pub pattern: GroupPattern,
}

/// Partitions switchable pairs into groups. Between one ordered agent pair,
/// forwards `(x, y), (x+1, y+1), ...` form a same-direction group and
/// `(x, y), (x+1, y-1), ...` an opposite-direction group; everything else is a
/// singleton. Groups are returned ordered by their first member.
pub fn group_pairs(switchable: &[DependencyPair]) -> Vec<DependencyGroup> {
    let mut buckets: BTreeMap<(usize, usize), Vec<(usize, usize, usize)>> = BTreeMap::new();
    for (m, p) in switchable.iter().enumerate() {
        let f = p.forward;
        buckets.entry((f.from.agent, f.to.agent)).or_default().push((f.from.index, f.to.index, m));
    }
    let mut groups = Vec::new();
    let mut used = vec![false; switchable.len()];
    for list in buckets.values_mut() {
        list.sort_unstable();
        let pos: BTreeMap<(usize, usize), usize> = list.iter().map(|&(x, y, m)| ((x, y), m)).collect();
        for (pattern, dy) in [(GroupPattern::SameDirection, 1isize), (GroupPattern::OppositeDirection, -1)] {
            for &(x, y, m) in list.iter() {
                if used[m] {
                    continue;
                }
                // Only start chains at their head.
                let prev = (y as isize - dy).try_into().ok().and_then(|py: usize| {
                    x.checked_sub(1).and_then(|px| pos.get(&(px, py)))
                });
                if prev.is_some_and(|&pm| !used[pm]) {
                    continue;
                }
                let mut members = vec![m];
                let (mut cx, mut cy) = (x, y as isize);
                loop {
                    cx += 1;
                    cy += dy;
                    match (cy >= 0).then(|| pos.get(&(cx, cy as usize))).flatten() {
                        Some(&nm) if !used[nm] => members.push(nm),
                        _ => break,
                    }
                }
                if members.len() > 1 {
                    for &nm in &members {
                        used[nm] = true;
                    }
                    groups.push(DependencyGroup { members, pattern });
                }
            }
        }
    }
    for (m, &u) in used.iter().enumerate() {
        if !u {
            groups.push(DependencyGroup { members: vec![m], pattern: GroupPattern::Singleton });
        }
    }
    groups.sort_by_key(|g| g.members.iter().copied().min());
    groups
}

/// Applies `b` to the active graph: a `true` group swaps every member's active
/// edge for its reverse.
pub fn materialize(
    g: &Adg,
    switchable: &[DependencyPair],
    groups: &[DependencyGroup],
    b: &SwitchVector,
) -> Result<Adg, SadgError> {
    if b.len() != groups.len() {
        return Err(SadgError::LengthMismatch { got: b.len(), expected: groups.len() });
    }
    let mut bits = vec![false; switchable.len()];
    for (group, &flip) in groups.iter().zip(b.iter()) {
        for &m in &group.members {
            bits[m] = flip;
        }
    }
    materialize_pairs(g, switchable, &bits)
}

/// Per-pair selection without the grouping constraint. Lets tests build
/// orientations that grouping makes unrepresentable.
#[doc(hidden)]
pub fn materialize_pairs(g: &Adg, switchable: &[DependencyPair], bits: &[bool]) -> Result<Adg, SadgError> {
    if bits.len() != switchable.len() {
        return Err(SadgError::LengthMismatch { got: bits.len(), expected: switchable.len() });
    }
    if !bits.iter().any(|&b| b) {
        return Ok(g.clone());
    }
    let remove: HashSet<Dependency> = switchable
        .iter()
        .zip(bits)
        .filter(|(_, &b)| b)
        .map(|(p, _)| p.forward)
        .collect();
    let mut edges: Vec<Dependency> = g.type2_edges().iter().filter(|d| !remove.contains(d)).copied().collect();
    edges.extend(switchable.iter().zip(bits).filter(|(_, &b)| b).map(|(p, _)| p.reverse));
    Ok(g.with_type2(edges))
}
