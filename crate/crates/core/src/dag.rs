//! Small directed-graph helpers over dense integer node ids.

/// Kahn topological order of `n` nodes, or `None` if a cycle exists.
pub fn topo_order(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut indeg = vec![0u32; n];
    let mut head = vec![usize::MAX; n];
    let mut next = vec![usize::MAX; edges.len()];
    for (e, &(a, b)) in edges.iter().enumerate() {
        indeg[b] += 1;
        next[e] = head[a];
        head[a] = e;
    }
    let mut order: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut i = 0;
    while i < order.len() {
        let v = order[i];
        i += 1;
        let mut e = head[v];
        while e != usize::MAX {
            let b = edges[e].1;
            indeg[b] -= 1;
            if indeg[b] == 0 {
                order.push(b);
            }
            e = next[e];
        }
    }
    (order.len() == n).then_some(order)
}

pub fn is_acyclic(n: usize, edges: &[(usize, usize)]) -> bool {
    topo_order(n, edges).is_some()
}
