//! Graph-level optimizations: merging small parallel vertices, splitting
//! vertices and the visit order used by the mapper.

use std::collections::{BTreeMap, HashMap};

use super::{Edge, Vertex, VertexStats, Workload, WorkloadError};
use crate::hwmodel::{CompUnit, ConcreteHardwareModel, Metric, Unit};

/// Ten times the peak per-cycle compute throughput of the machine, in ops.
pub fn default_hvth(c: &ConcreteHardwareModel) -> u64 {
    let peak: f64 = CompUnit::ALL
        .iter()
        .filter_map(|u| c.get(Unit::Comp(*u), Metric::Throughput))
        .sum();
    (10.0 * peak).round().max(0.0) as u64
}

/// Undirected bridges, as indices into `w.edges()`.
fn bridges(w: &Workload) -> Vec<usize> {
    let n = w.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, e) in w.edges().iter().enumerate() {
        adj[e.src].push((e.dst, i));
        adj[e.dst].push((e.src, i));
    }
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut time = 0;
    let mut out = Vec::new();
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (vertex, edge used to enter it, next adjacency slot)
        let mut stack = vec![(root, usize::MAX, 0usize)];
        disc[root] = time;
        low[root] = time;
        time += 1;
        while let Some(&mut (v, via, ref mut slot)) = stack.last_mut() {
            if let Some(&(u, eid)) = adj[v].get(*slot) {
                *slot += 1;
                if eid == via {
                    continue;
                }
                if disc[u] == usize::MAX {
                    disc[u] = time;
                    low[u] = time;
                    time += 1;
                    stack.push((u, eid, 0));
                } else {
                    low[v] = low[v].min(disc[u]);
                }
            } else {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[v]);
                    if low[v] > disc[parent] {
                        out.push(via);
                    }
                }
            }
        }
    }
    out.sort_unstable();
    out
}

fn reach(n: usize, start: usize, next: &[Vec<usize>]) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &u in &next[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen
}

/// For each vertex, the set of sequential cuts it lies downstream of.
///
/// A bridge `u -> v` is a sequential cut when, after removing it, the side
/// holding `u` contains only `u` and its ancestors and the side holding `v`
/// only `v` and its descendants: the graph runs strictly through that edge.
fn partition_signatures(w: &Workload) -> Vec<Vec<usize>> {
    let n = w.len();
    let mut succ = vec![Vec::new(); n];
    let mut pred = vec![Vec::new(); n];
    for e in w.edges() {
        succ[e.src].push(e.dst);
        pred[e.dst].push(e.src);
    }
    let mut sig = vec![Vec::new(); n];
    for b in bridges(w) {
        let Edge { src: u, dst: v, .. } = w.edges()[b];
        let mut undirected: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, e) in w.edges().iter().enumerate() {
            if i != b {
                undirected[e.src].push(e.dst);
                undirected[e.dst].push(e.src);
            }
        }
        let side_u = reach(n, u, &undirected);
        let side_v = reach(n, v, &undirected);
        let anc = reach(n, u, &pred);
        let desc = reach(n, v, &succ);
        let sequential = (0..n).all(|x| (!side_u[x] || anc[x]) && (!side_v[x] || desc[x]));
        if sequential {
            for x in (0..n).filter(|&x| side_v[x]) {
                sig[x].push(b);
            }
        }
    }
    sig
}

/// Longest-path depth of every vertex from the sources.
fn levels(w: &Workload) -> Vec<usize> {
    let order = w.topological_order().expect("workloads are acyclic");
    let mut succ = vec![Vec::new(); w.len()];
    for e in w.edges() {
        succ[e.src].push(e.dst);
    }
    let mut level = vec![0; w.len()];
    for v in order {
        for &u in &succ[v] {
            level[u] = level[u].max(level[v] + 1);
        }
    }
    level
}

/// Merge groups of small parallel vertices.
///
/// The graph is cut into sequential partitions at bridge edges. Inside a
/// partition, vertices sharing a longest-path depth form an antichain; these
/// are scanned in file order and greedily packed into groups whose individual
/// and summed compute stay below `hvth`. Each group of two or more becomes one
/// vertex (`a+b`, kind `merged`) carrying the summed statistics; parallel edges
/// created by the contraction have their bytes summed.
pub fn compute_merge(w: &Workload, hvth: u64) -> Workload {
    let n = w.len();
    if n < 2 || hvth == 0 {
        return w.clone();
    }
    let sig = partition_signatures(w);
    let level = levels(w);
    let mut buckets: BTreeMap<(&[usize], usize), Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        if w.vertices()[i].stats.compute_total() < hvth {
            buckets.entry((&sig[i], level[i])).or_default().push(i);
        }
    }
    // group[i] = representative (first member) of i's merge group
    let mut group: Vec<usize> = (0..n).collect();
    let mut merged_any = false;
    for members in buckets.values() {
        let mut current: Vec<usize> = Vec::new();
        let mut sum = 0u64;
        let mut close = |current: &mut Vec<usize>| {
            if current.len() >= 2 {
                for &m in current.iter() {
                    group[m] = current[0];
                }
                merged_any = true;
            }
            current.clear();
        };
        for &i in members {
            let c = w.vertices()[i].stats.compute_total();
            if !current.is_empty() && sum + c >= hvth {
                close(&mut current);
                sum = 0;
            }
            current.push(i);
            sum += c;
        }
        close(&mut current);
    }
    if !merged_any {
        return w.clone();
    }

    let mut new_index: HashMap<usize, usize> = HashMap::new();
    let mut ids: Vec<Vec<&str>> = Vec::new();
    let mut stats: Vec<VertexStats> = Vec::new();
    let mut firsts: Vec<usize> = Vec::new();
    let mut slot = vec![0; n];
    for i in 0..n {
        let rep = group[i];
        let k = *new_index.entry(rep).or_insert_with(|| {
            ids.push(Vec::new());
            stats.push(VertexStats::default());
            firsts.push(i);
            ids.len() - 1
        });
        ids[k].push(&w.vertices()[i].id);
        stats[k].accumulate(&w.vertices()[i].stats);
        slot[i] = k;
    }
    let vertices: Vec<Vertex> = (0..ids.len())
        .map(|k| {
            if ids[k].len() == 1 {
                w.vertices()[firsts[k]].clone()
            } else {
                Vertex {
                    id: ids[k].join("+"),
                    kind: "merged".into(),
                    stats: stats[k].clone(),
                    loops: None,
                }
            }
        })
        .collect();
    let mut edge_pos: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges: Vec<Edge> = Vec::new();
    for e in w.edges() {
        let (s, d) = (slot[e.src], slot[e.dst]);
        debug_assert_ne!(s, d, "merged vertices are never adjacent");
        match edge_pos.get(&(s, d)) {
            Some(&p) => edges[p].bytes += e.bytes,
            None => {
                edge_pos.insert((s, d), edges.len());
                edges.push(Edge {
                    src: s,
                    dst: d,
                    bytes: e.bytes,
                });
            }
        }
    }
    Workload::new(vertices, edges).expect("contracting antichains keeps the graph acyclic")
}

/// Halve every statistic of `v`; the first half keeps the extra unit of odd totals.
pub fn split_vertex(v: &Vertex) -> Result<(Vertex, Vertex), WorkloadError> {
    if v.stats.max_stat() <= 1 {
        return Err(WorkloadError::Unsplittable(v.id.clone()));
    }
    let (a, b) = v.stats.halves();
    let half = |suffix: &str, stats| Vertex {
        id: format!("{}/{suffix}", v.id),
        kind: v.kind.clone(),
        stats,
        loops: None,
    };
    Ok((half("1", a), half("2", b)))
}

/// Replace vertex `idx` with its two halves. The first half takes the
/// incoming edges, the second the outgoing ones, joined by an edge.
pub fn split_vertex_in(w: &Workload, idx: usize) -> Result<Workload, WorkloadError> {
    let (a, b) = split_vertex(&w.vertices()[idx])?;
    let mut vertices = w.vertices().to_vec();
    vertices[idx] = a;
    vertices.insert(idx + 1, b);
    let shift = |i: usize| if i > idx { i + 1 } else { i };
    let mut edges: Vec<Edge> = w
        .edges()
        .iter()
        .map(|e| Edge {
            src: if e.src == idx { idx + 1 } else { shift(e.src) },
            dst: shift(e.dst),
            bytes: e.bytes,
        })
        .collect();
    edges.push(Edge {
        src: idx,
        dst: idx + 1,
        bytes: 0,
    });
    Workload::new(vertices, edges)
}

/// Merge small parallel vertices, then list the result in topological order
/// (ties by ascending id).
pub fn workload_optimize(w: &Workload, hvth: u64) -> Workload {
    let merged = compute_merge(w, hvth);
    let order = merged.topological_order().expect("workloads are acyclic");
    merged.reordered(&order)
}
