//! Graphs, partitioned graphs, cut-rank, minimal representatives, twins,
//! edge-set flips, and the bipartite reduction B(G).
//!
//! Vertices are dense integers 0..n−1; the total order on V(G) is numeric
//! order. Adjacency is kept as one bit-row per vertex, which makes cut-rank
//! a direct matter of slicing rows and running GF(2) elimination.

use crate::gf2::{self, BitVec};
use std::collections::BTreeMap;

/// A simple undirected graph.
#[derive(Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<BitVec>,
}

impl std::fmt::Debug for Graph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Graph(n={}, edges={:?})", self.n, self.edges())
    }
}

impl Graph {
    #[must_use]
    pub fn new(n: usize) -> Self {
        Graph {
            n,
            adj: vec![BitVec::zeros(n); n],
        }
    }

    #[must_use]
    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut g = Graph::new(n);
        for &(u, v) in edges {
            g.add_edge(u, v);
        }
        g
    }

    #[must_use]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn add_edge(&mut self, u: u32, v: u32) {
        assert!(u != v, "no self-loops");
        assert!((u as usize) < self.n && (v as usize) < self.n);
        self.adj[u as usize].set(v as usize, true);
        self.adj[v as usize].set(u as usize, true);
    }

    pub fn remove_edge(&mut self, u: u32, v: u32) {
        self.adj[u as usize].set(v as usize, false);
        self.adj[v as usize].set(u as usize, false);
    }

    /// Flips a single adjacency.
    pub fn flip_edge(&mut self, u: u32, v: u32) {
        assert!(u != v, "no self-loops");
        let cur = self.has_edge(u, v);
        self.adj[u as usize].set(v as usize, !cur);
        self.adj[v as usize].set(u as usize, !cur);
    }

    #[must_use]
    pub fn has_edge(&self, u: u32, v: u32) -> bool {
        self.adj[u as usize].get(v as usize)
    }

    /// Neighbor row of `v` as a bit-vector over V(G).
    #[must_use]
    pub fn nbr_row(&self, v: u32) -> &BitVec {
        &self.adj[v as usize]
    }

    /// Sorted neighbor list.
    #[must_use]
    pub fn neighbors(&self, v: u32) -> Vec<u32> {
        self.adj[v as usize].iter_ones().map(|i| i as u32).collect()
    }

    #[must_use]
    pub fn degree(&self, v: u32) -> usize {
        self.adj[v as usize].count_ones()
    }

    #[must_use]
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for u in 0..self.n as u32 {
            for v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    #[must_use]
    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BitVec::count_ones).sum::<usize>() / 2
    }

    /// Parses the CLI text format: first line `n m`, then m lines `u v`.
    pub fn parse(text: &str) -> Result<Graph, String> {
        let mut tokens = text.split_whitespace();
        let n: usize = tokens
            .next()
            .ok_or("missing vertex count")?
            .parse()
            .map_err(|e| format!("bad vertex count: {e}"))?;
        let m: usize = tokens
            .next()
            .ok_or("missing edge count")?
            .parse()
            .map_err(|e| format!("bad edge count: {e}"))?;
        let mut g = Graph::new(n);
        for i in 0..m {
            let u: u32 = tokens
                .next()
                .ok_or_else(|| format!("edge {i}: missing endpoint"))?
                .parse()
                .map_err(|e| format!("edge {i}: {e}"))?;
            let v: u32 = tokens
                .next()
                .ok_or_else(|| format!("edge {i}: missing endpoint"))?
                .parse()
                .map_err(|e| format!("edge {i}: {e}"))?;
            if u == v {
                return Err(format!("edge {i}: self-loop {u}"));
            }
            if u as usize >= n || v as usize >= n {
                return Err(format!("edge {i}: endpoint out of range"));
            }
            g.add_edge(u, v);
        }
        if tokens.next().is_some() {
            return Err("trailing tokens after edge list".into());
        }
        Ok(g)
    }

    #[must_use]
    pub fn to_text(&self) -> String {
        let edges = self.edges();
        let mut s = format!("{} {}\n", self.n, edges.len());
        for (u, v) in edges {
            s.push_str(&format!("{u} {v}\n"));
        }
        s
    }

    /// Induced subgraph on `verts` (sorted, deduped internally), together
    /// with the map from new IDs back to the original ones.
    #[must_use]
    pub fn induced(&self, verts: &[u32]) -> (Graph, Vec<u32>) {
        let mut vs: Vec<u32> = verts.to_vec();
        vs.sort_unstable();
        vs.dedup();
        let index: BTreeMap<u32, u32> = vs.iter().enumerate().map(|(i, &v)| (v, i as u32)).collect();
        let mut g = Graph::new(vs.len());
        for (i, &u) in vs.iter().enumerate() {
            for w in self.neighbors(u) {
                if let Some(&j) = index.get(&w) {
                    if (i as u32) < j {
                        g.add_edge(i as u32, j);
                    }
                }
            }
        }
        (g, vs)
    }
}

/// Converts a vertex list into a bit-set over 0..n−1.
#[must_use]
pub fn vset(n: usize, verts: &[u32]) -> BitVec {
    let mut s = BitVec::zeros(n);
    for &v in verts {
        assert!((v as usize) < n);
        s.set(v as usize, true);
    }
    s
}

/// GF(2) rank of the bipartite adjacency matrix between `a` and V∖a.
#[must_use]
pub fn cutrk(g: &Graph, a: &BitVec) -> usize {
    assert_eq!(a.len(), g.n());
    let mut cols: Vec<usize> = Vec::new();
    for v in 0..g.n() {
        if !a.get(v) {
            cols.push(v);
        }
    }
    if cols.is_empty() || cols.len() == g.n() {
        return 0;
    }
    let rows: Vec<BitVec> = a
        .iter_ones()
        .map(|v| {
            let mut row = BitVec::zeros(cols.len());
            let nbr = g.nbr_row(v as u32);
            for (j, &c) in cols.iter().enumerate() {
                if nbr.get(c) {
                    row.set(j, true);
                }
            }
            row
        })
        .collect();
    gf2::rank_of_rows(rows.iter())
}

/// Convenience wrapper taking a vertex slice.
#[must_use]
pub fn cutrk_slice(g: &Graph, a: &[u32]) -> usize {
    cutrk(g, &vset(g.n(), a))
}

/// Groups the vertices of `a` by their outside-neighborhood N(v)∖a.
/// Classes are returned keyed by lowest member, members sorted.
#[must_use]
pub fn neighborhood_classes(g: &Graph, a: &BitVec) -> Vec<Vec<u32>> {
    let mut by_nbr: BTreeMap<Vec<usize>, Vec<u32>> = BTreeMap::new();
    for v in a.iter_ones() {
        let outside: Vec<usize> = g
            .nbr_row(v as u32)
            .iter_ones()
            .filter(|&w| !a.get(w))
            .collect();
        by_nbr.entry(outside).or_default().push(v as u32);
    }
    let mut classes: Vec<Vec<u32>> = by_nbr.into_values().collect();
    classes.sort_by_key(|c| c[0]);
    classes
}

/// The minimal representative of `a`: the lowest-ID vertex of each
/// outside-neighborhood class, in increasing order.
#[must_use]
pub fn minimal_representative(g: &Graph, a: &BitVec) -> Vec<u32> {
    neighborhood_classes(g, a).iter().map(|c| c[0]).collect()
}

#[must_use]
pub fn minimal_representative_slice(g: &Graph, a: &[u32]) -> Vec<u32> {
    minimal_representative(g, &vset(g.n(), a))
}

/// An unordered set of vertex pairs to flip.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FlipSet {
    pairs: Vec<(u32, u32)>,
}

impl FlipSet {
    pub fn new(pairs: &[(u32, u32)]) -> Result<FlipSet, String> {
        let mut norm: Vec<(u32, u32)> = Vec::with_capacity(pairs.len());
        for &(u, v) in pairs {
            if u == v {
                return Err(format!("flip pair with equal endpoints: ({u},{v})"));
            }
            norm.push((u.min(v), u.max(v)));
        }
        norm.sort_unstable();
        norm.dedup();
        if norm.len() != pairs.len() {
            return Err("duplicate flip pairs".into());
        }
        Ok(FlipSet { pairs: norm })
    }

    #[must_use]
    pub fn pairs(&self) -> &[(u32, u32)] {
        &self.pairs
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Returns G △ F.
#[must_use]
pub fn apply_flips(g: &Graph, f: &FlipSet) -> Graph {
    let mut out = g.clone();
    for &(u, v) in f.pairs() {
        out.flip_edge(u, v);
    }
    out
}

/// The bipartite reduction B(G) on 4n vertices. Vertex (v,i) for i ∈ [4]
/// maps to ID 4v + (i−1). Edges: (v,i)–(v,i+1) for i ∈ [3], and
/// (u,1)–(v,4) for every uv ∈ E(G).
#[must_use]
pub fn bipartite_reduction(g: &Graph) -> Graph {
    let n = g.n();
    let mut b = Graph::new(4 * n);
    let id = |v: u32, i: u32| 4 * v + (i - 1);
    for v in 0..n as u32 {
        for i in 1..=3 {
            b.add_edge(id(v, i), id(v, i + 1));
        }
    }
    for (u, v) in g.edges() {
        b.add_edge(id(u, 1), id(v, 4));
        b.add_edge(id(v, 1), id(u, 4));
    }
    b
}

/// Sides of B(G): (v,1),(v,3) on one side, (v,2),(v,4) on the other.
#[must_use]
pub fn bipartite_reduction_sides(n: usize) -> (Vec<u32>, Vec<u32>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for v in 0..n as u32 {
        a.push(4 * v);
        b.push(4 * v + 1);
        a.push(4 * v + 2);
        b.push(4 * v + 3);
    }
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Twin-equivalence classes of `x`: maximal groups with identical full
/// (open) neighborhoods N(u) = N(v).
#[must_use]
pub fn twin_classes(g: &Graph, x: &[u32]) -> Vec<Vec<u32>> {
    let mut by_nbr: BTreeMap<Vec<u32>, Vec<u32>> = BTreeMap::new();
    for &v in x {
        by_nbr.entry(g.neighbors(v)).or_default().push(v);
    }
    let mut classes: Vec<Vec<u32>> = by_nbr.into_values().collect();
    for c in &mut classes {
        c.sort_unstable();
    }
    classes.sort_by_key(|c| c[0]);
    classes
}

/// Whether `g` is distance-hereditary, i.e. reducible to nothing by
/// repeatedly deleting vertices of degree ≤ 1 and twins (u, v with
/// N(u)∖{v} = N(v)∖{u}). Equivalent to rankwidth ≤ 1.
#[must_use]
pub fn is_distance_hereditary(g: &Graph) -> bool {
    let n = g.n();
    let mut alive = BitVec::zeros(n);
    for v in 0..n {
        alive.set(v, true);
    }
    let mut count = n;
    let nbrs = |alive: &BitVec, v: usize, skip: usize| -> Vec<usize> {
        g.nbr_row(v as u32)
            .iter_ones()
            .filter(|&w| alive.get(w) && w != skip)
            .collect()
    };
    loop {
        let mut removed = false;
        for v in 0..n {
            if alive.get(v) && nbrs(&alive, v, usize::MAX).len() <= 1 {
                alive.set(v, false);
                count -= 1;
                removed = true;
            }
        }
        if removed {
            continue;
        }
        'twin: for u in 0..n {
            if !alive.get(u) {
                continue;
            }
            for v in u + 1..n {
                if alive.get(v) && nbrs(&alive, u, v) == nbrs(&alive, v, u) {
                    alive.set(u, false);
                    count -= 1;
                    removed = true;
                    break 'twin;
                }
            }
        }
        if !removed {
            return count == 0;
        }
    }
}

/// A graph together with a partition of its vertex set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionedGraph {
    pub graph: Graph,
    pub parts: Vec<Vec<u32>>,
}

impl PartitionedGraph {
    /// Validates that the parts are nonempty, disjoint, and cover V exactly.
    pub fn new(graph: Graph, mut parts: Vec<Vec<u32>>) -> Result<PartitionedGraph, String> {
        let mut seen = BitVec::zeros(graph.n());
        for p in &mut parts {
            p.sort_unstable();
            if p.is_empty() {
                return Err("empty part".into());
            }
            for &v in p.iter() {
                if v as usize >= graph.n() {
                    return Err(format!("part vertex {v} out of range"));
                }
                if seen.get(v as usize) {
                    return Err(format!("vertex {v} in two parts"));
                }
                seen.set(v as usize, true);
            }
        }
        if seen.count_ones() != graph.n() {
            return Err("parts do not cover V(G)".into());
        }
        Ok(PartitionedGraph { graph, parts })
    }

    /// The singleton partition of V(G).
    #[must_use]
    pub fn singletons(graph: Graph) -> PartitionedGraph {
        let parts = (0..graph.n() as u32).map(|v| vec![v]).collect();
        PartitionedGraph { graph, parts }
    }

    /// True if every part induces an edgeless subgraph (§4.1 property 2's
    /// requirement on encodable partitioned graphs).
    #[must_use]
    pub fn parts_edgeless(&self) -> bool {
        self.parts.iter().all(|p| {
            p.iter()
                .all(|&u| p.iter().all(|&v| u == v || !self.graph.has_edge(u, v)))
        })
    }
}

/// The graph G[𝒞]: vertex set ⋃𝒞 (as a subset of V(G)), and the edges of G
/// with endpoints in two *different* parts. Returned over the original
/// vertex IDs of G (vertices outside ⋃𝒞 are isolated and should be ignored
/// by the caller).
#[must_use]
pub fn partition_graph(g: &Graph, parts: &[Vec<u32>]) -> Graph {
    let mut part_of: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, p) in parts.iter().enumerate() {
        for &v in p {
            part_of.insert(v, i);
        }
    }
    let mut out = Graph::new(g.n());
    for (u, v) in g.edges() {
        match (part_of.get(&u), part_of.get(&v)) {
            (Some(pu), Some(pv)) if pu != pv => out.add_edge(u, v),
            _ => {}
        }
    }
    out
}
