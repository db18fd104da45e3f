//! Deterministic generators for tests and cross-checking.
//!
//! Kept in the library (rather than a test-only module) so unit tests,
//! integration tests, and the acceptance suite share one source of random
//! instances without external RNG dependencies.

use crate::decomposition::RankDecomposition;
use crate::graph::{Graph, PartitionedGraph};
use crate::tree::Tree;

/// SplitMix64: tiny, seedable, good enough for instance generation.
#[derive(Clone, Debug)]
pub struct Rng(u64);

impl Rng {
    #[must_use]
    pub fn new(seed: u64) -> Self {
        Rng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in 0..bound (bound > 0).
    pub fn below(&mut self, bound: usize) -> usize {
        assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    pub fn range(&mut self, lo: usize, hi_incl: usize) -> usize {
        lo + self.below(hi_incl - lo + 1)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        ((self.next_u64() >> 11) as f64 / (1u64 << 53) as f64) < p
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    pub fn pick<'a, T>(&mut self, xs: &'a [T]) -> &'a T {
        &xs[self.below(xs.len())]
    }
}

/// G(n, p) random graph.
pub fn random_graph(rng: &mut Rng, n: usize, p: f64) -> Graph {
    let mut g = Graph::new(n);
    for u in 0..n as u32 {
        for v in u + 1..n as u32 {
            if rng.chance(p) {
                g.add_edge(u, v);
            }
        }
    }
    g
}

/// Random unrooted cubic decomposition of a partitioned graph: leaves are
/// inserted one at a time at a random edge subdivision, with parts attached
/// in random order.
pub fn random_cubic_decomposition(rng: &mut Rng, pg: &PartitionedGraph) -> RankDecomposition {
    let p = pg.parts.len();
    assert!(p >= 2, "no rank decomposition with < 2 parts");
    let mut order: Vec<usize> = (0..p).collect();
    rng.shuffle(&mut order);

    let mut tree = Tree::new();
    let mut leaf_of_part: Vec<(usize, usize)> = Vec::new(); // (leaf node, part idx)
    let l0 = tree.add_node();
    let l1 = tree.add_node();
    tree.add_edge(l0, l1);
    leaf_of_part.push((l0, order[0]));
    leaf_of_part.push((l1, order[1]));
    for &pi in &order[2..] {
        let edges = tree.edges();
        let &(a, b) = rng.pick(&edges);
        let mid = tree.add_node();
        let leaf = tree.add_node();
        tree.remove_edge(a, b);
        tree.add_edge(a, mid);
        tree.add_edge(mid, b);
        tree.add_edge(mid, leaf);
        leaf_of_part.push((leaf, pi));
    }
    let leaf_parts = leaf_of_part
        .into_iter()
        .map(|(leaf, pi)| (leaf, pg.parts[pi].clone()))
        .collect();
    RankDecomposition { tree, leaf_parts }
}

/// Random rooted binary decomposition (uniformly shaped, not balanced).
pub fn random_rooted_decomposition(rng: &mut Rng, pg: &PartitionedGraph) -> RankDecomposition {
    let d = random_cubic_decomposition(rng, pg);
    let edges = d.tree.edges();
    let &(a, b) = rng.pick(&edges);
    d.rooted_on_edge(a, b)
}

/// Random subset of 0..n−1.
pub fn random_subset(rng: &mut Rng, n: usize, p: f64) -> Vec<u32> {
    (0..n as u32).filter(|_| rng.chance(p)).collect()
}
