//! Rank decompositions: width evaluation, factors, the log-height
//! transform, and two independent exact rankwidth oracles (exhaustive
//! enumeration of cubic trees, and branch-and-bound with cut-rank lower
//! bounds).

use crate::gf2::{self, BitVec};
use crate::graph::{cutrk, Graph, PartitionedGraph};
use crate::tree::Tree;
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Errors shared by the search-flavored operations.
#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("instance exceeds size limit: {0}")]
    SizeLimit(String),
    #[error("search budget exceeded: {0}")]
    Budget(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// A rank decomposition: a cubic (unrooted) or binary (rooted) tree whose
/// leaves carry the parts of a partitioned graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankDecomposition {
    pub tree: Tree,
    /// Leaf node → sorted part.
    pub leaf_parts: BTreeMap<usize, Vec<u32>>,
}

/// Per-edge cut-ranks of a decomposition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WidthProfile {
    /// Keyed by (min, max) node pair.
    pub per_edge: BTreeMap<(usize, usize), usize>,
    pub width: usize,
}

impl RankDecomposition {
    #[must_use]
    pub fn rooted(&self) -> bool {
        self.tree.root().is_some()
    }

    /// Structural validation against a partitioned graph.
    pub fn validate(&self, pg: &PartitionedGraph) -> Result<(), String> {
        let leaves: BTreeSet<usize> = self.tree.leaves().into_iter().collect();
        if self.rooted() {
            if !self.tree.is_binary() {
                return Err("rooted tree is not binary".into());
            }
        } else if !self.tree.is_cubic() {
            return Err("unrooted tree is not cubic".into());
        }
        let keys: BTreeSet<usize> = self.leaf_parts.keys().copied().collect();
        if keys != leaves {
            return Err("leaf_parts keys do not match tree leaves".into());
        }
        let mut want: BTreeSet<Vec<u32>> = pg.parts.iter().cloned().collect();
        if want.len() != pg.parts.len() {
            return Err("duplicate parts in partitioned graph".into());
        }
        for part in self.leaf_parts.values() {
            if !want.remove(part) {
                return Err(format!("leaf part {part:?} is not a part of the graph"));
            }
        }
        if !want.is_empty() {
            return Err("some parts of the graph are missing from the leaves".into());
        }
        Ok(())
    }

    /// Vertices on the side of the oriented tree edge x→y.
    #[must_use]
    pub fn side_vertices(&self, x: usize, y: usize) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .tree
            .side_leaves(x, y)
            .into_iter()
            .flat_map(|l| self.leaf_parts[&l].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    /// Total vertex universe.
    #[must_use]
    pub fn universe(&self) -> Vec<u32> {
        let mut out: Vec<u32> = self.leaf_parts.values().flatten().copied().collect();
        out.sort_unstable();
        out
    }

    /// Per-edge cut-ranks and the maximum.
    #[must_use]
    pub fn width(&self, g: &Graph) -> WidthProfile {
        let mut per_edge = BTreeMap::new();
        let mut width = 0;
        for (u, v) in self.tree.edges() {
            let side = crate::graph::vset(g.n(), &self.side_vertices(u, v));
            let w = cutrk(g, &side);
            width = width.max(w);
            per_edge.insert((u, v), w);
        }
        WidthProfile { per_edge, width }
    }

    /// Width of each node of a rooted decomposition: the width of its
    /// parent edge; the root has width 0.
    #[must_use]
    pub fn node_widths(&self, g: &Graph) -> HashMap<usize, usize> {
        let view = self.tree.rooted_view();
        let profile = self.width(g);
        let mut out = HashMap::new();
        for &t in &view.preorder {
            let w = match view.parent.get(&t) {
                None => 0,
                Some(&p) => profile.per_edge[&(t.min(p), t.max(p))],
            };
            out.insert(t, w);
        }
        out
    }

    /// Roots an unrooted decomposition by subdividing the edge (a, b).
    #[must_use]
    pub fn rooted_on_edge(&self, a: usize, b: usize) -> RankDecomposition {
        assert!(!self.rooted());
        let mut tree = self.tree.clone();
        let r = tree.add_node();
        tree.remove_edge(a, b);
        tree.add_edge(a, r);
        tree.add_edge(r, b);
        tree.set_root(Some(r));
        RankDecomposition { tree, leaf_parts: self.leaf_parts.clone() }
    }

    /// Roots on the lexicographically smallest edge (the convention used
    /// when a rooted structure is needed and none was given).
    #[must_use]
    pub fn rooted_canonical(&self) -> RankDecomposition {
        if self.rooted() {
            return self.clone();
        }
        let (a, b) = self.tree.edges()[0];
        self.rooted_on_edge(a, b)
    }

    /// Suppresses the root of a rooted decomposition.
    #[must_use]
    pub fn unrooted(&self) -> RankDecomposition {
        if !self.rooted() {
            return self.clone();
        }
        let r = self.tree.root().unwrap();
        let mut tree = self.tree.clone();
        let nbrs = tree.nbrs(r);
        assert_eq!(nbrs.len(), 2, "root must have two children");
        tree.remove_node(r);
        tree.add_edge(nbrs[0], nbrs[1]);
        tree.set_root(None);
        RankDecomposition { tree, leaf_parts: self.leaf_parts.clone() }
    }

    /// Text format. Rooted trees list parent pointers, unrooted trees list
    /// edges; `leaf <node> <vertex…>` lines bind the parts.
    #[must_use]
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(r) = self.tree.root() {
            s.push_str(&format!("rooted {r}\n"));
            let view = self.tree.rooted_view();
            for t in self.tree.node_ids() {
                if let Some(p) = view.parent.get(&t) {
                    s.push_str(&format!("parent {t} {p}\n"));
                }
            }
        } else {
            s.push_str("unrooted\n");
            for (u, v) in self.tree.edges() {
                s.push_str(&format!("edge {u} {v}\n"));
            }
        }
        for (leaf, part) in &self.leaf_parts {
            s.push_str(&format!("leaf {leaf}"));
            for v in part {
                s.push_str(&format!(" {v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<RankDecomposition, String> {
        let mut tree = Tree::new();
        let mut leaf_parts = BTreeMap::new();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty decomposition")?;
        let mut header_tokens = header.split_whitespace();
        let kind = header_tokens.next().ok_or("missing header")?;
        let root: Option<usize> = match kind {
            "rooted" => Some(
                header_tokens
                    .next()
                    .ok_or("rooted header missing root id")?
                    .parse()
                    .map_err(|e| format!("bad root id: {e}"))?,
            ),
            "unrooted" => None,
            other => return Err(format!("bad header `{other}`")),
        };
        let ensure = |tree: &mut Tree, id: usize| {
            if !tree.has_node(id) {
                tree.add_node_with_id(id);
            }
        };
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["edge", u, v] | ["parent", u, v] => {
                    let u: usize = u.parse().map_err(|e| format!("bad node id: {e}"))?;
                    let v: usize = v.parse().map_err(|e| format!("bad node id: {e}"))?;
                    ensure(&mut tree, u);
                    ensure(&mut tree, v);
                    tree.add_edge(u, v);
                }
                ["leaf", node, rest @ ..] => {
                    let node: usize = node.parse().map_err(|e| format!("bad node id: {e}"))?;
                    ensure(&mut tree, node);
                    let mut part = Vec::new();
                    for tok in rest {
                        part.push(tok.parse().map_err(|e| format!("bad vertex: {e}"))?);
                    }
                    part.sort_unstable();
                    leaf_parts.insert(node, part);
                }
                _ => return Err(format!("bad line `{line}`")),
            }
        }
        if let Some(r) = root {
            if !tree.has_node(r) {
                ensure(&mut tree, r);
            }
            tree.set_root(Some(r));
        }
        Ok(RankDecomposition { tree, leaf_parts })
    }
}

// ---------------------------------------------------------------------------
// Factors (§5.1)

/// A tree factor L[t] or a context factor L[top]∖L[bottom].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Factor {
    Tree { node: usize },
    Context { top: usize, bottom: usize },
}

impl Factor {
    /// The factor's vertex set in a rooted decomposition.
    #[must_use]
    pub fn vertices(&self, d: &RankDecomposition) -> Vec<u32> {
        let view = d.tree.rooted_view();
        let below = |t: usize| -> BTreeSet<u32> {
            d.tree
                .subtree_nodes(t, &view)
                .into_iter()
                .filter_map(|x| d.leaf_parts.get(&x))
                .flatten()
                .copied()
                .collect()
        };
        match *self {
            Factor::Tree { node } => below(node).into_iter().collect(),
            Factor::Context { top, bottom } => {
                let hi = below(top);
                let lo = below(bottom);
                hi.difference(&lo).copied().collect()
            }
        }
    }
}

/// All tree factors of a rooted decomposition (one per node); context
/// factors are built on demand via `Factor::Context`.
#[must_use]
pub fn enumerate_tree_factors(d: &RankDecomposition) -> Vec<Factor> {
    assert!(d.rooted());
    d.tree
        .node_ids()
        .into_iter()
        .map(|node| Factor::Tree { node })
        .collect()
}

/// Balanced rooted binary decomposition over the given parts (≥ 2): split
/// the slice in halves recursively. Width is whatever the cuts give; used
/// where any valid shallow tree will do (edgeless graphs, width-≤1 base
/// cases).
#[must_use]
pub fn balanced_decomposition(parts: &[Vec<u32>]) -> RankDecomposition {
    assert!(parts.len() >= 2, "need at least two parts");
    let mut tree = Tree::new();
    let mut leaf_parts: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    fn build(
        tree: &mut Tree,
        leaf_parts: &mut BTreeMap<usize, Vec<u32>>,
        parts: &[Vec<u32>],
    ) -> usize {
        if parts.len() == 1 {
            let l = tree.add_node();
            leaf_parts.insert(l, parts[0].clone());
            return l;
        }
        let mid = parts.len() / 2;
        let t = tree.add_node();
        let a = build(tree, leaf_parts, &parts[..mid]);
        let b = build(tree, leaf_parts, &parts[mid..]);
        tree.add_edge(t, a);
        tree.add_edge(t, b);
        t
    }
    let root = build(&mut tree, &mut leaf_parts, parts);
    tree.set_root(Some(root));
    RankDecomposition { tree, leaf_parts }
}

/// Rooted caterpillar over the parts in slice order: each prefix forms a
/// cut. Pairs with [`ordered_instance`], whose greedy order keeps prefix
/// cut-ranks small.
fn caterpillar_decomposition(parts: &[Vec<u32>]) -> RankDecomposition {
    assert!(parts.len() >= 2, "need at least two parts");
    let mut tree = Tree::new();
    let mut leaf_parts: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    let mut spine = tree.add_node();
    leaf_parts.insert(spine, parts[0].clone());
    for p in &parts[1..] {
        let l = tree.add_node();
        leaf_parts.insert(l, p.clone());
        let t = tree.add_node();
        tree.add_edge(t, spine);
        tree.add_edge(t, l);
        spine = t;
    }
    tree.set_root(Some(spine));
    RankDecomposition { tree, leaf_parts }
}

/// Agglomerative heuristic: repeatedly merge the two clusters whose union
/// has the smallest cut-rank. Often produces an optimal-width tree and is
/// polynomial, so it serves as a feasible-side shortcut before searching.
fn greedy_merge_decomposition(pg: &PartitionedGraph) -> RankDecomposition {
    assert!(pg.parts.len() >= 2, "need at least two parts");
    let n = pg.graph.n();
    let mut tree = Tree::new();
    let mut leaf_parts: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    let mut clusters: Vec<(BitVec, usize)> = pg
        .parts
        .iter()
        .map(|p| {
            let l = tree.add_node();
            leaf_parts.insert(l, p.clone());
            (crate::graph::vset(n, p), l)
        })
        .collect();
    while clusters.len() > 1 {
        let mut best = (usize::MAX, 0, 0);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let mut s = clusters[i].0.clone();
                s.xor_assign(&clusters[j].0);
                let r = cutrk(&pg.graph, &s);
                if r < best.0 {
                    best = (r, i, j);
                }
            }
        }
        let (_, i, j) = best;
        let (sj, tj) = clusters.swap_remove(j);
        let (mut si, ti) = clusters.swap_remove(i);
        let t = tree.add_node();
        tree.add_edge(t, ti);
        tree.add_edge(t, tj);
        si.xor_assign(&sj);
        clusters.push((si, t));
    }
    tree.set_root(Some(clusters[0].1));
    RankDecomposition { tree, leaf_parts }
}

/// Feasible-side shortcut shared by the decision oracles: a handful of
/// polynomial heuristics that often meet the bound outright.
fn cheap_witness(pg: &PartitionedGraph, k: usize) -> Option<RankDecomposition> {
    if pg.parts.len() < 2 {
        return None;
    }
    let bal = balanced_decomposition(&pg.parts);
    if bal.width(&pg.graph).width <= k {
        return Some(bal);
    }
    let merged = greedy_merge_decomposition(pg);
    if merged.width(&pg.graph).width <= k {
        return Some(merged);
    }
    let ordered = ordered_instance(pg);
    let cat = caterpillar_decomposition(&ordered.parts);
    if cat.width(&pg.graph).width <= k {
        return Some(cat);
    }
    None
}

// ---------------------------------------------------------------------------
// Exact rankwidth oracles

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Exhaustive,
    BranchBound,
}

pub const EXHAUSTIVE_MAX_PARTS: usize = 10;
pub const BNB_MAX_PARTS: usize = 16;

/// Decision variant: a width-≤k decomposition if one exists, else `None`
/// ("exceeds k"). Enforces the per-engine instance limits.
pub fn exact_rankwidth(
    pg: &PartitionedGraph,
    k: usize,
    engine: Engine,
) -> Result<Option<RankDecomposition>, SearchError> {
    let limit = match engine {
        Engine::Exhaustive => EXHAUSTIVE_MAX_PARTS,
        Engine::BranchBound => BNB_MAX_PARTS,
    };
    exact_rankwidth_with_limit(pg, k, engine, limit)
}

pub fn exact_rankwidth_with_limit(
    pg: &PartitionedGraph,
    k: usize,
    engine: Engine,
    max_parts: usize,
) -> Result<Option<RankDecomposition>, SearchError> {
    check_instance(pg, engine, max_parts)?;
    if let Some(w) = cheap_witness(pg, k) {
        return Ok(Some(w));
    }
    // Over singleton parts, the k = 1 decision is exactly the
    // distance-hereditary recognition problem; pendant/twin elimination
    // settles the infeasible side without a search.
    if k == 1
        && pg.parts.iter().all(|q| q.len() == 1)
        && !crate::graph::is_distance_hereditary(&pg.graph)
    {
        return Ok(None);
    }
    let t0 = std::time::Instant::now();
    let ordered = ordered_instance(pg);
    let mut search = Search::new(&ordered);
    let best = match engine {
        Engine::Exhaustive => search.exhaustive(Some(k)),
        Engine::BranchBound => search.branch_bound(Some(k)),
    };
    if std::env::var("RANKFORGE_TRACE").is_ok() {
        eprintln!(
            "trace: decision parts={} k={} verdict={} {:?}",
            pg.parts.len(),
            k,
            best.as_ref().map_or(usize::MAX, |(w, _)| *w),
            t0.elapsed()
        );
    }
    Ok(best.filter(|(w, _)| *w <= k).map(|(_, d)| d))
}

/// Outcome of a node-budgeted decision search.
#[derive(Clone, Debug)]
pub enum BoundedOutcome {
    /// A decomposition of width ≤ k.
    Witness(RankDecomposition),
    /// Proven: no decomposition of width ≤ k exists.
    Infeasible,
    /// The node budget ran out before a verdict.
    Exhausted,
}

/// Decision variant with a cap on branch-and-bound nodes. Unlike
/// [`exact_rankwidth`], exhausting the budget is reported rather than
/// letting an infeasible instance run unboundedly.
pub fn exact_rankwidth_bounded(
    pg: &PartitionedGraph,
    k: usize,
    max_nodes: u64,
) -> Result<BoundedOutcome, SearchError> {
    check_instance(pg, Engine::BranchBound, BNB_MAX_PARTS)?;
    if let Some(w) = cheap_witness(pg, k) {
        return Ok(BoundedOutcome::Witness(w));
    }
    if k == 1
        && pg.parts.iter().all(|q| q.len() == 1)
        && !crate::graph::is_distance_hereditary(&pg.graph)
    {
        return Ok(BoundedOutcome::Infeasible);
    }
    let ordered = ordered_instance(pg);
    let mut search = Search::new(&ordered);
    search.nodes_left = Some(max_nodes);
    let best = search.branch_bound(Some(k));
    match best.filter(|(w, _)| *w <= k) {
        Some((_, d)) => Ok(BoundedOutcome::Witness(d)),
        None if search.exhausted => Ok(BoundedOutcome::Exhausted),
        None => Ok(BoundedOutcome::Infeasible),
    }
}

/// Exact minimum width and a witness.
pub fn exact_rankwidth_min(
    pg: &PartitionedGraph,
    engine: Engine,
) -> Result<(usize, RankDecomposition), SearchError> {
    let limit = match engine {
        Engine::Exhaustive => EXHAUSTIVE_MAX_PARTS,
        Engine::BranchBound => BNB_MAX_PARTS,
    };
    check_instance(pg, engine, limit)?;
    let ordered = ordered_instance(pg);
    let mut search = Search::new(&ordered);
    let best = match engine {
        Engine::Exhaustive => search.exhaustive(None),
        Engine::BranchBound => search.branch_bound(None),
    };
    Ok(best.expect("every instance with ≥2 parts has some decomposition"))
}

/// Reorders the parts greedily so that each prefix of the placement order
/// has small cut-rank; the search explores trees leaf-by-leaf in this
/// order, and tight early partial bounds prune far more aggressively.
fn ordered_instance(pg: &PartitionedGraph) -> PartitionedGraph {
    let n = pg.graph.n();
    let p = pg.parts.len();
    if p < 3 {
        return pg.clone();
    }
    let sets: Vec<BitVec> = pg.parts.iter().map(|q| crate::graph::vset(n, q)).collect();
    let mut remaining: Vec<usize> = (0..p).collect();
    let start = remaining
        .iter()
        .copied()
        .max_by_key(|&i| cutrk(&pg.graph, &sets[i]))
        .unwrap();
    let mut order = vec![start];
    remaining.retain(|&i| i != start);
    let mut placed = sets[start].clone();
    while !remaining.is_empty() {
        let (pos, &next) = remaining
            .iter()
            .enumerate()
            .min_by_key(|&(_, &i)| {
                let mut s = placed.clone();
                s.xor_assign(&sets[i]);
                cutrk(&pg.graph, &s)
            })
            .unwrap();
        placed.xor_assign(&sets[next]);
        order.push(next);
        remaining.remove(pos);
    }
    PartitionedGraph {
        graph: pg.graph.clone(),
        parts: order.into_iter().map(|i| pg.parts[i].clone()).collect(),
    }
}

fn check_instance(
    pg: &PartitionedGraph,
    engine: Engine,
    max_parts: usize,
) -> Result<(), SearchError> {
    let p = pg.parts.len();
    if p < 2 {
        return Err(SearchError::Invalid(
            "no rank decomposition of fewer than 2 parts".into(),
        ));
    }
    if p > max_parts {
        return Err(SearchError::SizeLimit(format!(
            "{p} parts exceeds the {max_parts}-part limit of the {engine:?} engine"
        )));
    }
    if p > 32 {
        return Err(SearchError::SizeLimit("more than 32 parts".into()));
    }
    Ok(())
}

/// Lightweight fixed-capacity tree used inside the oracles. Slots 0..p−1
/// are the part leaves; slots p..2p−3 are internal nodes.
struct SlotTree {
    adj: Vec<Vec<usize>>,
}

impl SlotTree {
    fn new(slots: usize) -> Self {
        SlotTree { adj: vec![Vec::new(); slots] }
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        self.adj[a].push(b);
        self.adj[b].push(a);
    }

    fn remove_edge(&mut self, a: usize, b: usize) {
        self.adj[a].retain(|&x| x != b);
        self.adj[b].retain(|&x| x != a);
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, nbrs) in self.adj.iter().enumerate() {
            for &b in nbrs {
                if a < b {
                    out.push((a, b));
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Bitmask of part leaves (< p) on the side of a→b.
    fn side_mask(&self, p: usize, a: usize, b: usize) -> u32 {
        let mut mask = 0u32;
        let mut stack = vec![a];
        let mut seen = vec![false; self.adj.len()];
        seen[a] = true;
        seen[b] = true; // block the edge crossing
        while let Some(t) = stack.pop() {
            if t < p {
                mask |= 1 << t;
            }
            for &n in &self.adj[t] {
                if !seen[n] {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        mask
    }

    fn to_decomposition(&self, pg: &PartitionedGraph, live: usize) -> RankDecomposition {
        let mut tree = Tree::new();
        for _ in 0..live {
            tree.add_node();
        }
        for (a, b) in self.edges() {
            tree.add_edge(a, b);
        }
        let leaf_parts = pg
            .parts
            .iter()
            .enumerate()
            .map(|(i, part)| (i, part.clone()))
            .collect();
        RankDecomposition { tree, leaf_parts }
    }
}

struct Search<'a> {
    pg: &'a PartitionedGraph,
    p: usize,
    part_sets: Vec<BitVec>,
    full_memo: HashMap<u32, usize>,
    sub_memo: HashMap<(u32, u32), usize>,
    /// Remaining branch-and-bound node budget, if capped.
    nodes_left: Option<u64>,
    /// Set when the budget ran out; the verdict is then inconclusive.
    exhausted: bool,
}

impl<'a> Search<'a> {
    fn new(pg: &'a PartitionedGraph) -> Self {
        let n = pg.graph.n();
        let part_sets = pg.parts.iter().map(|p| crate::graph::vset(n, p)).collect();
        Search {
            pg,
            p: pg.parts.len(),
            part_sets,
            full_memo: HashMap::new(),
            sub_memo: HashMap::new(),
            nodes_left: None,
            exhausted: false,
        }
    }

    fn mask_vertices(&self, mask: u32) -> BitVec {
        let mut out = BitVec::zeros(self.pg.graph.n());
        for i in 0..self.p {
            if mask >> i & 1 == 1 {
                out.xor_assign(&self.part_sets[i]);
            }
        }
        out
    }

    fn cutrk_full(&mut self, mask: u32) -> usize {
        let full = (1u32 << self.p) - 1;
        let key = (mask).min(full ^ mask);
        if let Some(&r) = self.full_memo.get(&key) {
            return r;
        }
        let r = cutrk(&self.pg.graph, &self.mask_vertices(key));
        self.full_memo.insert(key, r);
        r
    }

    /// Rank of the submatrix between the vertices of `side` parts and the
    /// vertices of the other *placed* parts — a lower bound for the final
    /// cut-rank of any completion (the final matrix contains it).
    fn cutrk_partial(&mut self, side: u32, placed: u32) -> usize {
        let other = placed ^ side;
        let key = (side.min(other), placed);
        if let Some(&r) = self.sub_memo.get(&key) {
            return r;
        }
        let rows_set = self.mask_vertices(side);
        let cols_set = self.mask_vertices(other);
        let cols: Vec<usize> = cols_set.iter_ones().collect();
        let rows: Vec<BitVec> = rows_set
            .iter_ones()
            .map(|v| {
                let nbr = self.pg.graph.nbr_row(v as u32);
                let mut row = BitVec::zeros(cols.len());
                for (j, &c) in cols.iter().enumerate() {
                    if nbr.get(c) {
                        row.set(j, true);
                    }
                }
                row
            })
            .collect();
        let r = gf2::rank_of_rows(rows.iter());
        self.sub_memo.insert(key, r);
        r
    }

    fn eval_complete(&mut self, st: &SlotTree) -> usize {
        let mut width = 0;
        for (a, b) in st.edges() {
            width = width.max(self.cutrk_full(st.side_mask(self.p, a, b)));
        }
        width
    }

    fn eval_partial(&mut self, st: &SlotTree, placed_parts: usize) -> usize {
        let placed: u32 = (1u32 << placed_parts) - 1;
        let mut lb = 0;
        for (a, b) in st.edges() {
            let side = st.side_mask(self.p, a, b);
            lb = lb.max(self.cutrk_partial(side, placed));
        }
        lb
    }

    /// Full enumeration of cubic leaf-labeled trees; returns the best
    /// (width, witness). With `stop_at`, unwinds as soon as a tree of width
    /// ≤ stop_at is found.
    fn exhaustive(&mut self, stop_at: Option<usize>) -> Option<(usize, RankDecomposition)> {
        if self.p == 2 {
            let mut st = SlotTree::new(2);
            st.add_edge(0, 1);
            let w = self.eval_complete(&st);
            return Some((w, st.to_decomposition(self.pg, 2)));
        }
        let slots = 2 * self.p - 2;
        let mut st = SlotTree::new(slots);
        let center = self.p;
        for l in 0..3 {
            st.add_edge(l, center);
        }
        let mut best: Option<(usize, RankDecomposition)> = None;
        self.exh_rec(&mut st, 3, stop_at, &mut best);
        best
    }

    fn exh_rec(
        &mut self,
        st: &mut SlotTree,
        next_part: usize,
        stop_at: Option<usize>,
        best: &mut Option<(usize, RankDecomposition)>,
    ) -> bool {
        if let (Some(target), Some((w, _))) = (stop_at, best.as_ref()) {
            if *w <= target {
                return true; // done
            }
        }
        if next_part == self.p {
            let w = self.eval_complete(st);
            if best.as_ref().map_or(true, |(bw, _)| w < *bw) {
                *best = Some((w, st.to_decomposition(self.pg, st.adj.len())));
            }
            return stop_at.is_some_and(|target| best.as_ref().unwrap().0 <= target);
        }
        let mid = self.p + next_part - 2;
        for (a, b) in st.edges() {
            st.remove_edge(a, b);
            st.add_edge(a, mid);
            st.add_edge(mid, b);
            st.add_edge(mid, next_part);
            let done = self.exh_rec(st, next_part + 1, stop_at, best);
            st.remove_edge(a, mid);
            st.remove_edge(mid, b);
            st.remove_edge(mid, next_part);
            st.add_edge(a, b);
            if done {
                return true;
            }
        }
        false
    }

    /// Branch-and-bound over the same insertion tree, pruning a partial
    /// placement whose cut-rank lower bound is already no better than the
    /// incumbent.
    fn branch_bound(&mut self, stop_at: Option<usize>) -> Option<(usize, RankDecomposition)> {
        if self.p == 2 {
            return self.exhaustive(stop_at);
        }
        let slots = 2 * self.p - 2;
        let mut st = SlotTree::new(slots);
        let center = self.p;
        for l in 0..3 {
            st.add_edge(l, center);
        }
        let mut best: Option<(usize, RankDecomposition)> = None;
        self.bnb_rec(&mut st, 3, stop_at, &mut best);
        best
    }

    fn bnb_rec(
        &mut self,
        st: &mut SlotTree,
        next_part: usize,
        stop_at: Option<usize>,
        best: &mut Option<(usize, RankDecomposition)>,
    ) -> bool {
        if let (Some(target), Some((w, _))) = (stop_at, best.as_ref()) {
            if *w <= target {
                return true;
            }
        }
        if let Some(left) = self.nodes_left.as_mut() {
            if *left == 0 {
                self.exhausted = true;
                return true;
            }
            *left -= 1;
        }
        // Prune: the partial lower bound cannot beat the incumbent, or (in
        // decision mode) already exceeds the target.
        let lb = self.eval_partial(st, next_part);
        if let Some((bw, _)) = best.as_ref() {
            if lb >= *bw {
                return false;
            }
        }
        if let Some(target) = stop_at {
            if lb > target {
                return false;
            }
        }
        if next_part == self.p {
            let w = self.eval_complete(st);
            if best.as_ref().map_or(true, |(bw, _)| w < *bw) {
                *best = Some((w, st.to_decomposition(self.pg, st.adj.len())));
            }
            return stop_at.is_some_and(|target| best.as_ref().unwrap().0 <= target);
        }
        let mid = self.p + next_part - 2;
        // Best-first child order: score each insertion point by the lower
        // bound it induces, so promising subtrees are explored first.
        let mut scored: Vec<(usize, (usize, usize))> = Vec::new();
        for (a, b) in st.edges() {
            st.remove_edge(a, b);
            st.add_edge(a, mid);
            st.add_edge(mid, b);
            st.add_edge(mid, next_part);
            let child_lb = self.eval_partial(st, next_part + 1);
            st.remove_edge(a, mid);
            st.remove_edge(mid, b);
            st.remove_edge(mid, next_part);
            st.add_edge(a, b);
            scored.push((child_lb, (a, b)));
        }
        scored.sort_by_key(|&(child_lb, _)| child_lb);
        for (child_lb, (a, b)) in scored {
            if let Some((bw, _)) = best.as_ref() {
                if child_lb >= *bw {
                    break;
                }
            }
            if stop_at.is_some_and(|target| child_lb > target) {
                break;
            }
            st.remove_edge(a, b);
            st.add_edge(a, mid);
            st.add_edge(mid, b);
            st.add_edge(mid, next_part);
            let done = self.bnb_rec(st, next_part + 1, stop_at, best);
            st.remove_edge(a, mid);
            st.remove_edge(mid, b);
            st.remove_edge(mid, next_part);
            st.add_edge(a, b);
            if done {
                return true;
            }
        }
        false
    }
}

// ---------------------------------------------------------------------------
// Log-height transform (Appendix A)

/// Pinned constants of the height bound: the size of X shrinks by 1/3 every
/// 4 levels, giving height ≤ C_H·log₂|V(T)| + C_0.
pub const LOG_HEIGHT_CH: f64 = 4.0 / 0.584_962_500_721_156_2; // 4 / log2(3/2)
pub const LOG_HEIGHT_C0: f64 = 4.0;

#[derive(Clone, Debug)]
pub struct LogHeightOutput {
    pub decomposition: RankDecomposition,
    /// For each output node: the ≤2 oriented edges (in, out) of the *input*
    /// tree bounding its subtree δ(t); L*[t] is the intersection of the
    /// input sides L[in→out].
    pub provenance: HashMap<usize, Vec<(usize, usize)>>,
}

/// Appendix A verbatim: turns any rank decomposition into a rooted one of
/// height O(log |V(T)|) and width at most twice the input width.
#[must_use]
pub fn log_height_transform(d: &RankDecomposition) -> LogHeightOutput {
    let und = d.unrooted();
    let t_in = &und.tree;
    let mut out = Tree::new();
    let mut leaf_parts = BTreeMap::new();
    let mut provenance = HashMap::new();
    let leaves: BTreeSet<usize> = t_in.leaves().into_iter().collect();
    let delta: BTreeSet<usize> = t_in.node_ids().into_iter().collect();
    let root = build_star(
        t_in,
        &und.leaf_parts,
        &leaves,
        delta,
        &mut out,
        &mut leaf_parts,
        &mut provenance,
    );
    out.set_root(Some(root));
    LogHeightOutput {
        decomposition: RankDecomposition { tree: out, leaf_parts },
        provenance,
    }
}

/// Boundary edges of δ: edges of T with the inside endpoint in δ.
fn boundary(t: &Tree, delta: &BTreeSet<usize>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for &u in delta {
        for v in t.nbrs(u) {
            if !delta.contains(&v) {
                out.push((u, v));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Connected component of δ∖banned containing `start`, not crossing the
/// banned edge.
fn component(
    t: &Tree,
    delta: &BTreeSet<usize>,
    start: usize,
    banned_node: Option<usize>,
    banned_edge: Option<(usize, usize)>,
) -> BTreeSet<usize> {
    let mut seen = BTreeSet::new();
    seen.insert(start);
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for v in t.nbrs(u) {
            if !delta.contains(&v) || Some(v) == banned_node {
                continue;
            }
            if let Some((a, b)) = banned_edge {
                if (u == a && v == b) || (u == b && v == a) {
                    continue;
                }
            }
            if seen.insert(v) {
                stack.push(v);
            }
        }
    }
    seen
}

#[allow(clippy::too_many_arguments)]
fn build_star(
    t_in: &Tree,
    in_parts: &BTreeMap<usize, Vec<u32>>,
    leaves: &BTreeSet<usize>,
    mut delta: BTreeSet<usize>,
    out: &mut Tree,
    out_parts: &mut BTreeMap<usize, Vec<u32>>,
    provenance: &mut HashMap<usize, Vec<(usize, usize)>>,
) -> usize {
    let x_count = |d: &BTreeSet<usize>| d.iter().filter(|n| leaves.contains(n)).count();
    let node = out.add_node();
    let bnd = boundary(t_in, &delta);
    assert!(bnd.len() <= 2, "more than two boundary edges");
    provenance.insert(node, bnd.clone());

    let total_x = x_count(&delta);
    assert!(total_x >= 1, "subtree without leaves");
    if total_x == 1 {
        let leaf = *delta.iter().find(|n| leaves.contains(n)).unwrap();
        out_parts.insert(node, in_parts[&leaf].clone());
        return node;
    }

    let mut bnd = bnd;
    if bnd.len() == 2 && bnd[0].0 == bnd[1].0 {
        // Two boundary edges at the same node x: drop x, fall through to the
        // one-boundary-edge case.
        let x = bnd[0].0;
        delta.remove(&x);
        bnd = boundary(t_in, &delta);
        assert!(bnd.len() <= 1);
    }

    let recurse = |delta: BTreeSet<usize>, out: &mut Tree, out_parts: &mut BTreeMap<usize, Vec<u32>>, provenance: &mut HashMap<usize, Vec<(usize, usize)>>| {
        build_star(t_in, in_parts, leaves, delta, out, out_parts, provenance)
    };

    if bnd.len() <= 1 {
        // Pick a 2/3-balanced edge inside δ (ties: lexicographically
        // smallest edge).
        let total = x_count(&delta);
        let mut best: Option<((usize, usize), usize)> = None;
        for &u in &delta {
            for v in t_in.nbrs(u) {
                if u < v && delta.contains(&v) {
                    let side = component(t_in, &delta, u, None, Some((u, v)));
                    let cx = x_count(&side);
                    let m = cx.max(total - cx);
                    if best.map_or(true, |(_, bm)| m < bm) {
                        best = Some(((u, v), m));
                    }
                }
            }
        }
        let ((u, v), m) = best.expect("no internal edge in a multi-leaf subtree");
        assert!(3 * m <= 2 * total, "walking-argument balance violated");
        let left = component(t_in, &delta, u, None, Some((u, v)));
        let right: BTreeSet<usize> = delta.difference(&left).copied().collect();
        let c1 = recurse(left, out, out_parts, provenance);
        let c2 = recurse(right, out, out_parts, provenance);
        out.add_edge(node, c1);
        out.add_edge(node, c2);
        return node;
    }

    // Two boundary edges at distinct nodes x ≠ y.
    let (x, y) = (bnd[0].0, bnd[1].0);
    let path = t_in.path(x, y);
    debug_assert!(path.iter().all(|n| delta.contains(n)));
    let on_path: BTreeSet<usize> = path.iter().copied().collect();
    // w_i: the unique δ-neighbor of z_i off the path.
    let w: Vec<usize> = path
        .iter()
        .map(|&z| {
            let mut cands: Vec<usize> = t_in
                .nbrs(z)
                .into_iter()
                .filter(|n| delta.contains(n) && !on_path.contains(n))
                .collect();
            assert_eq!(cands.len(), 1, "path node without a unique hanging subtree");
            cands.pop().unwrap()
        })
        .collect();
    let total = x_count(&delta);
    let mut r = 0;
    let mut acc = 0;
    for (i, &z) in path.iter().enumerate() {
        let hang = component(t_in, &delta, w[i], Some(z), None);
        acc += x_count(&hang);
        if 3 * acc >= total {
            r = i;
            break;
        }
    }
    let zr = path[r];
    if zr == x || zr == y {
        // c1: the component of δ−z_r containing the rest of the path;
        // c2: the component hanging at w_r.
        let other_end = if zr == x { *path.last().unwrap() } else { path[0] };
        let dc1 = component(t_in, &delta, other_end, Some(zr), None);
        let dc2 = component(t_in, &delta, w[r], Some(zr), None);
        let c1 = recurse(dc1, out, out_parts, provenance);
        let c2 = recurse(dc2, out, out_parts, provenance);
        out.add_edge(node, c1);
        out.add_edge(node, c2);
    } else {
        // Four-way split: c1 (internal, over δ(c1)) and c2 are children of
        // t; c3 and c4 are children of c1.
        let zr1 = path[r + 1];
        let dc1 = component(t_in, &delta, zr, None, Some((zr, zr1)));
        let dc2 = component(t_in, &delta, zr1, None, Some((zr, zr1)));
        let dc3 = component(t_in, &dc1, x, Some(zr), None);
        let dc4 = component(t_in, &dc1, w[r], Some(zr), None);
        let c1 = out.add_node();
        provenance.insert(c1, boundary(t_in, &dc1));
        let c3 = recurse(dc3, out, out_parts, provenance);
        let c4 = recurse(dc4, out, out_parts, provenance);
        out.add_edge(c1, c3);
        out.add_edge(c1, c4);
        let c2 = recurse(dc2, out, out_parts, provenance);
        out.add_edge(node, c1);
        out.add_edge(node, c2);
    }
    node
}
