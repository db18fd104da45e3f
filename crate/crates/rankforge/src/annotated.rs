//! Annotated rank decompositions (T, U, R, E, F): construction from an
//! explicit graph, verification of the four encoding properties, decoding,
//! neighbor queries, leaf deletion, twin insertion, and representative
//! partitions.
//!
//! R maps every oriented tree edge to a minimal representative of the
//! vertices on its side; E keeps the bipartite representative graphs per
//! edge; F maps representatives along every length-3 path. Together these
//! determine the encoded graph without storing it.

use crate::decomposition::RankDecomposition;
use crate::gf2::{self, BitVec};
use crate::graph::{vset, Graph, PartitionedGraph};
use crate::tree::Tree;
use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotated {
    pub tree: Tree,
    /// Sorted vertex universe.
    pub universe: Vec<u32>,
    /// Oriented edge (x, y) → sorted representative set R(x→y).
    pub r: BTreeMap<(usize, usize), Vec<u32>>,
    /// Edge (x, y) with x < y → bipartite edges (u, v), u ∈ R(x→y),
    /// v ∈ R(y→x).
    pub e: BTreeMap<(usize, usize), BTreeSet<(u32, u32)>>,
    /// Path (x, y, z) → map R(x→y) → R(y→z).
    pub f: BTreeMap<(usize, usize, usize), BTreeMap<u32, u32>>,
}

impl Annotated {
    #[must_use]
    pub fn rep(&self, x: usize, y: usize) -> &[u32] {
        &self.r[&(x, y)]
    }

    /// E(xy) adjacency between u ∈ R(x→y) and v ∈ R(y→x).
    #[must_use]
    pub fn e_adj(&self, x: usize, y: usize, u: u32, v: u32) -> bool {
        if x < y {
            self.e[&(x, y)].contains(&(u, v))
        } else {
            self.e[&(y, x)].contains(&(v, u))
        }
    }

    /// E(xy) pairs oriented as (R(x→y) member, R(y→x) member).
    #[must_use]
    pub fn e_pairs(&self, x: usize, y: usize) -> Vec<(u32, u32)> {
        if x < y {
            self.e[&(x, y)].iter().copied().collect()
        } else {
            self.e[&(y, x)].iter().map(|&(u, v)| (v, u)).collect()
        }
    }

    pub fn set_e(&mut self, x: usize, y: usize, pairs: impl IntoIterator<Item = (u32, u32)>) {
        let set: BTreeSet<(u32, u32)> = if x < y {
            pairs.into_iter().collect()
        } else {
            pairs.into_iter().map(|(u, v)| (v, u)).collect()
        };
        self.e.insert((x.min(y), x.max(y)), set);
    }

    #[must_use]
    pub fn fmap(&self, x: usize, y: usize, z: usize) -> &BTreeMap<u32, u32> {
        &self.f[&(x, y, z)]
    }

    /// Leaf edges as (leaf, inner neighbor).
    #[must_use]
    pub fn leaf_edges(&self) -> Vec<(usize, usize)> {
        self.tree
            .leaves()
            .into_iter()
            .map(|l| (l, self.tree.nbrs(l)[0]))
            .collect()
    }

    /// The parts of the encoded partitioned graph, keyed by leaf node.
    #[must_use]
    pub fn parts(&self) -> BTreeMap<usize, Vec<u32>> {
        self.leaf_edges()
            .into_iter()
            .map(|(l, p)| (l, self.r[&(l, p)].clone()))
            .collect()
    }

    /// Leaf holding the part that contains v.
    #[must_use]
    pub fn leaf_of(&self, v: u32) -> Option<usize> {
        self.parts()
            .into_iter()
            .find(|(_, part)| part.contains(&v))
            .map(|(l, _)| l)
    }

    /// Width: maximum over edges of the cut-rank of E(xy).
    #[must_use]
    pub fn width(&self) -> usize {
        self.tree
            .edges()
            .into_iter()
            .map(|(x, y)| self.edge_width(x, y))
            .max()
            .unwrap_or(0)
    }

    #[must_use]
    pub fn edge_width(&self, x: usize, y: usize) -> usize {
        let right = self.rep(y, x);
        let rows: Vec<BitVec> = self
            .rep(x, y)
            .iter()
            .map(|&u| {
                let mut row = BitVec::zeros(right.len());
                for (j, &v) in right.iter().enumerate() {
                    if self.e_adj(x, y, u, v) {
                        row.set(j, true);
                    }
                }
                row
            })
            .collect();
        gf2::rank_of_rows(rows.iter())
    }

    /// The corresponding plain rank decomposition (same tree, leaf parts).
    #[must_use]
    pub fn to_decomposition(&self) -> RankDecomposition {
        RankDecomposition {
            tree: self.tree.clone(),
            leaf_parts: self.parts(),
        }
    }

    /// Debug/golden dump: `R x y : v…`, `E x y : u-v …`, `F x y z : u->r …`.
    #[must_use]
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for ((x, y), reps) in &self.r {
            s.push_str(&format!("R {x} {y} :"));
            for v in reps {
                s.push_str(&format!(" {v}"));
            }
            s.push('\n');
        }
        for ((x, y), pairs) in &self.e {
            s.push_str(&format!("E {x} {y} :"));
            for (u, v) in pairs {
                s.push_str(&format!(" {u}-{v}"));
            }
            s.push('\n');
        }
        for ((x, y, z), map) in &self.f {
            s.push_str(&format!("F {x} {y} {z} :"));
            for (u, r) in map {
                s.push_str(&format!(" {u}->{r}"));
            }
            s.push('\n');
        }
        s
    }

    /// Complete serialization: the decomposition text (tree + leaf parts)
    /// followed by the R/E/F annotation lines.
    #[must_use]
    pub fn to_full_text(&self) -> String {
        let mut s = self.to_decomposition().to_text();
        s.push_str(&self.to_text());
        s
    }

    /// Parses the format produced by [`Annotated::to_full_text`].
    pub fn parse(text: &str) -> Result<Annotated, String> {
        let mut deco_lines = String::new();
        let mut r: BTreeMap<(usize, usize), Vec<u32>> = BTreeMap::new();
        let mut e: BTreeMap<(usize, usize), BTreeSet<(u32, u32)>> = BTreeMap::new();
        let mut f: BTreeMap<(usize, usize, usize), BTreeMap<u32, u32>> = BTreeMap::new();
        let node = |t: &str| t.parse::<usize>().map_err(|e| format!("bad node id: {e}"));
        let vert = |t: &str| t.parse::<u32>().map_err(|e| format!("bad vertex: {e}"));
        for line in text.lines() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                [] => {}
                ["R", x, y, ":", rest @ ..] => {
                    let reps = rest.iter().map(|t| vert(t)).collect::<Result<Vec<_>, _>>()?;
                    r.insert((node(x)?, node(y)?), reps);
                }
                ["E", x, y, ":", rest @ ..] => {
                    let pairs = rest
                        .iter()
                        .map(|t| {
                            let (u, v) = t.split_once('-').ok_or(format!("bad E pair `{t}`"))?;
                            Ok::<_, String>((vert(u)?, vert(v)?))
                        })
                        .collect::<Result<BTreeSet<_>, _>>()?;
                    e.insert((node(x)?, node(y)?), pairs);
                }
                ["F", x, y, z, ":", rest @ ..] => {
                    let map = rest
                        .iter()
                        .map(|t| {
                            let (u, v) = t.split_once("->").ok_or(format!("bad F entry `{t}`"))?;
                            Ok::<_, String>((vert(u)?, vert(v)?))
                        })
                        .collect::<Result<BTreeMap<_, _>, _>>()?;
                    f.insert((node(x)?, node(y)?, node(z)?), map);
                }
                _ => {
                    deco_lines.push_str(line);
                    deco_lines.push('\n');
                }
            }
        }
        let d = RankDecomposition::parse(&deco_lines)?;
        let a = Annotated { tree: d.tree, universe: d.leaf_parts.values().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect(), r, e, f };
        for (x, y) in a.tree.oriented_edges() {
            if !a.r.contains_key(&(x, y)) {
                return Err(format!("missing R {x} {y}"));
            }
        }
        for (x, y) in a.tree.edges() {
            if !a.e.contains_key(&(x, y)) {
                return Err(format!("missing E {x} {y}"));
            }
        }
        Ok(a)
    }
}

// ---------------------------------------------------------------------------
// Construction

/// Builds the annotation of a decomposition directly from the explicit
/// graph: minimal representatives per oriented edge, then E and F.
#[must_use]
pub fn annotate(pg: &PartitionedGraph, d: &RankDecomposition) -> Annotated {
    d.validate(pg).expect("invalid decomposition for graph");
    let g = &pg.graph;
    let n = g.n();
    let tree = d.tree.clone();

    // Side vertex sets per oriented edge.
    let mut side: HashMap<(usize, usize), BitVec> = HashMap::new();
    for (x, y) in tree.oriented_edges() {
        side.insert((x, y), vset(n, &d.side_vertices(x, y)));
    }

    let mut r: BTreeMap<(usize, usize), Vec<u32>> = BTreeMap::new();
    for (x, y) in tree.oriented_edges() {
        r.insert((x, y), crate::graph::minimal_representative(g, &side[&(x, y)]));
    }

    let mut a = Annotated {
        tree,
        universe: d.universe(),
        r,
        e: BTreeMap::new(),
        f: BTreeMap::new(),
    };

    for (x, y) in a.tree.edges() {
        let left = a.r[&(x, y)].clone();
        let right = a.r[&(y, x)].clone();
        let mut pairs = Vec::new();
        for &u in &left {
            for &v in &right {
                if g.has_edge(u, v) {
                    pairs.push((u, v));
                }
            }
        }
        a.set_e(x, y, pairs);
    }

    for (x, y, z) in a.tree.p3_paths() {
        let far = &side[&(z, y)];
        // Signature → representative lookup over R(y→z).
        let sig = |v: u32| -> BitVec {
            let mut s = g.nbr_row(v).clone();
            for i in 0..n {
                if !far.get(i) {
                    s.set(i, false);
                }
            }
            s
        };
        let lut: HashMap<BitVec, u32> = a.r[&(y, z)].iter().map(|&v| (sig(v), v)).collect();
        let map: BTreeMap<u32, u32> = a.r[&(x, y)]
            .iter()
            .map(|&u| {
                let target = lut
                    .get(&sig(u))
                    .copied()
                    .expect("representative class not covered");
                (u, target)
            })
            .collect();
        a.f.insert((x, y, z), map);
    }
    a
}

// ---------------------------------------------------------------------------
// Verification

/// Checks structural validity plus the four encoding properties of §4.1
/// against an explicit partitioned graph. On failure, reports the first
/// violated property and its location.
pub fn verify_encoding(a: &Annotated, pg: &PartitionedGraph) -> Result<(), String> {
    let g = &pg.graph;
    let n = g.n();

    // Tree shape.
    if a.tree.root().is_some() {
        if !a.tree.is_binary() {
            return Err("structure: rooted tree is not binary".into());
        }
    } else if !a.tree.is_cubic() {
        return Err("structure: unrooted tree is not cubic".into());
    }

    // R present and nonempty on every oriented edge; E on every edge; F on
    // every path.
    for (x, y) in a.tree.oriented_edges() {
        match a.r.get(&(x, y)) {
            None => return Err(format!("structure: missing R({x}→{y})")),
            Some(reps) if reps.is_empty() => {
                return Err(format!("structure: empty R({x}→{y})"))
            }
            _ => {}
        }
    }
    for (x, y) in a.tree.edges() {
        if !a.e.contains_key(&(x, y)) {
            return Err(format!("structure: missing E({x},{y})"));
        }
    }
    for p3 in a.tree.p3_paths() {
        let Some(map) = a.f.get(&p3) else {
            return Err(format!("structure: missing F{p3:?}"));
        };
        let (x, y, z) = p3;
        let dom: BTreeSet<u32> = map.keys().copied().collect();
        let want: BTreeSet<u32> = a.r[&(x, y)].iter().copied().collect();
        if dom != want {
            return Err(format!("structure: F{p3:?} domain != R({x}→{y})"));
        }
        let img_ok = map.values().all(|v| a.r[&(y, z)].contains(v));
        if !img_ok {
            return Err(format!("structure: F{p3:?} image outside R({y}→{z})"));
        }
    }
    // No stale records beyond the tree.
    for &(x, y) in a.r.keys() {
        if !a.tree.has_edge(x, y) {
            return Err(format!("structure: stale R({x}→{y})"));
        }
    }
    for &(x, y) in a.e.keys() {
        if !a.tree.has_edge(x, y) {
            return Err(format!("structure: stale E({x},{y})"));
        }
    }
    for &(x, y, z) in a.f.keys() {
        if !(a.tree.has_edge(x, y) && a.tree.has_edge(y, z) && x != z) {
            return Err(format!("structure: stale F({x},{y},{z})"));
        }
    }

    // Universe = disjoint union of R over leaf edges.
    let mut union: Vec<u32> = Vec::new();
    for (l, p) in a.leaf_edges() {
        union.extend_from_slice(&a.r[&(l, p)]);
    }
    let count = union.len();
    union.sort_unstable();
    union.dedup();
    if union.len() != count {
        return Err("structure: leaf parts overlap".into());
    }
    if union != a.universe {
        return Err("structure: universe != union of leaf parts".into());
    }

    // No twins over the bipartition of any E(xy).
    for (x, y) in a.tree.edges() {
        for (s, t) in [(x, y), (y, x)] {
            let far = a.rep(t, s);
            let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();
            for &u in a.rep(s, t) {
                let nb: Vec<u32> = far
                    .iter()
                    .copied()
                    .filter(|&v| a.e_adj(s, t, u, v))
                    .collect();
                if !seen.insert(nb) {
                    return Err(format!("structure: twins over bipartition in E({s},{t})"));
                }
            }
        }
    }

    // Rooted conventions.
    if let Some(root) = a.tree.root() {
        let ch = a.tree.nbrs(root);
        if ch.len() != 2 {
            return Err("structure: root degree != 2".into());
        }
        let (x, y) = (ch[0], ch[1]);
        if a.r[&(x, root)] != a.r[&(root, y)] || a.r[&(y, root)] != a.r[&(root, x)] {
            return Err("structure: root representative convention violated".into());
        }
        for (p, q, s) in [(x, root, y), (y, root, x)] {
            if a.f[&(p, q, s)].iter().any(|(u, v)| u != v) {
                return Err("structure: root F not identity".into());
            }
        }
    }

    // Property 1: leaf parts are exactly the parts of pg.
    let mut got: Vec<Vec<u32>> = a.parts().into_values().collect();
    got.sort();
    let mut want: Vec<Vec<u32>> = pg.parts.clone();
    want.sort();
    if got != want {
        return Err("property 1: leaf parts differ from the graph partition".into());
    }

    // Property 2: parts are edgeless.
    if !pg.parts_edgeless() {
        return Err("property 2: some part induces an edge".into());
    }

    // Property 3: each R(x→y) is a minimal representative of L[x→y], and
    // E(xy) is the induced representative graph.
    let d = a.to_decomposition();
    let mut sides: HashMap<(usize, usize), BitVec> = HashMap::new();
    for (x, y) in a.tree.oriented_edges() {
        sides.insert((x, y), vset(n, &d.side_vertices(x, y)));
    }
    for (x, y) in a.tree.oriented_edges() {
        let lset = &sides[&(x, y)];
        let classes = crate::graph::neighborhood_classes(g, lset);
        let reps = a.rep(x, y);
        for &u in reps {
            if !lset.get(u as usize) {
                return Err(format!("property 3: R({x}→{y}) not inside L[{x}→{y}]"));
            }
        }
        for class in &classes {
            let hits = reps.iter().filter(|r| class.contains(r)).count();
            if hits != 1 {
                return Err(format!(
                    "property 3: R({x}→{y}) covers a class {hits} times"
                ));
            }
        }
        if reps.len() != classes.len() {
            return Err(format!("property 3: |R({x}→{y})| != #classes"));
        }
    }
    for (x, y) in a.tree.edges() {
        for &u in a.rep(x, y) {
            for &v in a.rep(y, x) {
                if a.e_adj(x, y, u, v) != g.has_edge(u, v) {
                    return Err(format!("property 3: E({x},{y}) wrong at ({u},{v})"));
                }
            }
        }
    }

    // Property 4: F maps preserve neighborhoods into R(z→y).
    for (x, y, z) in a.tree.p3_paths() {
        let map = &a.f[&(x, y, z)];
        for (&u, &fu) in map {
            for &w in a.rep(z, y) {
                if g.has_edge(u, w) != g.has_edge(fu, w) {
                    return Err(format!(
                        "property 4: F({x},{y},{z})({u})={fu} disagrees at {w}"
                    ));
                }
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Neighbor query and decoding

/// N(v) in the encoded graph, via one DFS following F from v's leaf edge
/// (Lemma getnbs — no decode of the full graph).
#[must_use]
pub fn neighbors(a: &Annotated, v: u32) -> Vec<u32> {
    let l = a.leaf_of(v).expect("vertex not in universe");
    let p = a.tree.nbrs(l)[0];
    let mut out: Vec<u32> = Vec::new();
    // DFS over oriented edges pointing away from l, carrying v's
    // representative.
    let mut stack: Vec<(usize, usize, u32)> = vec![(l, p, v)];
    while let Some((x, y, rep)) = stack.pop() {
        let y_nbrs = a.tree.nbrs(y);
        if y_nbrs.len() == 1 {
            // (x, y) is a leaf edge pointing into leaf y: read adjacency.
            for &w in a.rep(y, x) {
                if a.e_adj(x, y, rep, w) {
                    out.push(w);
                }
            }
            continue;
        }
        for z in y_nbrs {
            if z != x {
                let next = a.f[&(x, y, z)][&rep];
                stack.push((y, z, next));
            }
        }
    }
    out.sort_unstable();
    out
}

/// The unique partitioned graph encoded by `a`: a graph over vertex IDs
/// 0..=max(universe) (non-universe IDs isolated) plus the leaf parts.
/// Errors if `a` is inconsistent (fails verification against its own
/// decode).
pub fn decode(a: &Annotated) -> Result<(Graph, Vec<Vec<u32>>), String> {
    let n = a.universe.iter().max().map_or(0, |&m| m as usize + 1);
    let mut g = Graph::new(n);
    for &v in &a.universe {
        for w in neighbors(a, v) {
            if v < w {
                g.add_edge(v, w);
            } else if !g.has_edge(w, v) {
                return Err(format!("asymmetric adjacency between {w} and {v}"));
            }
        }
    }
    // Symmetry re-check for the high-to-low direction.
    for &v in &a.universe {
        let nb: Vec<u32> = neighbors(a, v);
        if nb != g.neighbors(v) {
            return Err(format!("asymmetric adjacency at {v}"));
        }
    }
    let parts: Vec<Vec<u32>> = a.parts().into_values().collect();
    Ok((g, parts))
}

/// Decode and verify; the full "encodes some graph" check.
pub fn decode_checked(a: &Annotated) -> Result<(Graph, Vec<Vec<u32>>), String> {
    let (g, parts) = decode(a)?;
    let universe_graph = restrict_to_universe(&g, &a.universe);
    let pg = PartitionedGraph::new(universe_graph, densify_parts(&parts, &a.universe))?;
    let densified = densify_annotated(a);
    verify_encoding(&densified, &pg)?;
    Ok((g, parts))
}

/// Renames universe vertices to dense 0.. IDs (order-preserving).
fn restrict_to_universe(g: &Graph, universe: &[u32]) -> Graph {
    let (ind, _) = g.induced(universe);
    ind
}

fn densify_parts(parts: &[Vec<u32>], universe: &[u32]) -> Vec<Vec<u32>> {
    let index: BTreeMap<u32, u32> = universe
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u32))
        .collect();
    parts
        .iter()
        .map(|p| p.iter().map(|v| index[v]).collect())
        .collect()
}

/// Rewrites all annotations under the dense renaming of the universe.
fn densify_annotated(a: &Annotated) -> Annotated {
    let index: BTreeMap<u32, u32> = a
        .universe
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i as u32))
        .collect();
    Annotated {
        tree: a.tree.clone(),
        universe: (0..a.universe.len() as u32).collect(),
        r: a
            .r
            .iter()
            .map(|(&k, v)| (k, v.iter().map(|x| index[x]).collect()))
            .collect(),
        e: a
            .e
            .iter()
            .map(|(&k, set)| (k, set.iter().map(|&(u, v)| (index[&u], index[&v])).collect()))
            .collect(),
        f: a
            .f
            .iter()
            .map(|(&k, m)| (k, m.iter().map(|(&u, &v)| (index[&u], index[&v])).collect()))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Leaf deletion

/// Keeps only the parts at the given leaves; returns an annotation of the
/// induced partitioned graph with degree-2 nodes contracted. Width does not
/// increase.
pub fn drop_leaves(a: &Annotated, keep: &BTreeSet<usize>) -> Result<Annotated, String> {
    if keep.len() < 2 {
        return Err("drop_leaves needs at least 2 kept parts".into());
    }
    let all_leaves: BTreeSet<usize> = a.tree.leaves().into_iter().collect();
    if !keep.is_subset(&all_leaves) {
        return Err("keep set contains non-leaf nodes".into());
    }
    let (g, _) = decode(a)?;
    let parts = a.parts();
    let kept_vertices: Vec<u32> = keep
        .iter()
        .flat_map(|l| parts[l].iter().copied())
        .collect();

    // Prune the tree: drop unkept leaves, then iteratively remove dangling
    // non-part leaves and contract degree-2 nodes. The root is re-seated if
    // it degenerates.
    let was_rooted = a.tree.root().is_some();
    let mut tree = a.tree.clone();
    tree.set_root(None);
    for l in all_leaves.difference(keep) {
        tree.remove_node(*l);
    }
    loop {
        let mut changed = false;
        for t in tree.node_ids() {
            if tree.degree(t) <= 1 && !keep.contains(&t) {
                tree.remove_node(t);
                changed = true;
            } else if tree.degree(t) == 2 && !keep.contains(&t) {
                let nb = tree.nbrs(t);
                tree.remove_node(t);
                tree.add_edge(nb[0], nb[1]);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let leaf_parts: BTreeMap<usize, Vec<u32>> =
        keep.iter().map(|&l| (l, parts[&l].clone())).collect();
    let mut d = RankDecomposition { tree, leaf_parts };
    if was_rooted {
        d = d.rooted_canonical();
    }
    let (gi, vmap) = g.induced(&kept_vertices);
    // Re-express over original IDs: annotate over the induced graph, then
    // rename back.
    let inv: BTreeMap<u32, u32> = vmap.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect();
    let dense_parts: Vec<Vec<u32>> = d
        .leaf_parts
        .values()
        .map(|p| {
            p.iter()
                .map(|v| vmap.iter().position(|x| x == v).unwrap() as u32)
                .collect()
        })
        .collect();
    let pg = PartitionedGraph::new(gi, dense_parts)?;
    let dense_d = RankDecomposition {
        tree: d.tree.clone(),
        leaf_parts: d
            .leaf_parts
            .iter()
            .map(|(&l, p)| {
                (
                    l,
                    p.iter()
                        .map(|v| vmap.iter().position(|x| x == v).unwrap() as u32)
                        .collect(),
                )
            })
            .collect(),
    };
    let dense_a = annotate(&pg, &dense_d);
    Ok(rename_annotated(&dense_a, &inv))
}

/// Applies a vertex renaming to every annotation record.
#[must_use]
pub fn rename_annotated(a: &Annotated, map: &BTreeMap<u32, u32>) -> Annotated {
    let mut universe: Vec<u32> = a.universe.iter().map(|v| map[v]).collect();
    universe.sort_unstable();
    Annotated {
        tree: a.tree.clone(),
        universe,
        r: a
            .r
            .iter()
            .map(|(&k, v)| {
                let mut reps: Vec<u32> = v.iter().map(|x| map[x]).collect();
                reps.sort_unstable();
                (k, reps)
            })
            .collect(),
        e: a
            .e
            .iter()
            .map(|(&k, set)| (k, set.iter().map(|&(u, v)| (map[&u], map[&v])).collect()))
            .collect(),
        f: a
            .f
            .iter()
            .map(|(&k, m)| (k, m.iter().map(|(&u, &v)| (map[&u], map[&v])).collect()))
            .collect(),
    }
}

// ---------------------------------------------------------------------------
// Twin insertion

/// Adds `v` as a twin of `u` (N(v) = N(u)) by hanging two children under
/// u's leaf — an O(1)-locality construction touching only records around
/// that leaf. Requires singleton parts.
pub fn add_twin(a: &Annotated, u: u32, v: u32) -> Result<Annotated, String> {
    if a.universe.contains(&v) {
        return Err(format!("vertex {v} already present"));
    }
    if !a.universe.contains(&u) {
        return Err(format!("vertex {u} not in universe"));
    }
    let parts = a.parts();
    if parts.values().any(|p| p.len() != 1) {
        return Err("add_twin requires singleton parts".into());
    }
    let l = a.leaf_of(u).unwrap();
    let p = a.tree.nbrs(l)[0];

    let mut out = a.clone();
    let c1 = out.tree.add_node();
    let c2 = out.tree.add_node();
    out.tree.add_edge(l, c1);
    out.tree.add_edge(l, c2);
    out.universe.push(v);
    out.universe.sort_unstable();

    // Adjacency of u to the far representatives.
    let rpl = a.r[&(p, l)].clone();
    let adj_u: BTreeSet<u32> = rpl
        .iter()
        .copied()
        .filter(|&w| a.e_adj(l, p, u, w))
        .collect();
    let old_nonadj: Option<u32> = rpl.iter().copied().find(|w| !adj_u.contains(w));

    // New representative sets.
    out.r.insert((c1, l), vec![u]);
    out.r.insert((c2, l), vec![v]);
    let mut r_lc1 = rpl.clone();
    if old_nonadj.is_none() {
        r_lc1.push(v);
        r_lc1.sort_unstable();
    }
    let mut r_lc2 = rpl.clone();
    if old_nonadj.is_none() {
        r_lc2.push(u);
        r_lc2.sort_unstable();
    }
    out.r.insert((l, c1), r_lc1.clone());
    out.r.insert((l, c2), r_lc2.clone());

    // E on the new edges. w adjacent to u: in adj_u; v is never adjacent to
    // u; w ≠ u adjacent to v iff adjacent to u.
    out.set_e(
        c1,
        l,
        r_lc1
            .iter()
            .filter(|&&w| w != v && adj_u.contains(&w))
            .map(|&w| (u, w))
            .collect::<Vec<_>>(),
    );
    out.set_e(
        c2,
        l,
        r_lc2
            .iter()
            .filter(|&&w| w != u && adj_u.contains(&w))
            .map(|&w| (v, w))
            .collect::<Vec<_>>(),
    );

    // F on the six new paths through l.
    out.f.insert((c1, l, p), BTreeMap::from([(u, u)]));
    out.f.insert((c2, l, p), BTreeMap::from([(v, u)]));
    out.f
        .insert((p, l, c1), rpl.iter().map(|&w| (w, w)).collect());
    out.f
        .insert((p, l, c2), rpl.iter().map(|&w| (w, w)).collect());
    out.f
        .insert((c1, l, c2), BTreeMap::from([(u, old_nonadj.unwrap_or(u))]));
    out.f
        .insert((c2, l, c1), BTreeMap::from([(v, old_nonadj.unwrap_or(v))]));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Representative partitions (Lemma annotdecomppart)

/// Restriction of `a` to T[conn ∪ App(conn)], re-annotated over the
/// representative parts RepPart = {R(a→p) : a appendix of conn}. `conn`
/// must be a connected set of internal nodes. Computed from annotations
/// only (representative walks along F), no decode.
pub fn rep_partition(a: &Annotated, conn: &BTreeSet<usize>) -> Result<Annotated, String> {
    if conn.is_empty() {
        return Err("empty node set".into());
    }
    let leaves: BTreeSet<usize> = a.tree.leaves().into_iter().collect();
    if conn.iter().any(|t| leaves.contains(t)) {
        return Err("conn touches a leaf".into());
    }
    // Connectivity.
    let first = *conn.iter().next().unwrap();
    let mut seen = BTreeSet::from([first]);
    let mut stack = vec![first];
    while let Some(t) = stack.pop() {
        for nb in a.tree.nbrs(t) {
            if conn.contains(&nb) && seen.insert(nb) {
                stack.push(nb);
            }
        }
    }
    if seen != *conn {
        return Err("conn not connected".into());
    }

    // Build T' = T[conn ∪ App(conn)] with original node IDs.
    let mut tree = Tree::new();
    let mut appendix_edges: Vec<(usize, usize)> = Vec::new(); // (app, its conn neighbor)
    for &t in conn {
        if !tree.has_node(t) {
            tree.add_node_with_id(t);
        }
        for nb in a.tree.nbrs(t) {
            if !tree.has_node(nb) {
                tree.add_node_with_id(nb);
            }
            tree.add_edge(t, nb);
            if !conn.contains(&nb) {
                appendix_edges.push((nb, t));
            }
        }
    }
    appendix_edges.sort_unstable();
    if let Some(root) = a.tree.root() {
        if conn.contains(&root) {
            tree.set_root(Some(root));
        }
    }

    // Representative walks: for each appendix part member m, its composed
    // representative on every oriented T'-edge pointing away from its
    // appendix. Collect rep → lowest member per oriented edge.
    let mut cover: HashMap<(usize, usize), BTreeMap<u32, u32>> = HashMap::new();
    for &(app, p) in &appendix_edges {
        for &m in &a.r[&(app, p)] {
            let mut stack: Vec<(usize, usize, u32)> = vec![(app, p, m)];
            while let Some((x, y, rep)) = stack.pop() {
                let slot = cover.entry((x, y)).or_default().entry(rep).or_insert(m);
                *slot = (*slot).min(m);
                for z in tree.nbrs(y) {
                    if z != x {
                        let next = a.f[&(x, y, z)][&rep];
                        stack.push((y, z, next));
                    }
                }
            }
        }
    }

    // Replacement maps per oriented edge.
    let mut phi: HashMap<(usize, usize), BTreeMap<u32, u32>> = HashMap::new();
    for (x, y) in tree.oriented_edges() {
        let map = cover
            .get(&(x, y))
            .ok_or_else(|| format!("uncovered oriented edge ({x},{y})"))?;
        let mut m = BTreeMap::new();
        for &u in &a.r[&(x, y)] {
            let repl = map
                .get(&u)
                .ok_or_else(|| format!("class of {u} uncovered on ({x},{y})"))?;
            m.insert(u, *repl);
        }
        phi.insert((x, y), m);
    }

    let mut universe: Vec<u32> = appendix_edges
        .iter()
        .flat_map(|&(app, p)| a.r[&(app, p)].iter().copied())
        .collect();
    universe.sort_unstable();
    universe.dedup();

    let mut out = Annotated {
        tree: tree.clone(),
        universe,
        r: BTreeMap::new(),
        e: BTreeMap::new(),
        f: BTreeMap::new(),
    };
    for (x, y) in tree.oriented_edges() {
        let mut reps: Vec<u32> = phi[&(x, y)].values().copied().collect();
        reps.sort_unstable();
        reps.dedup();
        if reps.len() != a.r[&(x, y)].len() {
            return Err(format!("replacement collapsed classes on ({x},{y})"));
        }
        out.r.insert((x, y), reps);
    }
    for (x, y) in tree.edges() {
        let pairs: Vec<(u32, u32)> = a
            .e_pairs(x, y)
            .into_iter()
            .map(|(u, v)| (phi[&(x, y)][&u], phi[&(y, x)][&v]))
            .collect();
        out.set_e(x, y, pairs);
    }
    for (x, y, z) in tree.p3_paths() {
        let map: BTreeMap<u32, u32> = a.f[&(x, y, z)]
            .iter()
            .map(|(&u, &fu)| (phi[&(x, y)][&u], phi[&(y, z)][&fu]))
            .collect();
        out.f.insert((x, y, z), map);
    }
    Ok(out)
}
