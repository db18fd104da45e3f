//! k-expressions (Appendix B.1): construction from annotated rank
//! decompositions and evaluation back to graphs. A width-ℓ annotation
//! yields a (2^{ℓ+1}−1)-expression.

use crate::annotated::{self, Annotated};
use crate::gf2::BitVec;
use crate::graph::Graph;
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// A unary k-graph operation: η(i,j) adds all edges between label classes
/// i and j; π(i,j) merges class i into class j.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KOp {
    Eta(usize, usize),
    Pi(usize, usize),
}

/// One node of a k-expression: a labeled single vertex, the disjoint
/// union ⊕, or a unary operation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Leaf(u32),
    Union,
    Op(KOp),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KNode {
    pub kind: NodeKind,
    pub children: Vec<usize>,
}

/// A k-expression: a rooted tree with ≤2 children per node whose leaves
/// biject onto the vertex universe.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KExpression {
    pub k: usize,
    pub nodes: Vec<KNode>,
    pub root: usize,
}

impl KExpression {
    /// Pre-order text: one node per line — `leaf <v>`, `union`,
    /// `eta i j`, `pi i j` — with a `k <k>` header.
    #[must_use]
    pub fn to_text(&self) -> String {
        let mut out = format!("k {}\n", self.k);
        let mut stack = vec![self.root];
        while let Some(t) = stack.pop() {
            let node = &self.nodes[t];
            match node.kind {
                NodeKind::Leaf(v) => out.push_str(&format!("leaf {v}\n")),
                NodeKind::Union => out.push_str("union\n"),
                NodeKind::Op(KOp::Eta(i, j)) => out.push_str(&format!("eta {i} {j}\n")),
                NodeKind::Op(KOp::Pi(i, j)) => out.push_str(&format!("pi {i} {j}\n")),
            }
            // Pre-order: push children reversed so the first child pops
            // first.
            for &c in node.children.iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<KExpression, String> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or("empty expression")?;
        let k: usize = header
            .strip_prefix("k ")
            .and_then(|s| s.parse().ok())
            .ok_or("expected `k <count>` header")?;
        let mut nodes: Vec<KNode> = Vec::new();
        let root = parse_node(&mut lines, &mut nodes)?;
        if lines.next().is_some() {
            return Err("trailing lines after expression".into());
        }
        Ok(KExpression { k, nodes, root })
    }
}

fn parse_node<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    nodes: &mut Vec<KNode>,
) -> Result<usize, String> {
    let line = lines.next().ok_or("unexpected end of expression")?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    let (kind, arity) = match fields.as_slice() {
        ["leaf", v] => (
            NodeKind::Leaf(v.parse().map_err(|_| format!("bad vertex {v}"))?),
            0,
        ),
        ["union"] => (NodeKind::Union, 2),
        ["eta", i, j] => (
            NodeKind::Op(KOp::Eta(
                i.parse().map_err(|_| format!("bad label {i}"))?,
                j.parse().map_err(|_| format!("bad label {j}"))?,
            )),
            1,
        ),
        ["pi", i, j] => (
            NodeKind::Op(KOp::Pi(
                i.parse().map_err(|_| format!("bad label {i}"))?,
                j.parse().map_err(|_| format!("bad label {j}"))?,
            )),
            1,
        ),
        _ => return Err(format!("unrecognized node line: {line}")),
    };
    let mut children = Vec::new();
    for _ in 0..arity {
        children.push(parse_node(lines, nodes)?);
    }
    nodes.push(KNode { kind, children });
    Ok(nodes.len() - 1)
}

/// Evaluates the expression: the graph encoded at the root, label sets
/// discarded.
pub fn evaluate(e: &KExpression) -> Result<Graph, String> {
    let mut edges: BTreeSet<(u32, u32)> = BTreeSet::new();
    let labels = eval_node(e, e.root, &mut edges)?;
    let mut verts: Vec<u32> = labels.keys().copied().collect();
    verts.sort_unstable();
    let n = verts.iter().max().map_or(0, |&m| m as usize + 1);
    let mut g = Graph::new(n);
    for (u, v) in edges {
        g.add_edge(u, v);
    }
    Ok(g)
}

fn eval_node(
    e: &KExpression,
    t: usize,
    edges: &mut BTreeSet<(u32, u32)>,
) -> Result<HashMap<u32, usize>, String> {
    let node = &e.nodes[t];
    match (&node.kind, node.children.as_slice()) {
        (NodeKind::Leaf(v), []) => Ok(HashMap::from([(*v, 1)])),
        (NodeKind::Union, [c1, c2]) => {
            let mut l1 = eval_node(e, *c1, edges)?;
            let l2 = eval_node(e, *c2, edges)?;
            for (v, lab) in l2 {
                if l1.insert(v, lab).is_some() {
                    return Err(format!("vertex {v} appears on both sides of a union"));
                }
            }
            Ok(l1)
        }
        (NodeKind::Op(op), [c]) => {
            let (i, j) = match *op {
                KOp::Eta(i, j) | KOp::Pi(i, j) => (i, j),
            };
            if i == j || i < 1 || j < 1 || i > e.k || j > e.k {
                return Err(format!("bad label pair ({i}, {j}) for k = {}", e.k));
            }
            let mut labels = eval_node(e, *c, edges)?;
            match *op {
                KOp::Eta(i, j) => {
                    let vi: Vec<u32> = labels
                        .iter()
                        .filter(|&(_, &l)| l == i)
                        .map(|(&v, _)| v)
                        .collect();
                    let vj: Vec<u32> = labels
                        .iter()
                        .filter(|&(_, &l)| l == j)
                        .map(|(&v, _)| v)
                        .collect();
                    for &u in &vi {
                        for &w in &vj {
                            if u != w {
                                edges.insert((u.min(w), u.max(w)));
                            }
                        }
                    }
                }
                KOp::Pi(i, j) => {
                    for l in labels.values_mut() {
                        if *l == i {
                            *l = j;
                        }
                    }
                }
            }
            Ok(labels)
        }
        _ => Err("node arity does not match its kind".into()),
    }
}

// ---------------------------------------------------------------------------
// Emission from annotated rank decompositions

/// The data determining the operation block of a non-leaf transition: the
/// ξ labels of both child rep lists, the adjacency between the two rep
/// sides, and the label remap induced by the ℱ functions. Two transitions
/// with equal signatures get identical blocks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TransitionSignature {
    pub ell: usize,
    /// ξ of R(c1→x) in rep order.
    pub xi1: Vec<usize>,
    /// ξ of R(c2→x) in rep order.
    pub xi2: Vec<usize>,
    /// Adjacent (index into R(c1→x), index into R(c2→x)) pairs.
    pub adj: Vec<(usize, usize)>,
    /// Occupied-label remap (label, target), sorted.
    pub f: Vec<(usize, usize)>,
}

/// The operation block of a transition: π shifts applied to the second
/// child before ⊕, then η edge insertions, then π relabels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionBlock {
    pub pre2: Vec<KOp>,
    pub etas: Vec<KOp>,
    pub relabel: Vec<KOp>,
}

/// Computes the operation block from a transition signature alone.
#[must_use]
pub fn block_for(sig: &TransitionSignature) -> TransitionBlock {
    let half = 1usize << sig.ell;
    // Shift occupied non-empty labels of the second child out of the way.
    let occupied2: BTreeSet<usize> = sig.xi2.iter().copied().filter(|&x| x != half).collect();
    let pre2: Vec<KOp> = occupied2.iter().map(|&j| KOp::Pi(j, j + half)).collect();
    // Edge insertions between rep classes, sorted by (i, j).
    let mut etas: Vec<KOp> = sig
        .adj
        .iter()
        .filter(|&&(i1, i2)| sig.xi1[i1] != half && sig.xi2[i2] != half)
        .map(|&(i1, i2)| KOp::Eta(sig.xi1[i1], sig.xi2[i2] + half))
        .collect();
    etas.sort_unstable();
    etas.dedup();
    let f: BTreeMap<usize, usize> = sig.f.iter().copied().collect();
    let relabel = relabel_ops(&f, 2 * half - 1);
    TransitionBlock {
        pre2,
        etas,
        relabel,
    }
}

/// Realizes an arbitrary label remap with merge-only π operations.
/// Repeatedly merges a pending label whose target is settled; merges
/// destiny-sharing pending labels; and breaks pure cycles by parking one
/// member on a free label (one always exists: a cycle with no
/// destiny-sharing pair forces the occupied labels into [2^ℓ] < k).
fn relabel_ops(f: &BTreeMap<usize, usize>, k: usize) -> Vec<KOp> {
    let mut dest: BTreeMap<usize, usize> = f.clone();
    let mut occupied: BTreeSet<usize> = f.keys().copied().collect();
    let mut ops: Vec<KOp> = Vec::new();
    loop {
        let pending: Vec<usize> = occupied
            .iter()
            .copied()
            .filter(|l| dest[l] != *l)
            .collect();
        if pending.is_empty() {
            break;
        }
        let pset: BTreeSet<usize> = pending.iter().copied().collect();
        if let Some(&s) = pending.iter().find(|&&s| !pset.contains(&dest[&s])) {
            let t = dest[&s];
            ops.push(KOp::Pi(s, t));
            occupied.remove(&s);
            dest.remove(&s);
            occupied.insert(t);
            dest.insert(t, t);
        } else if let Some((s, j)) = pending.iter().find_map(|&s| {
            pending
                .iter()
                .find(|&&j| j != s && dest[&j] == dest[&s])
                .map(|&j| (s, j))
        }) {
            ops.push(KOp::Pi(s, j));
            occupied.remove(&s);
            dest.remove(&s);
        } else {
            let s = pending[0];
            let h = (1..=k)
                .find(|l| !occupied.contains(l))
                .expect("a free label exists when breaking a relabel cycle");
            ops.push(KOp::Pi(s, h));
            let t = dest.remove(&s).unwrap();
            occupied.remove(&s);
            occupied.insert(h);
            dest.insert(h, t);
        }
    }
    ops
}

struct Emitter<'a> {
    a: &'a Annotated,
    g: Graph,
    ell: usize,
    nodes: Vec<KNode>,
    /// Leaf-vertex sets per oriented tree edge.
    sides: HashMap<(usize, usize), BitVec>,
    parts: BTreeMap<usize, Vec<u32>>,
}

impl Emitter<'_> {
    fn half(&self) -> usize {
        1 << self.ell
    }

    fn add(&mut self, kind: NodeKind, children: Vec<usize>) -> usize {
        self.nodes.push(KNode { kind, children });
        self.nodes.len() - 1
    }

    fn wrap(&mut self, mut node: usize, ops: &[KOp]) -> usize {
        for &op in ops {
            node = self.add(NodeKind::Op(op), vec![node]);
        }
        node
    }

    /// ξ_{x→y}: empty-E-neighborhood reps → 2^ℓ; others numbered by the
    /// global vertex order among non-empty reps.
    fn xi(&self, x: usize, y: usize) -> BTreeMap<u32, usize> {
        let nonempty: BTreeSet<u32> = self.a.e_pairs(x, y).iter().map(|&(u, _)| u).collect();
        let mut reps: Vec<u32> = self.a.rep(x, y).to_vec();
        reps.sort_unstable();
        let mut out = BTreeMap::new();
        let mut next = 1;
        for &r in &reps {
            if nonempty.contains(&r) {
                out.insert(r, next);
                next += 1;
            } else {
                out.insert(r, self.half());
            }
        }
        out
    }

    /// The representative in R(x→y) with v's neighborhood on the far
    /// side of the edge x-y.
    fn rep_of(&self, v: u32, x: usize, y: usize) -> u32 {
        let far = &self.sides[&(y, x)];
        let row = |u: u32| -> BitVec {
            let mut m = BitVec::zeros(self.g.n());
            for i in self.g.nbr_row(u).iter_ones() {
                if far.get(i) {
                    m.set(i, true);
                }
            }
            m
        };
        let target = row(v);
        self.a
            .rep(x, y)
            .iter()
            .copied()
            .find(|&r| row(r) == target)
            .expect("every vertex has a representative")
    }

    fn signature(&self, c1: usize, c2: usize, x: usize, y: usize) -> TransitionSignature {
        let half = self.half();
        let xi1m = self.xi(c1, x);
        let xi2m = self.xi(c2, x);
        let xixy = self.xi(x, y);
        let mut r1: Vec<u32> = self.a.rep(c1, x).to_vec();
        let mut r2: Vec<u32> = self.a.rep(c2, x).to_vec();
        r1.sort_unstable();
        r2.sort_unstable();
        let xi1: Vec<usize> = r1.iter().map(|u| xi1m[u]).collect();
        let xi2: Vec<usize> = r2.iter().map(|v| xi2m[v]).collect();
        let mut adj = Vec::new();
        for (i1, &u) in r1.iter().enumerate() {
            for (i2, &v) in r2.iter().enumerate() {
                if self.g.has_edge(u, v) {
                    adj.push((i1, i2));
                }
            }
        }
        let f1 = self.a.fmap(c1, x, y);
        let f2 = self.a.fmap(c2, x, y);
        let mut f: BTreeMap<usize, usize> = BTreeMap::new();
        for &u in &r1 {
            f.insert(xi1m[&u], xixy[&f1[&u]]);
        }
        for &v in &r2 {
            if xi2m[&v] != half {
                f.insert(xi2m[&v] + half, xixy[&f2[&v]]);
            } else {
                f.insert(half, half);
            }
        }
        TransitionSignature {
            ell: self.ell,
            xi1,
            xi2,
            adj,
            f: f.into_iter().collect(),
        }
    }

    /// Builds the expression encoding the k-graph G(x→y).
    fn build(&mut self, x: usize, y: usize) -> usize {
        let others: Vec<usize> = {
            let mut o: Vec<usize> = self
                .a
                .tree
                .nbrs(x)
                .into_iter()
                .filter(|&t| t != y)
                .collect();
            o.sort_unstable();
            o
        };
        match others.as_slice() {
            [] => {
                // Leaf part: labeled single vertices joined by ⊕; the
                // encoded partition graph has no intra-part edges.
                let xim = self.xi(x, y);
                let part = self.parts[&x].clone();
                let mut acc: Option<usize> = None;
                for &v in &part {
                    let r = self.rep_of(v, x, y);
                    let mut node = self.add(NodeKind::Leaf(v), vec![]);
                    if xim[&r] != 1 {
                        node = self.wrap(node, &[KOp::Pi(1, xim[&r])]);
                    }
                    acc = Some(match acc {
                        None => node,
                        Some(prev) => self.add(NodeKind::Union, vec![prev, node]),
                    });
                }
                acc.expect("leaf parts are non-empty")
            }
            [c] => {
                // Degree-2 node (the root of the underlying tree): pure
                // relabel transition.
                let c = *c;
                let xim = self.xi(c, x);
                let xixy = self.xi(x, y);
                let fm = self.a.fmap(c, x, y);
                let mut f: BTreeMap<usize, usize> = BTreeMap::new();
                for (&u, &lab) in &xim {
                    f.insert(lab, xixy[&fm[&u]]);
                }
                let inner = self.build(c, x);
                let ops = relabel_ops(&f, 2 * self.half() - 1);
                self.wrap(inner, &ops)
            }
            [c1, c2] => {
                let (c1, c2) = (*c1, *c2);
                let sig = self.signature(c1, c2, x, y);
                let block = block_for(&sig);
                let e1 = self.build(c1, x);
                let e2 = self.build(c2, x);
                let e2s = self.wrap(e2, &block.pre2);
                let mut node = self.add(NodeKind::Union, vec![e1, e2s]);
                node = self.wrap(node, &block.etas);
                self.wrap(node, &block.relabel)
            }
            _ => unreachable!("decomposition trees are cubic"),
        }
    }
}

/// Emits a (2^{ℓ+1}−1)-expression encoding the same graph the width-ℓ
/// annotation encodes.
pub fn emit(a: &Annotated) -> Result<KExpression, String> {
    let (g, _) = annotated::decode(a)?;
    let ell = a.width();
    let k = 2 * (1usize << ell) - 1;
    let n = g.n();
    let mut sides: HashMap<(usize, usize), BitVec> = HashMap::new();
    let parts = a.parts();
    for (x, y) in a.tree.edges() {
        for (s, t) in [(x, y), (y, x)] {
            let mut m = BitVec::zeros(n);
            for l in a.tree.side_leaves(s, t) {
                for &v in &parts[&l] {
                    m.set(v as usize, true);
                }
            }
            sides.insert((s, t), m);
        }
    }
    let mut em = Emitter {
        a,
        g,
        ell,
        nodes: Vec::new(),
        sides,
        parts,
    };
    // Root the expression on the smallest tree edge.
    let (ra, rb) = *a
        .tree
        .edges()
        .iter()
        .min()
        .ok_or("annotation tree has no edges")?;
    let half = em.half();
    let ea = em.build(ra, rb);
    let eb = em.build(rb, ra);
    // Final merge (Lemma on the chosen edge): shift side b, ⊕, insert the
    // crossing edges between rep classes, then collapse all labels to 1.
    let xia = em.xi(ra, rb);
    let xib = em.xi(rb, ra);
    let occupied_b: BTreeSet<usize> = xib.values().copied().filter(|&l| l != half).collect();
    let pre: Vec<KOp> = occupied_b.iter().map(|&j| KOp::Pi(j, j + half)).collect();
    let ebs = em.wrap(eb, &pre);
    let mut node = em.add(NodeKind::Union, vec![ea, ebs]);
    let mut etas: Vec<KOp> = Vec::new();
    for (&u, &lu) in &xia {
        for (&v, &lv) in &xib {
            if lu != half && lv != half && em.g.has_edge(u, v) {
                etas.push(KOp::Eta(lu, lv + half));
            }
        }
    }
    etas.sort_unstable();
    etas.dedup();
    node = em.wrap(node, &etas);
    if k >= 2 {
        let collapse: Vec<KOp> = (2..=k).map(|i| KOp::Pi(i, 1)).collect();
        node = em.wrap(node, &collapse);
    }
    Ok(KExpression {
        k,
        nodes: em.nodes,
        root: node,
    })
}

/// All binary transition signatures of the annotation with their blocks,
/// for locality testing.
pub fn transition_blocks(a: &Annotated) -> Result<Vec<(TransitionSignature, TransitionBlock)>, String> {
    let (g, _) = annotated::decode(a)?;
    let ell = a.width();
    let n = g.n();
    let mut sides: HashMap<(usize, usize), BitVec> = HashMap::new();
    let parts = a.parts();
    for (x, y) in a.tree.edges() {
        for (s, t) in [(x, y), (y, x)] {
            let mut m = BitVec::zeros(n);
            for l in a.tree.side_leaves(s, t) {
                for &v in &parts[&l] {
                    m.set(v as usize, true);
                }
            }
            sides.insert((s, t), m);
        }
    }
    let em = Emitter {
        a,
        g,
        ell,
        nodes: Vec::new(),
        sides,
        parts,
    };
    let mut out = Vec::new();
    for (x, y) in a.tree.edges() {
        for (s, t) in [(x, y), (y, x)] {
            // Oriented edge t→... building G(s→t) with children of s.
            let others: Vec<usize> = a.tree.nbrs(s).into_iter().filter(|&z| z != t).collect();
            if others.len() == 2 {
                let (c1, c2) = (others[0].min(others[1]), others[0].max(others[1]));
                let sig = em.signature(c1, c2, s, t);
                let block = block_for(&sig);
                out.push((sig, block));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{exact_rankwidth_min, Engine};
    use crate::devtools::{self, Rng};
    use crate::graph::PartitionedGraph;

    fn emit_for(g: &Graph, rng: &mut Rng) -> (Annotated, KExpression) {
        let pg = PartitionedGraph::singletons(g.clone());
        let d = devtools::random_rooted_decomposition(rng, &pg);
        let a = annotated::annotate(&pg, &d);
        let e = emit(&a).unwrap();
        (a, e)
    }

    #[test]
    fn evaluate_trivial_expressions() {
        // ⊕ of two leaves → edgeless pair.
        let e = KExpression {
            k: 3,
            nodes: vec![
                KNode { kind: NodeKind::Leaf(0), children: vec![] },
                KNode { kind: NodeKind::Leaf(1), children: vec![] },
                KNode { kind: NodeKind::Union, children: vec![0, 1] },
            ],
            root: 2,
        };
        let g = evaluate(&e).unwrap();
        assert_eq!(g.edges(), vec![]);
        // η(1,2) over a relabeled pair → K₂.
        let e2 = KExpression {
            k: 3,
            nodes: vec![
                KNode { kind: NodeKind::Leaf(0), children: vec![] },
                KNode { kind: NodeKind::Leaf(1), children: vec![] },
                KNode { kind: NodeKind::Op(KOp::Pi(1, 2)), children: vec![1] },
                KNode { kind: NodeKind::Union, children: vec![0, 2] },
                KNode { kind: NodeKind::Op(KOp::Eta(1, 2)), children: vec![3] },
            ],
            root: 4,
        };
        let g2 = evaluate(&e2).unwrap();
        assert_eq!(g2.edges(), vec![(0, 1)]);
    }

    #[test]
    fn emit_k2_and_k5() {
        let mut rng = Rng::new(7);
        let k2 = Graph::from_edges(2, &[(0, 1)]);
        let (a, e) = emit_for(&k2, &mut rng);
        assert_eq!(a.width(), 1);
        assert_eq!(e.k, 3);
        assert_eq!(evaluate(&e).unwrap(), k2);
        assert!(e.nodes.iter().any(|n| matches!(n.kind, NodeKind::Op(KOp::Eta(_, _)))));

        let mut k5 = Graph::new(5);
        for u in 0..5u32 {
            for v in u + 1..5 {
                k5.add_edge(u, v);
            }
        }
        let pg = PartitionedGraph::singletons(k5.clone());
        let (w, d) = exact_rankwidth_min(&pg, Engine::BranchBound).unwrap();
        assert_eq!(w, 1);
        let a = annotated::annotate(&pg, &d.rooted_canonical());
        let e = emit(&a).unwrap();
        assert_eq!(e.k, 3);
        assert_eq!(evaluate(&e).unwrap(), k5);
    }

    #[test]
    fn label_budget_and_round_trip_random() {
        let mut rng = Rng::new(17);
        for _ in 0..60 {
            let n = rng.range(2, 10);
            let g = devtools::random_graph(&mut rng, n, 0.4);
            let (a, e) = emit_for(&g, &mut rng);
            let ell = a.width();
            assert_eq!(e.k, 2 * (1 << ell) - 1);
            for node in &e.nodes {
                if let NodeKind::Op(KOp::Eta(i, j) | KOp::Pi(i, j)) = node.kind {
                    assert!(i >= 1 && j >= 1 && i <= e.k && j <= e.k && i != j);
                }
            }
            let (dec, _) = annotated::decode(&a).unwrap();
            assert_eq!(evaluate(&e).unwrap(), dec);
        }
    }

    #[test]
    fn text_round_trip() {
        let mut rng = Rng::new(27);
        for _ in 0..20 {
            let n = rng.range(2, 8);
            let g = devtools::random_graph(&mut rng, n, 0.5);
            let (_, e) = emit_for(&g, &mut rng);
            let parsed = KExpression::parse(&e.to_text()).unwrap();
            assert_eq!(evaluate(&parsed).unwrap(), evaluate(&e).unwrap());
        }
    }

    #[test]
    fn identical_signatures_identical_blocks() {
        let mut rng = Rng::new(37);
        let mut by_sig: HashMap<TransitionSignature, TransitionBlock> = HashMap::new();
        let mut collisions = 0usize;
        for _ in 0..60 {
            let n = rng.range(3, 10);
            let g = devtools::random_graph(&mut rng, n, 0.4);
            let pg = PartitionedGraph::singletons(g);
            let d = devtools::random_rooted_decomposition(&mut rng, &pg);
            let a = annotated::annotate(&pg, &d);
            for (sig, block) in transition_blocks(&a).unwrap() {
                if let Some(prev) = by_sig.get(&sig) {
                    assert_eq!(prev, &block, "equal signatures produced different blocks");
                    collisions += 1;
                } else {
                    by_sig.insert(sig, block);
                }
            }
        }
        assert!(collisions > 0, "test never exercised a signature collision");
    }

    #[test]
    fn relabel_ops_handles_cycles() {
        // A pure 2-cycle with full low occupancy must park via a free
        // label and still realize the remap.
        let f: BTreeMap<usize, usize> = BTreeMap::from([(1, 2), (2, 1)]);
        let ops = relabel_ops(&f, 3);
        // Simulate on label classes.
        let mut classes: BTreeMap<usize, BTreeSet<&str>> =
            BTreeMap::from([(1, BTreeSet::from(["a"])), (2, BTreeSet::from(["b"]))]);
        for op in ops {
            let KOp::Pi(i, j) = op else { panic!("relabel emitted a non-π op") };
            let moved = classes.remove(&i).unwrap_or_default();
            classes.entry(j).or_default().extend(moved);
        }
        assert_eq!(classes[&1], BTreeSet::from(["b"]));
        assert_eq!(classes[&2], BTreeSet::from(["a"]));
    }
}
