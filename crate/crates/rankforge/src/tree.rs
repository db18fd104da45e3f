//! Arena-backed trees with stable node IDs.
//!
//! Decomposition trees live in an arena so that node identity survives
//! prefix-rebuilding updates: nodes outside a rebuilt prefix keep their IDs,
//! and freed IDs are never reused (the arena only grows). Neighbor sets are
//! ordered, which makes every traversal deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Clone, Debug)]
pub struct Tree {
    nodes: Vec<Option<BTreeSet<usize>>>,
    root: Option<usize>,
}

/// Parent/child orientation of a rooted tree, computed once per use site.
pub struct RootedView {
    pub parent: HashMap<usize, usize>,
    pub children: HashMap<usize, Vec<usize>>,
    /// Nodes in a root-first (pre-order) sequence.
    pub preorder: Vec<usize>,
}

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root && self.live_map() == other.live_map()
    }
}
impl Eq for Tree {}

impl Default for Tree {
    fn default() -> Self {
        Tree::new()
    }
}

impl Tree {
    #[must_use]
    pub fn new() -> Self {
        Tree { nodes: Vec::new(), root: None }
    }

    fn live_map(&self) -> BTreeMap<usize, &BTreeSet<usize>> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|s| (i, s)))
            .collect()
    }

    pub fn add_node(&mut self) -> usize {
        self.nodes.push(Some(BTreeSet::new()));
        self.nodes.len() - 1
    }

    /// Inserts a node under a caller-chosen ID; the slot must be vacant.
    pub fn add_node_with_id(&mut self, id: usize) {
        if id >= self.nodes.len() {
            self.nodes.resize(id + 1, None);
        }
        assert!(self.nodes[id].is_none(), "node id {id} already live");
        self.nodes[id] = Some(BTreeSet::new());
    }

    /// Reserves `count` IDs that are fresh now and stay fresh until used
    /// with `add_node_with_id`.
    #[must_use]
    pub fn peek_fresh_ids(&self, count: usize) -> Vec<usize> {
        (self.nodes.len()..self.nodes.len() + count).collect()
    }

    /// Removes a node and all its incident edges.
    pub fn remove_node(&mut self, id: usize) {
        let nbrs = self.nodes[id].take().expect("removing dead node");
        for n in nbrs {
            if let Some(set) = self.nodes[n].as_mut() {
                set.remove(&id);
            }
        }
        if self.root == Some(id) {
            self.root = None;
        }
    }

    pub fn add_edge(&mut self, u: usize, v: usize) {
        assert_ne!(u, v);
        assert!(self.has_node(u) && self.has_node(v), "edge on dead node");
        self.nodes[u].as_mut().unwrap().insert(v);
        self.nodes[v].as_mut().unwrap().insert(u);
    }

    pub fn remove_edge(&mut self, u: usize, v: usize) {
        self.nodes[u].as_mut().unwrap().remove(&v);
        self.nodes[v].as_mut().unwrap().remove(&u);
    }

    #[must_use]
    pub fn has_node(&self, id: usize) -> bool {
        id < self.nodes.len() && self.nodes[id].is_some()
    }

    #[must_use]
    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.has_node(u) && self.nodes[u].as_ref().unwrap().contains(&v)
    }

    #[must_use]
    pub fn nbrs(&self, id: usize) -> Vec<usize> {
        self.nodes[id].as_ref().expect("dead node").iter().copied().collect()
    }

    #[must_use]
    pub fn degree(&self, id: usize) -> usize {
        self.nodes[id].as_ref().expect("dead node").len()
    }

    /// Live node IDs in increasing order.
    #[must_use]
    pub fn node_ids(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|_| i))
            .collect()
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_some()).count()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[must_use]
    pub fn root(&self) -> Option<usize> {
        self.root
    }

    pub fn set_root(&mut self, root: Option<usize>) {
        if let Some(r) = root {
            assert!(self.has_node(r));
        }
        self.root = root;
    }

    /// Leaves: degree ≤ 1 (a rooted binary tree's leaves are its 0-child
    /// nodes, which coincide with degree ≤ 1 unless the tree is a single
    /// node).
    #[must_use]
    pub fn leaves(&self) -> Vec<usize> {
        self.node_ids()
            .into_iter()
            .filter(|&t| self.degree(t) <= 1 && Some(t) != self.root || self.len() == 1)
            .collect()
    }

    /// Unordered edges (u < v), sorted.
    #[must_use]
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in self.node_ids() {
            for v in self.nbrs(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    /// Both orientations of every edge.
    #[must_use]
    pub fn oriented_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, v) in self.edges() {
            out.push((u, v));
            out.push((v, u));
        }
        out
    }

    /// All length-3 paths (x, y, z): y adjacent to both, x ≠ z, ordered.
    #[must_use]
    pub fn p3_paths(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for y in self.node_ids() {
            let nb = self.nbrs(y);
            for &x in &nb {
                for &z in &nb {
                    if x != z {
                        out.push((x, y, z));
                    }
                }
            }
        }
        out
    }

    /// Nodes of the component of T − {x,y} that contains x (edge xy must
    /// exist). In oriented-edge notation these are the nodes on the side of
    /// x→y.
    #[must_use]
    pub fn side_nodes(&self, x: usize, y: usize) -> Vec<usize> {
        assert!(self.has_edge(x, y), "side_nodes on non-edge {x}-{y}");
        let mut seen = BTreeSet::new();
        let mut stack = vec![x];
        seen.insert(x);
        while let Some(t) = stack.pop() {
            for n in self.nbrs(t) {
                if (t, n) != (x, y) && !seen.contains(&n) {
                    seen.insert(n);
                    stack.push(n);
                }
            }
        }
        seen.into_iter().collect()
    }

    /// Leaves of the tree lying on the side of x→y.
    #[must_use]
    pub fn side_leaves(&self, x: usize, y: usize) -> Vec<usize> {
        let leaves: BTreeSet<usize> = self.leaves().into_iter().collect();
        self.side_nodes(x, y)
            .into_iter()
            .filter(|t| leaves.contains(t))
            .collect()
    }

    /// The unique path from u to v, inclusive.
    #[must_use]
    pub fn path(&self, u: usize, v: usize) -> Vec<usize> {
        let mut prev: HashMap<usize, usize> = HashMap::new();
        let mut stack = vec![u];
        let mut seen = BTreeSet::new();
        seen.insert(u);
        while let Some(t) = stack.pop() {
            if t == v {
                break;
            }
            for n in self.nbrs(t) {
                if seen.insert(n) {
                    prev.insert(n, t);
                    stack.push(n);
                }
            }
        }
        let mut path = vec![v];
        let mut cur = v;
        while cur != u {
            cur = *prev.get(&cur).expect("u and v not connected");
            path.push(cur);
        }
        path.reverse();
        path
    }

    /// Orientation relative to the root.
    #[must_use]
    pub fn rooted_view(&self) -> RootedView {
        let root = self.root.expect("rooted_view on unrooted tree");
        let mut parent = HashMap::new();
        let mut children: HashMap<usize, Vec<usize>> = HashMap::new();
        let mut preorder = Vec::new();
        let mut stack = vec![root];
        let mut seen = BTreeSet::new();
        seen.insert(root);
        while let Some(t) = stack.pop() {
            preorder.push(t);
            let mut ch = Vec::new();
            for n in self.nbrs(t) {
                if seen.insert(n) {
                    parent.insert(n, t);
                    ch.push(n);
                }
            }
            // Push in reverse so the smaller child is visited first.
            for &c in ch.iter().rev() {
                stack.push(c);
            }
            children.insert(t, ch);
        }
        assert_eq!(preorder.len(), self.len(), "tree not connected");
        RootedView { parent, children, preorder }
    }

    /// Nodes of the rooted subtree at t (t included).
    #[must_use]
    pub fn subtree_nodes(&self, t: usize, view: &RootedView) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![t];
        while let Some(x) = stack.pop() {
            out.push(x);
            for &c in &view.children[&x] {
                stack.push(c);
            }
        }
        out.sort_unstable();
        out
    }

    /// height(t) = number of nodes on a longest path from t down to a leaf
    /// (a leaf has height 1). Returns all heights.
    #[must_use]
    pub fn heights(&self) -> HashMap<usize, usize> {
        let view = self.rooted_view();
        let mut h: HashMap<usize, usize> = HashMap::new();
        for &t in view.preorder.iter().rev() {
            let ch = &view.children[&t];
            let best = ch.iter().map(|c| h[c]).max().unwrap_or(0);
            h.insert(t, best + 1);
        }
        h
    }

    /// Checks the unrooted decomposition-tree shape: every internal node has
    /// degree exactly 3 and there are at least 2 leaves.
    #[must_use]
    pub fn is_cubic(&self) -> bool {
        let ids = self.node_ids();
        ids.len() >= 2
            && ids.iter().all(|&t| matches!(self.degree(t), 1 | 3))
            && self.is_connected()
    }

    /// Checks the rooted binary shape: every node has 0 or 2 children.
    #[must_use]
    pub fn is_binary(&self) -> bool {
        if self.root.is_none() || !self.is_connected() {
            return false;
        }
        let view = self.rooted_view();
        view.preorder
            .iter()
            .all(|t| matches!(view.children[t].len(), 0 | 2))
    }

    #[must_use]
    pub fn is_connected(&self) -> bool {
        let ids = self.node_ids();
        let Some(&start) = ids.first() else { return true };
        let mut seen = BTreeSet::new();
        seen.insert(start);
        let mut stack = vec![start];
        while let Some(t) = stack.pop() {
            for n in self.nbrs(t) {
                if seen.insert(n) {
                    stack.push(n);
                }
            }
        }
        seen.len() == ids.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_tree(n: usize) -> Tree {
        let mut t = Tree::new();
        let ids: Vec<usize> = (0..n).map(|_| t.add_node()).collect();
        for w in ids.windows(2) {
            t.add_edge(w[0], w[1]);
        }
        t
    }

    #[test]
    fn basic_shape() {
        let mut t = Tree::new();
        let a = t.add_node();
        let b = t.add_node();
        let c = t.add_node();
        let m = t.add_node();
        t.add_edge(m, a);
        t.add_edge(m, b);
        t.add_edge(m, c);
        assert!(t.is_cubic());
        assert_eq!(t.leaves(), vec![a, b, c]);
        assert_eq!(t.side_leaves(m, a), vec![b, c]);
        assert_eq!(t.side_leaves(a, m), vec![a]);
        assert_eq!(t.p3_paths().len(), 6);
    }

    #[test]
    fn rooted_heights() {
        let mut t = path_tree(3);
        t.set_root(Some(0));
        let h = t.heights();
        assert_eq!(h[&0], 3);
        assert_eq!(h[&2], 1);
        assert!(!t.is_binary()); // node 1 has one child
    }

    #[test]
    fn stable_ids_and_reinsertion() {
        let mut t = path_tree(4);
        assert_eq!(t.peek_fresh_ids(2), vec![4, 5]);
        t.remove_node(1);
        assert!(!t.has_node(1));
        t.add_node_with_id(1);
        t.add_edge(0, 1);
        t.add_edge(1, 2);
        assert_eq!(t.path(0, 3), vec![0, 1, 2, 3]);
        // Freed IDs are not handed out again.
        assert_eq!(t.peek_fresh_ids(1), vec![4]);
    }

    #[test]
    fn equality_ignores_arena_capacity() {
        let mut a = path_tree(2);
        let mut b = path_tree(2);
        let extra = b.add_node();
        b.remove_node(extra);
        assert_eq!(a, b);
        a.set_root(Some(0));
        assert_ne!(a, b);
    }
}
