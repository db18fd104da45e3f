//! The static almost-linear algorithm's combinatorial toolkit (§9): the
//! suffix-array twin index, factor-based near-twin pairing, the
//! Twin-Flipping solver over the dynamic structure, and the recursive
//! driver `compute_rankwidth` with its bipartite reduction B(G).

use crate::annotated::{self, Annotated};
use crate::decomposition::{
    balanced_decomposition, exact_rankwidth, Engine, Factor, RankDecomposition, SearchError,
    BNB_MAX_PARTS,
};
use crate::dynamic::{DynamicConfig, DynamicRankwidth, FlipOutcome};
use crate::gf2::BitVec;
use crate::graph::{
    bipartite_reduction, bipartite_reduction_sides, Graph, PartitionedGraph,
};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// The near-twin constant f(k) = 32·(2^{2k}+1).
#[must_use]
pub fn near_twin_f(k: usize) -> usize {
    assert!(k <= 20, "f(k) overflows past k = 20");
    32 * ((1usize << (2 * k)) + 1)
}

// ---------------------------------------------------------------------------
// Suffix-array twin index

/// Twin-detection data structure over a bipartite graph with sides (A, B),
/// B indexed v₁..v_|B| in the given order. Neighborhood lists of A are
/// concatenated into a string over the alphabet of B-indices; queries run
/// over its suffix array, LCP array, and an RMQ structure.
#[derive(Clone, Debug)]
pub struct TwinIndex {
    b_len: usize,
    /// Concatenated sorted neighborhoods, symbols are 1-based B-indices.
    s: Vec<usize>,
    sa: Vec<usize>,
    inv_sa: Vec<usize>,
    lcp: Vec<usize>,
    rmq: SparseTable,
    /// Per A-vertex inclusive span [L_a, R_a] into `s`; absent for degree 0.
    spans: HashMap<u32, (usize, usize)>,
}

/// Suffix array by prefix doubling, O(m log² m). Any correct builder
/// satisfies the query contract.
fn suffix_array(s: &[usize]) -> Vec<usize> {
    let m = s.len();
    if m == 0 {
        return Vec::new();
    }
    let mut sa: Vec<usize> = (0..m).collect();
    let mut rank: Vec<usize> = s.to_vec();
    let mut tmp = vec![0usize; m];
    let mut k = 1;
    loop {
        {
            let key = |i: usize| (rank[i], if i + k < m { rank[i + k] + 1 } else { 0 });
            sa.sort_by_key(|&i| key(i));
            tmp[sa[0]] = 0;
            for j in 1..m {
                tmp[sa[j]] = tmp[sa[j - 1]] + usize::from(key(sa[j]) != key(sa[j - 1]));
            }
        }
        rank.copy_from_slice(&tmp);
        if rank[sa[m - 1]] == m - 1 {
            break;
        }
        k *= 2;
    }
    sa
}

/// Kasai's LCP construction: lcp[i] = longest common prefix of the
/// SA-adjacent suffixes sa[i], sa[i+1].
fn lcp_array(s: &[usize], sa: &[usize], inv: &[usize]) -> Vec<usize> {
    let m = s.len();
    let mut lcp = vec![0usize; m.saturating_sub(1)];
    let mut h = 0usize;
    for i in 0..m {
        if inv[i] + 1 < m {
            let j = sa[inv[i] + 1];
            while i + h < m && j + h < m && s[i + h] == s[j + h] {
                h += 1;
            }
            lcp[inv[i]] = h;
            h = h.saturating_sub(1);
        } else {
            h = 0;
        }
    }
    lcp
}

/// Sparse-table range minimum over a fixed array.
#[derive(Clone, Debug)]
struct SparseTable {
    rows: Vec<Vec<usize>>,
}

impl SparseTable {
    fn new(data: &[usize]) -> SparseTable {
        let n = data.len();
        let mut rows = vec![data.to_vec()];
        let mut len = 1;
        while 2 * len <= n {
            let prev = rows.last().unwrap();
            let row: Vec<usize> = (0..=n - 2 * len)
                .map(|i| prev[i].min(prev[i + len]))
                .collect();
            rows.push(row);
            len *= 2;
        }
        SparseTable { rows }
    }

    /// Minimum over the inclusive range [l, r]; usize::MAX when l > r.
    fn min(&self, l: usize, r: usize) -> usize {
        if l > r {
            return usize::MAX;
        }
        let span = r - l + 1;
        let level = usize::BITS as usize - 1 - span.leading_zeros() as usize;
        let len = 1usize << level;
        self.rows[level][l].min(self.rows[level][r + 1 - len])
    }
}

/// Builds the twin index. Every edge must cross the given bipartition.
pub fn build_twin_index(
    g: &Graph,
    a_side: &[u32],
    b_side: &[u32],
) -> Result<TwinIndex, SearchError> {
    let aset: BTreeSet<u32> = a_side.iter().copied().collect();
    let bset: BTreeSet<u32> = b_side.iter().copied().collect();
    if aset.len() != a_side.len() || bset.len() != b_side.len() || !aset.is_disjoint(&bset) {
        return Err(SearchError::Invalid("sides must be disjoint sets".into()));
    }
    for (u, v) in g.edges() {
        let crossing = (aset.contains(&u) && bset.contains(&v))
            || (bset.contains(&u) && aset.contains(&v));
        if !crossing {
            return Err(SearchError::Invalid(format!(
                "edge {u}-{v} does not cross the bipartition"
            )));
        }
    }
    let b_index: HashMap<u32, usize> = b_side
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i + 1))
        .collect();
    let mut s: Vec<usize> = Vec::new();
    let mut spans: HashMap<u32, (usize, usize)> = HashMap::new();
    for &a in a_side {
        let mut nbrs: Vec<usize> = g.neighbors(a).iter().map(|v| b_index[v]).collect();
        nbrs.sort_unstable();
        if nbrs.is_empty() {
            continue;
        }
        let start = s.len();
        s.extend(nbrs);
        spans.insert(a, (start, s.len() - 1));
    }
    let sa = suffix_array(&s);
    let mut inv_sa = vec![0usize; s.len()];
    for (i, &p) in sa.iter().enumerate() {
        inv_sa[p] = i;
    }
    let lcp = lcp_array(&s, &sa, &inv_sa);
    let rmq = SparseTable::new(&lcp);
    Ok(TwinIndex {
        b_len: b_side.len(),
        s,
        sa,
        inv_sa,
        lcp,
        rmq,
        spans,
    })
}

impl TwinIndex {
    #[must_use]
    pub fn string_len(&self) -> usize {
        self.s.len()
    }

    #[must_use]
    pub fn suffix_array(&self) -> &[usize] {
        &self.sa
    }

    #[must_use]
    pub fn lcp(&self) -> &[usize] {
        &self.lcp
    }
}

/// Twins(X, l, r): the twin-equivalence classes of `x` in G[X, {v_l..v_r}]
/// (1-based interval into the B indexing). The vertices with empty
/// interval-neighborhood form the first class.
pub fn twins_query(
    idx: &TwinIndex,
    x: &[u32],
    l: usize,
    r: usize,
) -> Result<Vec<Vec<u32>>, SearchError> {
    if l < 1 || r < l || r > idx.b_len {
        return Err(SearchError::Invalid(format!("bad interval [{l}, {r}]")));
    }
    let mut empty_class: Vec<u32> = Vec::new();
    // Group nonempty interval-neighborhoods by size p, keeping the suffix
    // rank of the neighborhood's first symbol.
    let mut by_size: BTreeMap<usize, Vec<(usize, u32)>> = BTreeMap::new();
    for &a in x {
        let Some(&(la, ra)) = idx.spans.get(&a) else {
            empty_class.push(a);
            continue;
        };
        // Binary search within the sorted span for symbols in [l, r].
        let row = &idx.s[la..=ra];
        let lo = row.partition_point(|&sym| sym < l);
        let hi = row.partition_point(|&sym| sym <= r);
        if lo == hi {
            empty_class.push(a);
            continue;
        }
        by_size
            .entry(hi - lo)
            .or_default()
            .push((idx.inv_sa[la + lo], a));
    }
    let mut classes: Vec<Vec<u32>> = Vec::new();
    if !empty_class.is_empty() {
        empty_class.sort_unstable();
        classes.push(empty_class);
    }
    for (p, mut group) in by_size {
        group.sort_unstable();
        let mut current: Vec<u32> = vec![group[0].1];
        for w in group.windows(2) {
            let (rank_prev, _) = w[0];
            let (rank_next, a) = w[1];
            // Equal interval-neighborhoods iff the two suffixes share a
            // common prefix of length ≥ p.
            let z = idx.rmq.min(rank_prev, rank_next - 1);
            if z >= p {
                current.push(a);
            } else {
                current.sort_unstable();
                classes.push(std::mem::take(&mut current));
                current.push(a);
            }
        }
        current.sort_unstable();
        classes.push(current);
    }
    Ok(classes)
}

// ---------------------------------------------------------------------------
// Disjoint factors and near-twins

/// Finds ≥ ⌊|w|/(16ℓ)⌋ pairwise-disjoint factors of the rooted
/// decomposition, each containing at least ℓ vertices of `w`, via the
/// important-node / junction-tree construction.
pub fn disjoint_factors(
    d: &RankDecomposition,
    w: &[u32],
    ell: usize,
) -> Result<Vec<Factor>, SearchError> {
    if ell == 0 {
        return Err(SearchError::Invalid("ell must be positive".into()));
    }
    if w.len() < 16 * ell {
        return Err(SearchError::Invalid(format!(
            "|w| = {} below 16·ell = {}",
            w.len(),
            16 * ell
        )));
    }
    if !d.rooted() {
        return Err(SearchError::Invalid("decomposition must be rooted".into()));
    }
    let wset: BTreeSet<u32> = w.iter().copied().collect();
    let view = d.tree.rooted_view();
    let root = d.tree.root().unwrap();

    // |L[t] ∩ W| per node, bottom-up.
    let mut wcount: HashMap<usize, usize> = HashMap::new();
    for &t in view.preorder.iter().rev() {
        let own = d
            .leaf_parts
            .get(&t)
            .map_or(0, |p| p.iter().filter(|v| wset.contains(v)).count());
        let below: usize = view.children[&t].iter().map(|c| wcount[c]).sum();
        wcount.insert(t, own + below);
    }

    // Important prefix and junctions.
    let important: BTreeSet<usize> = wcount
        .iter()
        .filter(|&(_, &c)| c >= ell)
        .map(|(&t, _)| t)
        .collect();
    let junctions: BTreeSet<usize> = important
        .iter()
        .copied()
        .filter(|&t| {
            if t == root {
                return true;
            }
            let deg = d
                .tree
                .nbrs(t)
                .into_iter()
                .filter(|nb| important.contains(nb))
                .count();
            deg == 1 || deg == 3
        })
        .collect();

    // Junction tree T′: parent = nearest strict junction ancestor.
    let jparent = |t: usize| -> Option<usize> {
        let mut cur = t;
        while let Some(&p) = view.parent.get(&cur) {
            if junctions.contains(&p) {
                return Some(p);
            }
            cur = p;
        }
        None
    };
    let jchildren: BTreeMap<usize, usize> = junctions
        .iter()
        .filter(|&&t| t != root)
        .map(|&t| (t, jparent(t).expect("root is a junction")))
        .fold(BTreeMap::new(), |mut acc, (_, p)| {
            *acc.entry(p).or_insert(0) += 1;
            acc
        });
    let jleaves: Vec<usize> = junctions
        .iter()
        .copied()
        .filter(|t| !jchildren.contains_key(t))
        .collect();

    let mut out: Vec<Factor> = Vec::new();
    if junctions.len() * 8 * ell >= w.len() {
        // Many junctions: the junction-tree leaves alone suffice.
        out.extend(jleaves.iter().map(|&node| Factor::Tree { node }));
    } else {
        // Few junctions: cut each junction-to-parent path into context
        // factors of ≥ ℓ (and < 2ℓ) W-vertices; junction-tree leaves are
        // disjoint from these and are included as tree factors.
        out.extend(jleaves.iter().map(|&node| Factor::Tree { node }));
        for &x in &junctions {
            if x == root {
                continue;
            }
            let mut bottom = x;
            let mut acc = 0usize;
            let mut cur = view.parent[&x];
            while !junctions.contains(&cur) {
                // Off-path W-vertices joining at cur.
                acc += wcount[&cur] - wcount[&bottom_path_child(&view, cur, bottom)];
                if acc >= ell {
                    out.push(Factor::Context { top: cur, bottom });
                    bottom = cur;
                    acc = 0;
                }
                cur = view.parent[&cur];
            }
        }
    }

    // Contract checks: disjointness, per-factor W-count, total count.
    let mut seen: BTreeSet<u32> = BTreeSet::new();
    for f in &out {
        let verts = f.vertices(d);
        let wc = verts.iter().filter(|v| wset.contains(v)).count();
        assert!(wc >= ell, "factor below the ℓ bound");
        for v in verts {
            assert!(seen.insert(v), "factors overlap at vertex {v}");
        }
    }
    assert!(
        out.len() >= w.len() / (16 * ell),
        "factor count {} below ⌊|w|/16ℓ⌋ = {}",
        out.len(),
        w.len() / (16 * ell)
    );
    Ok(out)
}

/// The child of `cur` lying on the path down towards `bottom` (which is a
/// descendant of `cur`).
fn bottom_path_child(
    view: &crate::tree::RootedView,
    cur: usize,
    bottom: usize,
) -> usize {
    let mut t = bottom;
    while view.parent[&t] != cur {
        t = view.parent[&t];
    }
    t
}

/// Disjoint near-twin pairs with their symmetric differences.
#[derive(Clone, Debug)]
pub struct NearTwinReport {
    pub pairs: Vec<(u32, u32)>,
    pub diffs: Vec<Vec<u32>>,
}

/// Finds ≥ ⌊|w|/f(k)⌋ disjoint pairs of (f(k)·n/|w|)-near-twins in `w`,
/// where k is the width of the annotation, by collecting representative
/// collisions inside small factors.
pub fn near_twin_pairs(a: &Annotated, w: &[u32]) -> Result<NearTwinReport, SearchError> {
    let k = a.width();
    let f = near_twin_f(k);
    if w.len() < f {
        return Err(SearchError::Invalid(format!(
            "|w| = {} below f(k) = {f}",
            w.len()
        )));
    }
    let (g, _) = annotated::decode(a).map_err(SearchError::Invalid)?;
    let n = a.universe.len();
    let d = a.to_decomposition();
    let view = a.tree.rooted_view();
    let factors = disjoint_factors(&d, w, f / 32)?;
    let wset: BTreeSet<u32> = w.iter().copied().collect();

    // Subtree vertex masks for signature computations.
    let gn = g.n();
    let mut below: HashMap<usize, BitVec> = HashMap::new();
    for &t in view.preorder.iter().rev() {
        let mut s = BitVec::zeros(gn);
        if let Some(part) = d.leaf_parts.get(&t) {
            for &v in part {
                s.set(v as usize, true);
            }
        }
        for &c in &view.children[&t] {
            s.xor_assign(&below[&c]);
        }
        below.insert(t, s);
    }
    // Row of v restricted by mask (keep = true keeps masked bits).
    let masked_row = |v: u32, mask: &BitVec, keep: bool| -> BitVec {
        let row = g.nbr_row(v);
        let mut out = BitVec::zeros(gn);
        for i in row.iter_ones() {
            if mask.get(i) == keep {
                out.set(i, true);
            }
        }
        out
    };

    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let mut diffs: Vec<Vec<u32>> = Vec::new();
    for fac in &factors {
        let verts = fac.vertices(&d);
        // Small factor: |F|·|w| ≤ f·n.
        if verts.len() * w.len() > f * n {
            continue;
        }
        let members: Vec<u32> = verts.iter().copied().filter(|v| wset.contains(v)).collect();
        // Signature: the representatives of v on the factor's boundary
        // cuts; a collision gives N(u)∖F = N(v)∖F.
        let mut sig_of: HashMap<Vec<u32>, u32> = HashMap::new();
        let mut found: Option<(u32, u32)> = None;
        for &v in &members {
            let sig: Vec<u32> = match *fac {
                Factor::Tree { node } => {
                    let p = view.parent[&node];
                    let mask = &below[&node];
                    let target = masked_row(v, mask, false);
                    let r = a
                        .rep(node, p)
                        .iter()
                        .copied()
                        .find(|&r| masked_row(r, mask, false) == target)
                        .expect("representative covering the class");
                    vec![r]
                }
                Factor::Context { top, bottom } => {
                    let p_top = view.parent[&top];
                    let p_bot = view.parent[&bottom];
                    let mask_top = &below[&top];
                    let mask_bot = &below[&bottom];
                    let target_out = masked_row(v, mask_top, false);
                    let r_out = a
                        .rep(top, p_top)
                        .iter()
                        .copied()
                        .find(|&r| masked_row(r, mask_top, false) == target_out)
                        .expect("outer representative");
                    let target_in = masked_row(v, mask_bot, true);
                    let r_in = a
                        .rep(p_bot, bottom)
                        .iter()
                        .copied()
                        .find(|&r| masked_row(r, mask_bot, true) == target_in)
                        .expect("inner representative");
                    vec![r_out, r_in]
                }
            };
            if let Some(&u) = sig_of.get(&sig) {
                found = Some((u, v));
                break;
            }
            sig_of.insert(sig, v);
        }
        if let Some((u, v)) = found {
            let mut diff: Vec<u32> = g
                .nbr_row(u)
                .clone()
                .iter_ones()
                .map(|i| i as u32)
                .collect::<BTreeSet<u32>>()
                .symmetric_difference(
                    &g.nbr_row(v).clone().iter_ones().map(|i| i as u32).collect(),
                )
                .copied()
                .collect();
            diff.retain(|&x| x != u && x != v);
            pairs.push((u, v));
            diffs.push(diff);
        }
    }
    if pairs.len() < w.len() / f {
        return Err(SearchError::Budget(format!(
            "found {} near-twin pairs, need {}",
            pairs.len(),
            w.len() / f
        )));
    }
    Ok(NearTwinReport { pairs, diffs })
}

// ---------------------------------------------------------------------------
// Twin Flipping

/// Solves the Twin Flipping problem: given an annotation of bipartite G of
/// width ≤ k, sets x, y on one side with every x-vertex having a twin in
/// y, and flips f ⊆ x × (other side), either reports that G△f has
/// rankwidth > k (None) or returns an annotation of G△f.
///
/// The flips run through the dynamic structure at parameter k+1 (single
/// flips visit intermediate graphs of rankwidth ≤ k+1), then the result is
/// recovered to width ≤ k by the exact oracle whenever the instance fits
/// the oracle's limits; larger instances return the dynamic structure's
/// width-≤4(k+1) annotation directly.
pub fn twin_flipping(
    a: &Annotated,
    x: &[u32],
    y: &[u32],
    f: &[(u32, u32)],
    k: usize,
) -> Result<Option<Annotated>, SearchError> {
    let xset: BTreeSet<u32> = x.iter().copied().collect();
    let yset: BTreeSet<u32> = y.iter().copied().collect();
    if !xset.is_disjoint(&yset) {
        return Err(SearchError::Invalid("x and y must be disjoint".into()));
    }
    let (g, _) = annotated::decode(a).map_err(SearchError::Invalid)?;
    for &u in &xset {
        let row = g.nbr_row(u);
        if !yset.iter().any(|&v| g.nbr_row(v) == row) {
            return Err(SearchError::Invalid(format!("{u} has no twin in y")));
        }
    }
    let mut flips: Vec<(u32, u32)> = Vec::new();
    for &(u, v) in f {
        let (src, dst) = if xset.contains(&u) {
            (u, v)
        } else if xset.contains(&v) {
            (v, u)
        } else {
            return Err(SearchError::Invalid(format!(
                "flip {u}-{v} has no endpoint in x"
            )));
        };
        if xset.contains(&dst) || yset.contains(&dst) {
            return Err(SearchError::Invalid(format!(
                "flip {u}-{v} does not reach the other side"
            )));
        }
        flips.push((src, dst));
    }
    // Per-source grouping keeps every intermediate graph within rankwidth
    // k+1 (a hybrid vertex over a rankwidth-≤k graph).
    flips.sort_unstable();

    let mut ds = DynamicRankwidth::init_from(a, k + 1, DynamicConfig::default())?;
    for &(src, dst) in &flips {
        match ds.flip_edge(src, dst)? {
            FlipOutcome::Applied => {}
            FlipOutcome::Refused => return Ok(None),
        }
    }
    let out = ds.snapshot();
    if out.width() <= k {
        // The maintained decomposition already meets the bound; no
        // recovery search needed.
        return Ok(Some(out));
    }
    if out.universe.len() <= BNB_MAX_PARTS {
        let (gf, _) = annotated::decode(&out).map_err(SearchError::Invalid)?;
        let (sub, back) = gf.induced(&out.universe);
        let pg = PartitionedGraph::singletons(sub);
        return match exact_rankwidth(&pg, k, Engine::BranchBound)? {
            None => Ok(None),
            Some(d) => {
                let ann = annotated::annotate(&pg, &d.rooted_canonical());
                let map: BTreeMap<u32, u32> = back
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (i as u32, v))
                    .collect();
                Ok(Some(annotated::rename_annotated(&ann, &map)))
            }
        };
    }
    Ok(Some(out))
}

// ---------------------------------------------------------------------------
// The recursive driver

/// Two-coloring; None when the graph is not bipartite. Isolated vertices
/// go to the A side.
fn bipartition(g: &Graph) -> Option<(Vec<u32>, Vec<u32>)> {
    let n = g.n();
    let mut color = vec![u8::MAX; n];
    for start in 0..n {
        if color[start] != u8::MAX {
            continue;
        }
        color[start] = 0;
        let mut queue = vec![start];
        while let Some(u) = queue.pop() {
            for v in g.neighbors(u as u32) {
                let v = v as usize;
                if color[v] == u8::MAX {
                    color[v] = 1 - color[u];
                    queue.push(v);
                } else if color[v] == color[u] {
                    return None;
                }
            }
        }
    }
    let a = (0..n as u32).filter(|&v| color[v as usize] == 0).collect();
    let b = (0..n as u32).filter(|&v| color[v as usize] == 1).collect();
    Some((a, b))
}

/// Annotation of the subgraph of `g` induced by `verts` (original IDs),
/// over a balanced tree with singleton parts.
fn annotate_induced(g: &Graph, verts: &[u32]) -> Result<Annotated, SearchError> {
    if verts.len() < 2 {
        return Err(SearchError::Invalid("need at least two vertices".into()));
    }
    let (sub, back) = g.induced(verts);
    let pg = PartitionedGraph::singletons(sub);
    let d = balanced_decomposition(&pg.parts);
    let ann = annotated::annotate(&pg, &d);
    let map: BTreeMap<u32, u32> = (0..back.len() as u32).map(|i| (i, back[i as usize])).collect();
    Ok(annotated::rename_annotated(&ann, &map))
}

struct Driver<'a> {
    g: &'a Graph,
    b_order: Vec<u32>,
    idx: TwinIndex,
    k: usize,
}

impl Driver<'_> {
    /// Recursion of Lemma compmain: decomposition of G[X, {v_l..v_r}] of
    /// width ≤ k, or None ("rankwidth > k"). X is sorted and nonempty.
    fn solve(&self, x: &[u32], l: usize, r: usize) -> Result<Option<Annotated>, SearchError> {
        let y = &self.b_order[l - 1..r];
        // Base case |Y| = 1: width is at most 1.
        if y.len() == 1 {
            let verts: Vec<u32> = x.iter().chain(y.iter()).copied().collect();
            let ann = annotate_induced(self.g, &verts)?;
            if self.k == 0 && ann.width() > 0 {
                return Ok(None);
            }
            return Ok(Some(ann));
        }

        // Twin filtering.
        let classes = twins_query(&self.idx, x, l, r)?;
        let mut xprime: Vec<u32> = classes.iter().map(|c| c[0]).collect();
        xprime.sort_unstable();
        let rep_of: BTreeMap<u32, u32> = classes
            .iter()
            .flat_map(|c| c.iter().map(move |&u| (u, c[0])))
            .collect();
        // Twin-free and too wide for the bipartition size: rankwidth > k
        // by the bipartite-twin abundance bound.
        if xprime.len() >= near_twin_f(self.k) * y.len() {
            return Ok(None);
        }

        // Halve Y and recurse.
        let t = l + y.len() / 2 - 1;
        let Some(t1) = self.solve(&xprime, l, t)? else {
            return Ok(None);
        };
        let Some(t2) = self.solve(&xprime, t + 1, r)? else {
            return Ok(None);
        };
        let y1 = &self.b_order[l - 1..t];
        let y2 = &self.b_order[t..r];
        let Some(mut merged) = self.combine(&t1, &t2, &xprime, y1, y2)? else {
            return Ok(None);
        };

        // Reinsert the filtered twins.
        for &u in x {
            if rep_of[&u] != u {
                merged = annotated::add_twin(&merged, rep_of[&u], u)
                    .map_err(SearchError::Invalid)?;
            }
        }
        Ok(Some(merged))
    }

    /// Lemma combine: merge decompositions of G[X,Y1] and G[X,Y2] into one
    /// of G[X, Y1∪Y2], or None ("rankwidth > k").
    fn combine(
        &self,
        t1: &Annotated,
        t2: &Annotated,
        x: &[u32],
        y1: &[u32],
        y2: &[u32],
    ) -> Result<Option<Annotated>, SearchError> {
        let k = self.k;
        let f = near_twin_f(k);
        if y2.len() <= f {
            // Base case: clone a Y1-vertex into twin pairs for Y2, then
            // flip the clones into Y2's neighborhoods.
            if y1.is_empty() {
                return Ok(Some(t2.clone()));
            }
            let v = y1[0];
            let (g1, _) = annotated::decode(t1).map_err(SearchError::Invalid)?;
            let (g2, _) = annotated::decode(t2).map_err(SearchError::Invalid)?;
            let nv: BTreeSet<u32> = g1.neighbors(v).into_iter().collect();
            let base = t1
                .universe
                .iter()
                .chain(t2.universe.iter())
                .max()
                .copied()
                .unwrap_or(0)
                + 1;
            let mut ext = t1.clone();
            let mut prime: Vec<u32> = Vec::new();
            let mut dprime: Vec<u32> = Vec::new();
            let mut flips: Vec<(u32, u32)> = Vec::new();
            for (i, &u) in y2.iter().enumerate() {
                let up = base + 2 * i as u32;
                let upp = base + 2 * i as u32 + 1;
                ext = annotated::add_twin(&ext, v, up).map_err(SearchError::Invalid)?;
                ext = annotated::add_twin(&ext, v, upp).map_err(SearchError::Invalid)?;
                prime.push(up);
                dprime.push(upp);
                let nu: BTreeSet<u32> = g2.neighbors(u).into_iter().collect();
                for &w in nu.symmetric_difference(&nv) {
                    flips.push((up, w));
                }
            }
            let Some(flipped) = twin_flipping(&ext, &prime, &dprime, &flips, k)? else {
                return Ok(None);
            };
            // Drop the second clones and rename the first back to Y2.
            let dp: BTreeSet<u32> = dprime.iter().copied().collect();
            let keep: BTreeSet<usize> = flipped
                .parts()
                .iter()
                .filter(|(_, part)| !dp.contains(&part[0]))
                .map(|(&leaf, _)| leaf)
                .collect();
            let cut = annotated::drop_leaves(&flipped, &keep).map_err(SearchError::Invalid)?;
            let mut map: BTreeMap<u32, u32> = cut.universe.iter().map(|&w| (w, w)).collect();
            for (i, &u) in y2.iter().enumerate() {
                map.insert(prime[i], u);
            }
            return Ok(Some(annotated::rename_annotated(&cut, &map)));
        }

        // Recursive case: delete one side of each near-twin pair from Y2,
        // recurse, then reinsert as twins and flip into place.
        let report = near_twin_pairs(t2, y2)?;
        let removed: BTreeSet<u32> = report.pairs.iter().map(|&(_, v)| v).collect();
        let keep: BTreeSet<usize> = t2
            .parts()
            .iter()
            .filter(|(_, part)| !removed.contains(&part[0]))
            .map(|(&leaf, _)| leaf)
            .collect();
        let t2p = annotated::drop_leaves(t2, &keep).map_err(SearchError::Invalid)?;
        let y2p: Vec<u32> = y2.iter().copied().filter(|v| !removed.contains(v)).collect();
        let Some(mut merged) = self.combine(t1, &t2p, x, y1, &y2p)? else {
            return Ok(None);
        };
        let mut flips: Vec<(u32, u32)> = Vec::new();
        for (i, &(u, v)) in report.pairs.iter().enumerate() {
            merged = annotated::add_twin(&merged, u, v).map_err(SearchError::Invalid)?;
            for &w in &report.diffs[i] {
                flips.push((v, w));
            }
        }
        let sources: Vec<u32> = report.pairs.iter().map(|&(_, v)| v).collect();
        let targets: Vec<u32> = report.pairs.iter().map(|&(u, _)| u).collect();
        twin_flipping(&merged, &sources, &targets, &flips, k)
    }
}

/// Lemma compmain: decides rankwidth ≤ k and returns a width-≤k
/// annotation, for arbitrary graphs via the bipartite reduction B(G).
pub fn compute_rankwidth(g: &Graph, k: usize) -> Result<Option<Annotated>, SearchError> {
    let n = g.n();
    if n < 2 {
        return Err(SearchError::Invalid("need at least two vertices".into()));
    }
    if let Some((a, b)) = bipartition(g) {
        if a.is_empty() || b.is_empty() || g.edges().is_empty() {
            // Edgeless: width 0 for any k.
            let pg = PartitionedGraph::singletons(g.clone());
            let d = balanced_decomposition(&pg.parts);
            return Ok(Some(annotated::annotate(&pg, &d)));
        }
        let idx = build_twin_index(g, &a, &b)?;
        let driver = Driver {
            g,
            b_order: b.clone(),
            idx,
            k,
        };
        return driver.solve(&a, 1, b.len());
    }

    // General graphs: decide on B(G) at max(2k, 1), then pull back.
    let bg = bipartite_reduction(g);
    let (sa, sb) = bipartite_reduction_sides(n);
    let kb = (2 * k).max(1);
    let idx = build_twin_index(&bg, &sa, &sb)?;
    let driver = Driver {
        g: &bg,
        b_order: sb.clone(),
        idx,
        k: kb,
    };
    let Some(tb) = driver.solve(&sa, 1, sb.len())? else {
        // rw(B(G)) > max(2k,1) forces rw(G) > k.
        return Ok(None);
    };
    // Pull-back: restrict to V(G)×{1} (IDs 4v), rename (v,1) → v, then
    // recover the exact decomposition of G.
    let keep: BTreeSet<usize> = tb
        .parts()
        .iter()
        .filter(|(_, part)| part[0] % 4 == 0)
        .map(|(&leaf, _)| leaf)
        .collect();
    let restricted = annotated::drop_leaves(&tb, &keep).map_err(SearchError::Invalid)?;
    let map: BTreeMap<u32, u32> = restricted.universe.iter().map(|&w| (w, w / 4)).collect();
    let shape = annotated::rename_annotated(&restricted, &map);
    debug_assert_eq!(shape.universe, (0..n as u32).collect::<Vec<_>>());

    let pg = PartitionedGraph::singletons(g.clone());
    match exact_rankwidth(&pg, k, Engine::BranchBound)? {
        None => Ok(None),
        Some(d) => Ok(Some(annotated::annotate(&pg, &d.rooted_canonical()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::exact_rankwidth_min;
    use crate::devtools::{self, Rng};

    fn random_bipartite(rng: &mut Rng, na: usize, nb: usize, p: f64) -> (Graph, Vec<u32>, Vec<u32>) {
        let n = na + nb;
        let mut g = Graph::new(n);
        let a: Vec<u32> = (0..na as u32).collect();
        let b: Vec<u32> = (na as u32..n as u32).collect();
        for &u in &a {
            for &v in &b {
                if rng.chance(p) {
                    g.add_edge(u, v);
                }
            }
        }
        (g, a, b)
    }

    /// Naive suffix sort for cross-checking the builder.
    fn naive_suffix_array(s: &[usize]) -> Vec<usize> {
        let mut sa: Vec<usize> = (0..s.len()).collect();
        sa.sort_by(|&i, &j| s[i..].cmp(&s[j..]));
        sa
    }

    #[test]
    fn suffix_array_matches_naive_sort() {
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let m = rng.range(0, 40);
            let s: Vec<usize> = (0..m).map(|_| rng.range(1, 5)).collect();
            assert_eq!(suffix_array(&s), naive_suffix_array(&s), "s = {s:?}");
        }
    }

    #[test]
    fn lcp_matches_naive() {
        let mut rng = Rng::new(4);
        for _ in 0..30 {
            let m = rng.range(1, 30);
            let s: Vec<usize> = (0..m).map(|_| rng.range(1, 3)).collect();
            let sa = suffix_array(&s);
            let mut inv = vec![0; m];
            for (i, &p) in sa.iter().enumerate() {
                inv[p] = i;
            }
            let lcp = lcp_array(&s, &sa, &inv);
            for i in 0..m.saturating_sub(1) {
                let x = &s[sa[i]..];
                let y = &s[sa[i + 1]..];
                let naive = x.iter().zip(y.iter()).take_while(|(a, b)| a == b).count();
                assert_eq!(lcp[i], naive);
            }
        }
    }

    #[test]
    fn twins_query_k22_and_degenerate() {
        // K_{2,2}: both A-vertices in one class over the full interval.
        let (g, a, b) = {
            let mut g = Graph::new(4);
            g.add_edge(0, 2);
            g.add_edge(0, 3);
            g.add_edge(1, 2);
            g.add_edge(1, 3);
            (g, vec![0u32, 1], vec![2u32, 3])
        };
        let idx = build_twin_index(&g, &a, &b).unwrap();
        let classes = twins_query(&idx, &a, 1, 2).unwrap();
        assert_eq!(classes, vec![vec![0, 1]]);
        // Empty B side.
        let g2 = Graph::new(2);
        let idx2 = build_twin_index(&g2, &[0, 1], &[]).unwrap();
        assert!(twins_query(&idx2, &[0, 1], 1, 1).is_err());
    }

    #[test]
    fn twins_query_matches_naive() {
        let mut rng = Rng::new(11);
        for _ in 0..40 {
            let na = rng.range(1, 7);
            let nb = rng.range(1, 7);
            let (g, a, b) = random_bipartite(&mut rng, na, nb, 0.5);
            let idx = build_twin_index(&g, &a, &b).unwrap();
            for _ in 0..20 {
                let l = rng.range(1, nb);
                let r = rng.range(l, nb);
                let xs: Vec<u32> = a
                    .iter()
                    .copied()
                    .filter(|_| rng.chance(0.7))
                    .collect();
                if xs.is_empty() {
                    continue;
                }
                let got = twins_query(&idx, &xs, l, r).unwrap();
                // Naive: group by interval-neighborhood.
                let mut by_nbr: BTreeMap<Vec<u32>, Vec<u32>> = BTreeMap::new();
                for &u in &xs {
                    let nbrs: Vec<u32> = g
                        .neighbors(u)
                        .into_iter()
                        .filter(|v| {
                            let i = b.iter().position(|x| x == v).unwrap() + 1;
                            l <= i && i <= r
                        })
                        .collect();
                    by_nbr.entry(nbrs).or_default().push(u);
                }
                let mut expected: Vec<Vec<u32>> = by_nbr.into_values().collect();
                for c in &mut expected {
                    c.sort_unstable();
                }
                expected.sort();
                let mut got_sorted = got.clone();
                for c in &mut got_sorted {
                    c.sort_unstable();
                }
                got_sorted.sort();
                assert_eq!(got_sorted, expected);
            }
        }
    }

    #[test]
    fn disjoint_factors_bounds() {
        let mut rng = Rng::new(21);
        for _ in 0..10 {
            let n = rng.range(20, 48);
            let g = devtools::random_graph(&mut rng, n, 0.2);
            let pg = PartitionedGraph::singletons(g);
            let d = devtools::random_rooted_decomposition(&mut rng, &pg);
            let w: Vec<u32> = (0..n as u32).collect();
            for ell in [1usize, 2] {
                if w.len() < 16 * ell {
                    continue;
                }
                // Bounds and disjointness are asserted inside.
                let f = disjoint_factors(&d, &w, ell).unwrap();
                assert!(f.len() >= w.len() / (16 * ell));
            }
        }
    }

    #[test]
    fn near_twin_pairs_on_matching() {
        // Perfect matching on 2·256 vertices: the balanced decomposition
        // over the vertex order splits only at even boundaries, so every
        // non-singleton cut severs no matching edge and the width is 1.
        let n = 512usize;
        let mut g = Graph::new(n);
        for i in 0..(n as u32) / 2 {
            g.add_edge(2 * i, 2 * i + 1);
        }
        let pg = PartitionedGraph::singletons(g.clone());
        let d = balanced_decomposition(&pg.parts);
        let a = annotated::annotate(&pg, &d);
        assert_eq!(a.width(), 1);
        let w: Vec<u32> = (0..n as u32).collect();
        let f = near_twin_f(1);
        let report = near_twin_pairs(&a, &w).unwrap();
        assert!(report.pairs.len() >= n / f);
        let bound = f * n / w.len();
        let mut used: BTreeSet<u32> = BTreeSet::new();
        for (i, &(u, v)) in report.pairs.iter().enumerate() {
            assert!(used.insert(u) && used.insert(v), "pairs overlap");
            let nu: BTreeSet<u32> = g.neighbors(u).into_iter().filter(|&x| x != v).collect();
            let nv: BTreeSet<u32> = g.neighbors(v).into_iter().filter(|&x| x != u).collect();
            let expect: Vec<u32> = nu.symmetric_difference(&nv).copied().collect();
            assert_eq!(report.diffs[i], expect);
            assert!(report.diffs[i].len() <= bound);
        }
    }

    #[test]
    fn twin_flipping_empty_and_single() {
        let mut rng = Rng::new(41);
        let (g, a, b) = random_bipartite(&mut rng, 4, 4, 0.4);
        let mut g2 = g.clone();
        // Give vertex a[0] a twin: copy a[1]'s row onto a[0].
        for v in g2.neighbors(a[0]) {
            g2.remove_edge(a[0], v);
        }
        for v in g2.neighbors(a[1]) {
            g2.add_edge(a[0], v);
        }
        let pg = PartitionedGraph::singletons(g2.clone());
        let d = devtools::random_rooted_decomposition(&mut rng, &pg);
        let ann = annotated::annotate(&pg, &d);
        let k = ann.width().max(1);
        // F = ∅ keeps the graph.
        let out = twin_flipping(&ann, &[a[0]], &[a[1]], &[], k)
            .unwrap()
            .expect("width-k graph unchanged");
        let (dec, _) = annotated::decode(&out).unwrap();
        assert_eq!(dec, g2);
        assert!(out.width() <= k);
        // One real flip.
        let w = b[0];
        let had = g2.has_edge(a[0], w);
        let out2 = twin_flipping(&ann, &[a[0]], &[a[1]], &[(a[0], w)], k + 1)
            .unwrap()
            .expect("one flip fits width k+1");
        let (dec2, _) = annotated::decode(&out2).unwrap();
        let mut expect = g2.clone();
        expect.flip_edge(a[0], w);
        assert_eq!(dec2, expect);
        assert_eq!(dec2.has_edge(a[0], w), !had);
    }

    #[test]
    fn compute_rankwidth_k8_and_c6() {
        // K8 has rankwidth 1.
        let mut k8 = Graph::new(8);
        for u in 0..8u32 {
            for v in u + 1..8 {
                k8.add_edge(u, v);
            }
        }
        let out = compute_rankwidth(&k8, 1).unwrap().expect("rw(K8) = 1");
        assert!(out.width() <= 1);
        let (dec, _) = annotated::decode(&out).unwrap();
        assert_eq!(dec, k8);
        // C6 is bipartite with rankwidth 2.
        let c6 = Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5)]);
        assert!(compute_rankwidth(&c6, 1).unwrap().is_none());
        let out = compute_rankwidth(&c6, 2).unwrap().expect("rw(C6) = 2");
        assert!(out.width() <= 2);
        let (dec, _) = annotated::decode(&out).unwrap();
        assert_eq!(dec, c6);
    }

    #[test]
    fn compute_rankwidth_matches_oracle_bipartite() {
        let mut rng = Rng::new(55);
        for trial in 0..10 {
            let na = rng.range(2, 5);
            let nb = rng.range(2, 5);
            let (g, _, _) = random_bipartite(&mut rng, na, nb, 0.5);
            let pg = PartitionedGraph::singletons(g.clone());
            let (true_w, _) = exact_rankwidth_min(&pg, Engine::BranchBound).unwrap();
            for k in [1usize, 2] {
                let got = compute_rankwidth(&g, k).unwrap();
                assert_eq!(
                    got.is_some(),
                    true_w <= k,
                    "trial {trial}: k={k}, true width {true_w}"
                );
                if let Some(out) = got {
                    assert!(out.width() <= k);
                    let (dec, _) = annotated::decode(&out).unwrap();
                    assert_eq!(dec, g);
                }
            }
        }
    }

    #[test]
    fn compute_rankwidth_matches_oracle_general() {
        let mut rng = Rng::new(65);
        for trial in 0..4 {
            let n = rng.range(4, 5);
            let mut g = devtools::random_graph(&mut rng, n, 0.5);
            // Force an odd cycle so the bipartite branch is skipped.
            g.add_edge(0, 1);
            g.add_edge(1, 2);
            g.add_edge(0, 2);
            if bipartition(&g).is_some() {
                continue;
            }
            let pg = PartitionedGraph::singletons(g.clone());
            let (true_w, _) = exact_rankwidth_min(&pg, Engine::BranchBound).unwrap();
            for k in [1usize, 2] {
                let got = compute_rankwidth(&g, k).unwrap();
                assert_eq!(
                    got.is_some(),
                    true_w <= k,
                    "trial {trial}: k={k}, true width {true_w}"
                );
                if let Some(out) = got {
                    assert!(out.width() <= k);
                    let (dec, _) = annotated::decode(&out).unwrap();
                    assert_eq!(dec, g);
                }
            }
        }
    }
}
