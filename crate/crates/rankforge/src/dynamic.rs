//! The dynamic rankwidth data structure: a rooted annotated rank
//! decomposition of width ≤ 4k of a dynamic graph, maintained under edge
//! flips via the pipeline edge-update description → translation → apply →
//! refine → height improvement. Refusals roll the state back through the
//! reverse description and leave it bit-identical.

use crate::annotated::{self, Annotated};
use crate::closure::{self, PotentialConfig, DEFAULT_CLOSURE_BUDGET};
use crate::decomposition::{
    exact_rankwidth, log_height_transform, Engine, SearchError,
};
use crate::graph::{FlipSet, Graph, PartitionedGraph};
use crate::prefix_rebuild;
use num_bigint::BigUint;
use std::collections::BTreeSet;

/// Structure-wide configuration.
#[derive(Clone, Debug)]
pub struct DynamicConfig {
    pub potential: PotentialConfig,
    /// Height threshold; None means the default max(8, ⌈4·log₂ n⌉).
    pub threshold: Option<usize>,
    /// Closure search candidate budget.
    pub budget: usize,
    /// Verification mode: keep a shadow graph and consult the exact
    /// oracle for the refusal decision.
    pub verification: bool,
}

impl Default for DynamicConfig {
    fn default() -> Self {
        DynamicConfig {
            potential: PotentialConfig::default(),
            threshold: None,
            budget: DEFAULT_CLOSURE_BUDGET,
            verification: false,
        }
    }
}

/// Outcome of a flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipOutcome {
    Applied,
    /// The resulting graph would have rankwidth more than k; the state is
    /// unchanged.
    Refused,
}

/// Dynamic rankwidth structure.
#[derive(Clone, Debug)]
pub struct DynamicRankwidth {
    k: usize,
    a: Annotated,
    shadow: Option<Graph>,
    phi: BigUint,
    cfg: DynamicConfig,
    /// Records written by the most recent flip (locality instrumentation).
    pub last_flip_writes: usize,
    /// Sizes |ū| of the descriptions applied by the most recent flip.
    pub last_flip_sizes: Vec<usize>,
}

use crate::decomposition::balanced_decomposition;

impl DynamicRankwidth {
    /// Initializes the structure for the n-vertex edgeless graph.
    pub fn init_empty(n: usize, k: usize, cfg: DynamicConfig) -> Result<Self, SearchError> {
        if n < 2 {
            return Err(SearchError::Invalid("need at least two vertices".into()));
        }
        let g = Graph::new(n);
        let pg = PartitionedGraph::singletons(g.clone());
        let d = balanced_decomposition(&pg.parts);
        let a = annotated::annotate(&pg, &d);
        let phi = closure::potential(&a, &cfg.potential);
        Ok(DynamicRankwidth {
            k,
            shadow: cfg.verification.then(|| g),
            phi,
            cfg,
            a,
            last_flip_writes: 0,
            last_flip_sizes: Vec::new(),
        })
    }

    /// Adopts an existing annotated decomposition of width ≤ 4k,
    /// rebalancing through the exact oracle and the log-height transform
    /// when the input is deeper than the threshold.
    pub fn init_from(a: &Annotated, k: usize, cfg: DynamicConfig) -> Result<Self, SearchError> {
        if a.width() > 4 * k {
            return Err(SearchError::Invalid(format!(
                "input width {} exceeds 4k = {}",
                a.width(),
                4 * k
            )));
        }
        let (g, _) = annotated::decode(a).map_err(SearchError::Invalid)?;
        // The universe need not be dense in 0..n, so the oracle runs over
        // the induced (renamed) subgraph and the result is renamed back.
        let (gi, back) = g.induced(&a.universe);
        let index: std::collections::BTreeMap<u32, u32> = a
            .universe
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, i as u32))
            .collect();
        let dense_parts: Vec<Vec<u32>> = a
            .parts()
            .values()
            .map(|p| p.iter().map(|v| index[v]).collect())
            .collect();
        let pg = PartitionedGraph::new(
            crate::graph::partition_graph(&gi, &dense_parts),
            dense_parts,
        )
        .map_err(SearchError::Invalid)?;
        let threshold = cfg.threshold.unwrap_or_else(|| closure::height_threshold(a.universe.len()));
        let root = a
            .tree
            .root()
            .ok_or_else(|| SearchError::Invalid("unrooted input".into()))?;
        let adopted = if a.tree.heights()[&root] <= threshold {
            a.clone()
        } else if pg.parts.len() <= crate::decomposition::BNB_MAX_PARTS {
            let d = exact_rankwidth(&pg, k, Engine::BranchBound)?
                .ok_or_else(|| SearchError::Invalid("rankwidth exceeds k".into()))?;
            let balanced = log_height_transform(&d);
            let dense = annotated::annotate(&pg, &balanced.decomposition);
            let back_map: std::collections::BTreeMap<u32, u32> = back
                .iter()
                .enumerate()
                .map(|(i, &v)| (i as u32, v))
                .collect();
            annotated::rename_annotated(&dense, &back_map)
        } else {
            // Too large for the exact oracle: flatten with closure-based
            // height reduction instead.
            let (flat, _) = closure::improve_height(a, k, &cfg.potential, threshold, cfg.budget)?;
            flat
        };
        let phi = closure::potential(&adopted, &cfg.potential);
        Ok(DynamicRankwidth {
            k,
            shadow: cfg.verification.then(|| g),
            phi,
            cfg,
            a: adopted,
            last_flip_writes: 0,
            last_flip_sizes: Vec::new(),
        })
    }

    /// Immutable copy of the current annotation.
    #[must_use]
    pub fn snapshot(&self) -> Annotated {
        self.a.clone()
    }

    #[must_use]
    pub fn width(&self) -> usize {
        self.a.width()
    }

    #[must_use]
    pub fn height(&self) -> usize {
        let root = self.a.tree.root().expect("rooted");
        self.a.tree.heights()[&root]
    }

    #[must_use]
    pub fn k(&self) -> usize {
        self.k
    }

    #[must_use]
    pub fn potential(&self) -> &BigUint {
        &self.phi
    }

    /// The current graph, decoded from the annotation.
    pub fn graph(&self) -> Result<Graph, SearchError> {
        annotated::decode(&self.a)
            .map(|(g, _)| g)
            .map_err(SearchError::Invalid)
    }

    fn threshold(&self) -> usize {
        self.cfg
            .threshold
            .unwrap_or_else(|| closure::height_threshold(self.a.universe.len()))
    }

    /// Flips the edge uv. On refusal the observable state is bit-identical
    /// to before the call.
    pub fn flip_edge(&mut self, u: u32, v: u32) -> Result<FlipOutcome, SearchError> {
        if u == v || !self.a.universe.contains(&u) || !self.a.universe.contains(&v) {
            return Err(SearchError::Invalid(format!(
                "flip endpoints {u}, {v} invalid"
            )));
        }
        let before = self.a.clone();
        self.last_flip_writes = 0;
        self.last_flip_sizes.clear();

        // Verification mode: the exact oracle decides the refusal.
        if let Some(shadow) = &self.shadow {
            let mut next = shadow.clone();
            next.flip_edge(u, v);
            let pg = PartitionedGraph::singletons(next);
            if exact_rankwidth(&pg, self.k, Engine::BranchBound)?.is_none() {
                return Ok(FlipOutcome::Refused);
            }
        }

        // Translate the flip into a prefix-rebuilding update and apply.
        let eu = prefix_rebuild::flip_update(&self.a, u, v).map_err(SearchError::Invalid)?;
        let pr = prefix_rebuild::translate_edge_update(&self.a, &eu)
            .map_err(SearchError::Invalid)?;
        let rev = prefix_rebuild::reverse(&self.a, &pr).map_err(SearchError::Invalid)?;
        let (a1, st1) = prefix_rebuild::apply(&self.a, &pr).map_err(SearchError::Invalid)?;
        self.last_flip_writes += st1.total();
        self.last_flip_sizes.push(pr.size());

        // Refine on the rebuild prefix; it contains every node whose width
        // the update may have raised above 4k.
        let prefix: BTreeSet<usize> = pr.new_nodes.clone();
        match closure::refine(&a1, &prefix, self.k, &self.cfg.potential, self.cfg.budget)? {
            None => {
                // Roll back through the reverse description.
                let (a0, st) = prefix_rebuild::apply(&a1, &rev).map_err(SearchError::Invalid)?;
                self.last_flip_writes += st.total();
                debug_assert!(a0 == before, "rollback must be bit-identical");
                self.a = a0;
                Ok(FlipOutcome::Refused)
            }
            Some(ur) => {
                let (a2, st2) = prefix_rebuild::apply(&a1, &ur).map_err(SearchError::Invalid)?;
                self.last_flip_writes += st2.total();
                self.last_flip_sizes.push(ur.size());
                let (a3, seq) = closure::improve_height(
                    &a2,
                    self.k,
                    &self.cfg.potential,
                    self.threshold(),
                    self.cfg.budget,
                )?;
                for s in &seq {
                    self.last_flip_sizes.push(s.size());
                }
                if let Some(shadow) = &mut self.shadow {
                    shadow.flip_edge(u, v);
                }
                self.phi = closure::potential(&a3, &self.cfg.potential);
                self.a = a3;
                Ok(FlipOutcome::Applied)
            }
        }
    }

    /// Refines on the full internal-node prefix. Returns `Refused` (state
    /// unchanged) when no width-≤4k rearrangement is found.
    pub fn refine_now(&mut self) -> Result<FlipOutcome, SearchError> {
        let leaves: BTreeSet<usize> = self.a.tree.leaves().into_iter().collect();
        let prefix: BTreeSet<usize> = self
            .a
            .tree
            .node_ids()
            .into_iter()
            .filter(|t| !leaves.contains(t))
            .collect();
        match closure::refine(&self.a, &prefix, self.k, &self.cfg.potential, self.cfg.budget)? {
            None => Ok(FlipOutcome::Refused),
            Some(u) => {
                let (a1, _) = prefix_rebuild::apply(&self.a, &u).map_err(SearchError::Invalid)?;
                self.phi = closure::potential(&a1, &self.cfg.potential);
                self.a = a1;
                Ok(FlipOutcome::Applied)
            }
        }
    }

    /// Runs closure-based height improvement down to the threshold.
    pub fn improve_height_now(&mut self) -> Result<(), SearchError> {
        let (a1, _) = closure::improve_height(
            &self.a,
            self.k,
            &self.cfg.potential,
            self.threshold(),
            self.cfg.budget,
        )?;
        self.phi = closure::potential(&a1, &self.cfg.potential);
        self.a = a1;
        Ok(())
    }

    /// Applies a batch of flips in order; the first refusal rolls back the
    /// whole batch.
    pub fn flip_batch(&mut self, f: &FlipSet) -> Result<FlipOutcome, SearchError> {
        let saved = self.clone();
        for &(u, v) in f.pairs() {
            match self.flip_edge(u, v) {
                Ok(FlipOutcome::Applied) => {}
                Ok(FlipOutcome::Refused) => {
                    *self = saved;
                    return Ok(FlipOutcome::Refused);
                }
                Err(e) => {
                    *self = saved;
                    return Err(e);
                }
            }
        }
        Ok(FlipOutcome::Applied)
    }
}
