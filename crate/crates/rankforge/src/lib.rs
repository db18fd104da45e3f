//! Rank decompositions of graphs, end to end: GF(2) cut-rank, exact
//! small-scale rankwidth, annotated rank decompositions with
//! prefix-rebuilding updates, closure-based refinement, a dynamic structure
//! maintaining width ≤ 4k under edge flips, the twin machinery of the
//! almost-linear static algorithm, and cliquewidth-expression emission.

pub mod gf2;
pub mod graph;
pub mod tree;
pub mod decomposition;
pub mod annotated;
pub mod prefix_rebuild;
pub mod closure;
pub mod dynamic;
pub mod fastalg;
pub mod cliquewidth;
pub mod devtools;
