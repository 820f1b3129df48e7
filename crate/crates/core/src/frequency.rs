//! Low-frequency contribution scores for edges and nodes.
//!
//! An edge's score averages, over m = 1..K, the fraction of its total
//! spectral mass `sum_n |u_ni * lambda_n * u_nj|` carried by the m
//! lowest-frequency components. Mass concentrated at the low end gives
//! scores near 1; mass at the high end approaches the floor 1/K. Node
//! scores are the mean over incident edges.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::SpectralBundle;
use fcg_tensor::Scalar;
use std::fmt::Write as _;
use std::path::Path;

/// Per-edge and per-node scores, aligned with the graph's canonical
/// edge list and node indices. Computed once during preprocessing and
/// immutable afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionScores<F> {
    pub edge: Vec<F>,
    pub node: Vec<F>,
}

/// Area under the partial-sum curve for one edge's term sequence
/// `t_n = |u_ni * lambda_n * u_nj|`, computed in a single prefix-sum
/// pass. A vanishing denominator scores 0: the edge carries no measured
/// low-frequency signal and gets minimal corruption priority.
pub fn contribution_from_terms<F: Scalar>(terms: &[F]) -> F {
    let k = terms.len();
    debug_assert!(k > 0);
    let total: F = terms.iter().copied().sum();
    if total <= F::zero() {
        return F::zero();
    }
    let mut prefix = F::zero();
    let mut acc = F::zero();
    for &t in terms {
        prefix += t;
        acc += prefix;
    }
    acc / (total * F::c(k as f64))
}

/// Edge scores over the `k` retained eigenpairs.
pub fn edge_contributions<F: Scalar>(bundle: &SpectralBundle<F>, g: &Graph<F>) -> Vec<F> {
    let u = &bundle.eigenvectors;
    let mut terms = vec![F::zero(); bundle.k];
    g.edges()
        .iter()
        .map(|&(i, j)| {
            for (n, t) in terms.iter_mut().enumerate() {
                *t = (u.get2(i, n) * bundle.eigenvalues[n] * u.get2(j, n)).abs();
            }
            contribution_from_terms(&terms)
        })
        .collect()
}

/// Node scores: mean of incident edge scores, 0 for isolated nodes.
pub fn node_contributions<F: Scalar>(edge_scores: &[F], g: &Graph<F>) -> Vec<F> {
    let n = g.num_nodes();
    let mut acc = vec![F::zero(); n];
    for (eid, &(i, j)) in g.edges().iter().enumerate() {
        acc[i] += edge_scores[eid];
        acc[j] += edge_scores[eid];
    }
    (0..n)
        .map(|i| {
            let d = g.degree(i);
            if d == 0 {
                F::zero()
            } else {
                acc[i] / F::c(d as f64)
            }
        })
        .collect()
}

pub fn compute_contributions<F: Scalar>(
    bundle: &SpectralBundle<F>,
    g: &Graph<F>,
) -> ContributionScores<F> {
    let edge = edge_contributions(bundle, g);
    let node = node_contributions(&edge, g);
    ContributionScores { edge, node }
}

/// Debug export: one `i,j,score` line per edge, then one `i,score` line
/// per node. `header` lines are prefixed with `#`.
pub fn write_contrib_csv<F: Scalar>(
    scores: &ContributionScores<F>,
    g: &Graph<F>,
    path: &Path,
    header: &str,
) -> Result<()> {
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for (eid, &(i, j)) in g.edges().iter().enumerate() {
        let _ = writeln!(out, "{i},{j},{}", scores.edge[eid].as_f64());
    }
    for (i, s) in scores.node.iter().enumerate() {
        let _ = writeln!(out, "{i},{}", s.as_f64());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
