//! Corruption plans: sampled node/edge item sets and the three
//! corrupted graph views built from them.

mod sampling;

pub use sampling::{rank_weights, sample_rank_based, sample_value_based};

use crate::error::{Error, Result};
use crate::frequency::ContributionScores;
use crate::graph::Graph;
use fcg_tensor::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ItemKind {
    Node,
    Edge,
    Mixed,
}

/// A typed set of sampled nodes and/or canonical edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ItemSet {
    pub kind: ItemKind,
    pub nodes: BTreeSet<usize>,
    pub edges: BTreeSet<(usize, usize)>,
}

impl ItemSet {
    fn nodes_only(nodes: BTreeSet<usize>) -> Self {
        ItemSet {
            kind: ItemKind::Node,
            nodes,
            edges: BTreeSet::new(),
        }
    }

    fn edges_only(edges: BTreeSet<(usize, usize)>) -> Self {
        ItemSet {
            kind: ItemKind::Edge,
            nodes: BTreeSet::new(),
            edges,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len() + self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }
}

/// The three sampled item sets driving one epoch's corruption, plus the
/// seeds that produced them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorruptionPlan {
    /// Union of value- and rank-based node draws.
    pub s_n: ItemSet,
    /// Union of value- and rank-based edge draws.
    pub s_e: ItemSet,
    /// Union of the two intersections (nodes and edges).
    pub s_c: ItemSet,
    pub r_n: f64,
    pub r_e: f64,
    pub seed: u64,
    /// Sub-seeds for the P_N, Q_N, P_E, Q_E draws, in that order.
    pub sub_seeds: [u64; 4],
}

/// Knobs for the ablation variants.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlanOptions {
    /// Replace node contribution weights with uniform weights.
    pub uniform_nodes: bool,
    /// Replace edge contribution weights with uniform weights.
    pub uniform_edges: bool,
    /// Skip union/intersection combination: the value-based draws
    /// corrupt the input views and the rank-based draws corrupt the
    /// contrast view.
    pub separate_views: bool,
}

/// `T = round(r * m)` with half-up rounding, clamped to `[0, m]`.
fn sample_count(rate: f64, m: usize) -> usize {
    ((rate * m as f64 + 0.5).floor() as usize).min(m)
}

/// Four seeded draws (value/rank over nodes/edges) combined into the
/// three item sets. Sub-seeds derive deterministically from `seed`.
pub fn build_plan<F: Scalar>(
    scores: &ContributionScores<F>,
    g: &Graph<F>,
    r_n: f64,
    r_e: f64,
    seed: u64,
    opts: PlanOptions,
) -> Result<CorruptionPlan> {
    for (name, r) in [("r_n", r_n), ("r_e", r_e)] {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Config(format!("{name}={r} outside [0, 1]")));
        }
    }
    let n = g.num_nodes();
    let ne = g.num_edges();
    let t_n = sample_count(r_n, n);
    let t_e = sample_count(r_e, ne);

    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let sub_seeds: [u64; 4] = std::array::from_fn(|_| seeder.random());

    let node_weights: Vec<f64> = if opts.uniform_nodes {
        vec![1.0; n]
    } else {
        scores.node.iter().map(|v| v.as_f64()).collect()
    };
    let edge_weights: Vec<f64> = if opts.uniform_edges {
        vec![1.0; ne]
    } else {
        scores.edge.iter().map(|v| v.as_f64()).collect()
    };

    let p_n: BTreeSet<usize> = sample_value_based(&node_weights, t_n, sub_seeds[0])?
        .into_iter()
        .collect();
    let q_n: BTreeSet<usize> = if opts.uniform_nodes {
        sample_value_based(&node_weights, t_n, sub_seeds[1])?
    } else {
        sample_rank_based(&node_weights, t_n, sub_seeds[1])?
    }
    .into_iter()
    .collect();
    let p_e_idx = sample_value_based(&edge_weights, t_e, sub_seeds[2])?;
    let q_e_idx = if opts.uniform_edges {
        sample_value_based(&edge_weights, t_e, sub_seeds[3])?
    } else {
        sample_rank_based(&edge_weights, t_e, sub_seeds[3])?
    };
    let edge_at = |idx: Vec<usize>| -> BTreeSet<(usize, usize)> {
        idx.into_iter().map(|eid| g.edges()[eid]).collect()
    };
    let p_e = edge_at(p_e_idx);
    let q_e = edge_at(q_e_idx);

    let plan = if opts.separate_views {
        CorruptionPlan {
            s_n: ItemSet::nodes_only(p_n),
            s_e: ItemSet::edges_only(p_e),
            s_c: ItemSet {
                kind: ItemKind::Mixed,
                nodes: q_n,
                edges: q_e,
            },
            r_n,
            r_e,
            seed,
            sub_seeds,
        }
    } else {
        let union_n: BTreeSet<usize> = p_n.union(&q_n).copied().collect();
        let inter_n: BTreeSet<usize> = p_n.intersection(&q_n).copied().collect();
        let union_e: BTreeSet<(usize, usize)> = p_e.union(&q_e).copied().collect();
        let inter_e: BTreeSet<(usize, usize)> = p_e.intersection(&q_e).copied().collect();
        CorruptionPlan {
            s_n: ItemSet::nodes_only(union_n),
            s_e: ItemSet::edges_only(union_e),
            s_c: ItemSet {
                kind: ItemKind::Mixed,
                nodes: inter_n,
                edges: inter_e,
            },
            r_n,
            r_e,
            seed,
            sub_seeds,
        }
    };
    Ok(plan)
}

/// Which corrupted view to materialize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    /// Feature masking only.
    Nodes,
    /// Edge dropping only.
    Edges,
    /// Both, from the combined set.
    Combined,
}

/// A corrupted graph: masked node set and retained edge set over a base
/// graph. Feature substitution is symbolic; the learnable mask token
/// itself lives with the model parameters.
#[derive(Debug, Clone)]
pub struct CorruptedGraph<'g, F: Scalar> {
    pub base: &'g Graph<F>,
    /// Sorted masked node indices.
    pub masked_nodes: Vec<usize>,
    /// Retained canonical edges, sorted.
    pub edges: Vec<(usize, usize)>,
}

pub fn materialize<'g, F: Scalar>(
    plan: &CorruptionPlan,
    g: &'g Graph<F>,
    view: View,
) -> CorruptedGraph<'g, F> {
    let empty_nodes = BTreeSet::new();
    let empty_edges = BTreeSet::new();
    let (masked, dropped) = match view {
        View::Nodes => (&plan.s_n.nodes, &empty_edges),
        View::Edges => (&empty_nodes, &plan.s_e.edges),
        View::Combined => (&plan.s_c.nodes, &plan.s_c.edges),
    };
    let masked_nodes: Vec<usize> = masked.iter().copied().collect();
    let edges: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|e| !dropped.contains(e))
        .collect();
    CorruptedGraph {
        base: g,
        masked_nodes,
        edges,
    }
}

/// Debug export of a plan (item sets plus sub-seeds).
pub fn write_plan_json(plan: &CorruptionPlan, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(plan)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}
