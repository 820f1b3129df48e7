//! Immutable sparse undirected graphs with node features and labels.

mod io;
mod synth;

pub use io::{load_graph, save_graph, GraphFormat};
pub use synth::{generate_synthetic, SynthKind, SynthParams};

use crate::error::{Error, Result};
use fcg_tensor::{Scalar, Tensor};

/// How duplicate edges and self-loops in input are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgePolicy {
    /// Reject duplicates and self-loops (default).
    Strict,
    /// Canonicalize silently: drop self-loops, merge duplicates.
    Lenient,
}

/// Node or graph-level supervision attached to a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels<F> {
    /// One integer class per node.
    NodeClasses(Vec<usize>),
    /// One real-valued target per node.
    NodeTargets(Vec<F>),
    /// A single class for the whole graph.
    GraphClass(usize),
    /// A single real target for the whole graph.
    GraphTarget(F),
}

/// Undirected simple graph: canonical edge list, CSR adjacency, and an
/// `N x d` feature matrix. Immutable after construction and safe to
/// share read-only across workers.
#[derive(Debug, Clone)]
pub struct Graph<F: Scalar> {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    features: Tensor<F>,
    labels: Option<Labels<F>>,
}

impl<F: Scalar> Graph<F> {
    /// Build and validate. Edges are stored once each in canonical
    /// `(min, max)` order, sorted; the adjacency is symmetric with a
    /// zero diagonal by construction.
    pub fn new(
        raw_edges: &[(usize, usize)],
        features: Tensor<F>,
        labels: Option<Labels<F>>,
        policy: EdgePolicy,
    ) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Shape(format!(
                "feature matrix must be rank 2, got shape {:?}",
                features.shape()
            )));
        }
        let num_nodes = features.shape()[0];

        let mut edges = Vec::with_capacity(raw_edges.len());
        for &(i, j) in raw_edges {
            if i >= num_nodes {
                return Err(Error::Bounds {
                    index: i,
                    num_nodes,
                });
            }
            if j >= num_nodes {
                return Err(Error::Bounds {
                    index: j,
                    num_nodes,
                });
            }
            if i == j {
                match policy {
                    EdgePolicy::Strict => {
                        return Err(Error::Graph(format!("self-loop at node {i}")));
                    }
                    EdgePolicy::Lenient => continue,
                }
            }
            edges.push((i.min(j), i.max(j)));
        }
        edges.sort_unstable();
        let before = edges.len();
        edges.dedup();
        if policy == EdgePolicy::Strict && edges.len() != before {
            return Err(Error::Graph("duplicate undirected edge in input".into()));
        }

        if let Some(labels) = &labels {
            let expect = match labels {
                Labels::NodeClasses(v) => Some(v.len()),
                Labels::NodeTargets(v) => Some(v.len()),
                _ => None,
            };
            if let Some(len) = expect {
                if len != num_nodes {
                    return Err(Error::Shape(format!("{len} labels for {num_nodes} nodes")));
                }
            }
        }

        // CSR over both directions.
        let mut deg = vec![0usize; num_nodes];
        for &(i, j) in &edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for d in &deg {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut cursor = offsets.clone();
        let mut neighbors = vec![0usize; 2 * edges.len()];
        for &(i, j) in &edges {
            neighbors[cursor[i]] = j;
            cursor[i] += 1;
            neighbors[cursor[j]] = i;
            cursor[j] += 1;
        }
        for i in 0..num_nodes {
            neighbors[offsets[i]..offsets[i + 1]].sort_unstable();
        }

        Ok(Graph {
            num_nodes,
            edges,
            offsets,
            neighbors,
            features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical `(min, max)` edge list, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes).map(|i| self.degree(i)).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edge_id(i, j).is_some()
    }

    /// Index of the canonical edge `(min,max)` in [`Graph::edges`].
    pub fn edge_id(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok()
    }

    pub fn features(&self) -> &Tensor<F> {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn labels(&self) -> Option<&Labels<F>> {
        self.labels.as_ref()
    }

    /// Node classes, if this dataset carries them.
    pub fn node_classes(&self) -> Option<&[usize]> {
        match &self.labels {
            Some(Labels::NodeClasses(v)) => Some(v),
            _ => None,
        }
    }
}

/// Degree vector and normalized Laplacian `L = I - D^{-1/2} A D^{-1/2}`
/// in CSR form. Rows of isolated nodes use the convention
/// `d^{-1/2} = 0`, leaving `L_ii = 1` with no off-diagonal entries.
#[derive(Debug, Clone)]
pub struct LaplacianView<F> {
    n: usize,
    degrees: Vec<usize>,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<F>,
}

pub fn build_laplacian<F: Scalar>(g: &Graph<F>) -> LaplacianView<F> {
    let n = g.num_nodes();
    let degrees = g.degrees();
    let inv_sqrt: Vec<F> = degrees
        .iter()
        .map(|&d| {
            if d == 0 {
                F::zero()
            } else {
                F::one() / F::c(d as f64).sqrt()
            }
        })
        .collect();

    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    offsets.push(0);
    for i in 0..n {
        // Diagonal first, then neighbors in ascending order.
        let mut row: Vec<(usize, F)> = Vec::with_capacity(g.degree(i) + 1);
        row.push((i, F::one()));
        for &j in g.neighbors(i) {
            row.push((j, -inv_sqrt[i] * inv_sqrt[j]));
        }
        row.sort_unstable_by_key(|&(c, _)| c);
        for (c, v) in row {
            cols.push(c);
            vals.push(v);
        }
        offsets.push(cols.len());
    }

    LaplacianView {
        n,
        degrees,
        offsets,
        cols,
        vals,
    }
}

impl<F: Scalar> LaplacianView<F> {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn matvec(&self, x: &[F], out: &mut [F]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut acc = F::zero();
            for k in self.offsets[i]..self.offsets[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            out[i] = acc;
        }
    }

    pub fn to_dense(&self) -> Tensor<F> {
        let mut dense = Tensor::zeros(&[self.n, self.n]);
        for i in 0..self.n {
            for k in self.offsets[i]..self.offsets[i + 1] {
                dense.set2(i, self.cols[k], self.vals[k]);
            }
        }
        dense
    }

    pub fn entry(&self, i: usize, j: usize) -> F {
        for k in self.offsets[i]..self.offsets[i + 1] {
            if self.cols[k] == j {
                return self.vals[k];
            }
        }
        F::zero()
    }
}
