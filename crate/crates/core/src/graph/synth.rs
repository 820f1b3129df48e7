//! Seeded block-model generators for desk-scale experiments.

use super::{EdgePolicy, Graph, Labels};
use crate::error::{Error, Result};
use fcg_tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Block-model flavor. Both draw edges per pair with `p_in` inside a
/// block and `p_out` across blocks; the heterophilous variant insists
/// the cross-block probability dominates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Sbm,
    HeterophilousBlocks,
}

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub kind: SynthKind,
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of per-node feature jitter around the block mean.
    pub noise: f64,
    pub seed: u64,
}

impl SynthParams {
    fn validate(&self) -> Result<()> {
        if self.block_sizes.is_empty() || self.block_sizes.iter().any(|&b| b == 0) {
            return Err(Error::Generation("block sizes must all be >= 1".into()));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Generation(format!("{name}={p} outside [0, 1]")));
            }
        }
        if self.feature_dim == 0 {
            return Err(Error::Generation("feature_dim must be >= 1".into()));
        }
        if self.noise < 0.0 {
            return Err(Error::Generation("noise must be >= 0".into()));
        }
        if self.kind == SynthKind::HeterophilousBlocks && self.p_out <= self.p_in {
            return Err(Error::Generation(
                "heterophilous-blocks requires p_out > p_in".into(),
            ));
        }
        Ok(())
    }
}

/// Deterministic for a fixed seed. Node labels are block indices and
/// features are Gaussian around a per-block mean.
pub fn generate_synthetic<F: Scalar>(params: &SynthParams) -> Result<Graph<F>> {
    params.validate()?;
    let n: usize = params.block_sizes.iter().sum();
    let mut block_of = Vec::with_capacity(n);
    for (b, &size) in params.block_sizes.iter().enumerate() {
        block_of.extend(std::iter::repeat(b).take(size));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    // Block feature means, then per-node jitter.
    let normal = Normal::new(0.0f64, 1.0).expect("unit normal");
    let means: Vec<Vec<f64>> = (0..params.block_sizes.len())
        .map(|_| {
            (0..params.feature_dim)
                .map(|_| 2.0 * normal.sample(&mut rng))
                .collect()
        })
        .collect();
    let mut rows: Vec<Vec<F>> = Vec::with_capacity(n);
    for &b in &block_of {
        let row = means[b]
            .iter()
            .map(|&m| F::c(m + params.noise * normal.sample(&mut rng)))
            .collect();
        rows.push(row);
    }
    let features = Tensor::from_rows(&rows)?;

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if block_of[i] == block_of[j] {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    if edges.is_empty() {
        return Err(Error::Generation(
            "generated graph has no edges; raise p_in/p_out".into(),
        ));
    }

    Graph::new(
        &edges,
        features,
        Some(Labels::NodeClasses(block_of)),
        EdgePolicy::Strict,
    )
}
