//! Deterministic helpers for tests and the acceptance suite. Nothing
//! here is used by the pipeline itself, so oracle code stays
//! independent of the implementation paths it checks.

use crate::graph::{EdgePolicy, Graph};
use fcg_tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Erdős–Rényi graph with random features, deterministic per seed.
pub fn gnp_graph<F: Scalar>(n: usize, p: f64, feature_dim: usize, seed: u64) -> Graph<F> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let rows: Vec<Vec<F>> = (0..n)
        .map(|_| {
            (0..feature_dim)
                .map(|_| F::c(rng.random::<f64>() * 2.0 - 1.0))
                .collect()
        })
        .collect();
    let features = Tensor::from_rows(&rows).unwrap();
    Graph::new(&edges, features, None, EdgePolicy::Strict).unwrap()
}

/// Exact per-item inclusion probabilities for weighted sampling without
/// replacement (successive multinomial draws), by enumerating every
/// ordered draw sequence. Exponential in `t`; intended for item counts
/// up to ~6 and `t` up to ~3.
pub fn exact_inclusion_probabilities(weights: &[f64], t: usize) -> Vec<f64> {
    let m = weights.len();
    let mut inclusion = vec![0.0; m];
    let mut chosen: Vec<usize> = Vec::with_capacity(t);
    recurse(weights, t, 1.0, &mut chosen, &mut inclusion);
    inclusion
}

fn recurse(
    weights: &[f64],
    remaining: usize,
    prob: f64,
    chosen: &mut Vec<usize>,
    inclusion: &mut [f64],
) {
    if remaining == 0 {
        for &i in chosen.iter() {
            inclusion[i] += prob;
        }
        return;
    }
    let mass: f64 = weights
        .iter()
        .enumerate()
        .filter(|(i, _)| !chosen.contains(i))
        .map(|(_, &w)| w)
        .sum();
    if mass <= 0.0 {
        // Only zero-weight items left: they are drawn uniformly.
        let left: Vec<usize> = (0..weights.len()).filter(|i| !chosen.contains(i)).collect();
        let p = prob / left.len() as f64;
        for &i in &left {
            chosen.push(i);
            recurse(weights, remaining - 1, p, chosen, inclusion);
            chosen.pop();
        }
        return;
    }
    for i in 0..weights.len() {
        if chosen.contains(&i) || weights[i] <= 0.0 {
            continue;
        }
        chosen.push(i);
        recurse(
            weights,
            remaining - 1,
            prob * weights[i] / mass,
            chosen,
            inclusion,
        );
        chosen.pop();
    }
}
