//! Weighted sampling without replacement via exponential race keys.
//!
//! Each item draws `key_i = -ln(U_i) / w_i`; keeping the `T` smallest
//! keys is distributionally equivalent to `T` successive multinomial
//! draws without replacement with probabilities proportional to the
//! weights. Zero-weight items (infinite keys) become eligible only
//! after every positive-weight item is taken, ordered uniformly among
//! themselves.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Draw `t` distinct indices with probability proportional to `weights`.
pub fn sample_value_based(weights: &[f64], t: usize, seed: u64) -> Result<Vec<usize>> {
    let m = weights.len();
    if t > m {
        return Err(Error::Sampling(format!("cannot draw {t} of {m} items")));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Sampling(format!("invalid weight {w}")));
    }
    if t == 0 {
        return Ok(Vec::new());
    }

    let all_zero = weights.iter().all(|&w| w == 0.0);
    if all_zero {
        log::warn!("all sampling weights are zero; falling back to uniform");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u = 1.0 - rng.random::<f64>(); // (0, 1]
            let w = if all_zero { 1.0 } else { w };
            let key = if w > 0.0 { -u.ln() / w } else { f64::INFINITY };
            (key, u, i)
        })
        .collect();
    keyed.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.partial_cmp(&b.1).unwrap())
            .then(a.2.cmp(&b.2))
    });
    Ok(keyed[..t].iter().map(|&(_, _, i)| i).collect())
}

/// Ascending ranks with ties broken by item index: the smallest value
/// gets rank 1, the largest rank M.
pub fn rank_weights(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    for (pos, &idx) in order.iter().enumerate() {
        ranks[idx] = (pos + 1) as f64;
    }
    ranks
}

/// Rank-based draw: replace values by their ascending rank indices,
/// then sample exactly like the value-based strategy.
pub fn sample_rank_based(values: &[f64], t: usize, seed: u64) -> Result<Vec<usize>> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Sampling(format!("invalid value {v}")));
    }
    sample_value_based(&rank_weights(values), t, seed)
}
