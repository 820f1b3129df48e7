//! Lanczos iteration with full re-orthogonalization and deflated
//! restarts for the smallest eigenpairs of a sparse symmetric matrix.
//!
//! A single Krylov pass finds at most one eigenvector per eigenspace,
//! so repeated eigenvalues would be silently skipped. The driver
//! therefore collects converged Ritz pairs, deflates them, and starts
//! another pass with a fresh random vector; once `k` pairs are held, a
//! final deflated pass certifies that no remaining eigenvalue lies
//! below the k-th collected one.

use super::dense;
use crate::error::{Error, Result};
use crate::graph::LaplacianView;
use fcg_tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_PASSES: usize = 16;

/// Smallest `k` eigenpairs of `lap`, eigenvalues ascending.
///
/// Runs deflated Lanczos passes until `k` converged pairs are held and
/// a further pass shows the remaining spectrum starts above the k-th
/// value (or the whole space is exhausted).
pub fn smallest<F: Scalar>(
    lap: &LaplacianView<F>,
    k: usize,
    seed: u64,
    tol: F,
    max_dim: usize,
) -> Result<(Vec<F>, Tensor<F>)> {
    let n = lap.n();
    let mut found: Vec<(F, Vec<F>)> = Vec::new();
    let mut certified = false;

    for pass in 0..MAX_PASSES {
        let remaining = n - found.len();
        if remaining == 0 {
            certified = true; // full spectrum in hand
            break;
        }
        let missing = k.saturating_sub(found.len());
        let m = (2 * missing.max(1) + 20 + 10 * pass)
            .min(remaining)
            .min(max_dim);

        let pairs = deflated_pass(lap, m, seed.wrapping_add(pass as u64), &found, tol)?;
        let pass_min = pairs.first().map(|p| p.0);
        for (val, vec, _) in pairs {
            found.push((val, vec));
        }
        found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        if found.len() >= k {
            // The pass ran against everything previously found, so its
            // smallest converged value bounds what is still missing.
            // (When it interleaves below the k-th value we keep going.)
            if let Some(v) = pass_min {
                if v > found[k - 1].0 + tol {
                    certified = true;
                    break;
                }
            }
        }
    }

    if found.len() < k || !certified {
        let worst = worst_residual_of(lap, &found);
        return Err(Error::Spectral {
            residual: worst.as_f64(),
            iters: MAX_PASSES,
        });
    }

    found.truncate(k);
    let vals: Vec<F> = found.iter().map(|p| p.0).collect();
    let mut vecs = Tensor::zeros(&[n, k]);
    for (col, (_, v)) in found.iter().enumerate() {
        for i in 0..n {
            vecs.set2(i, col, v[i]);
        }
    }
    Ok((vals, vecs))
}

fn worst_residual_of<F: Scalar>(lap: &LaplacianView<F>, found: &[(F, Vec<F>)]) -> F {
    let n = lap.n();
    let mut lv = vec![F::zero(); n];
    let mut worst = F::infinity();
    if !found.is_empty() {
        worst = F::zero();
        for (val, vec) in found {
            lap.matvec(vec, &mut lv);
            let mut acc = F::zero();
            for i in 0..n {
                let r = lv[i] - *val * vec[i];
                acc += r * r;
            }
            worst = worst.max(acc.sqrt());
        }
    }
    worst
}

/// One Lanczos pass on the operator deflated against `deflate`,
/// returning converged Ritz pairs `(value, vector, residual)` sorted
/// ascending by value.
fn deflated_pass<F: Scalar>(
    lap: &LaplacianView<F>,
    m: usize,
    seed: u64,
    deflate: &[(F, Vec<F>)],
    tol: F,
) -> Result<Vec<(F, Vec<F>, F)>> {
    let n = lap.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = m.max(1);

    let orth_deflate = |w: &mut Vec<F>| {
        for (_, v) in deflate {
            let proj = dot(w, v);
            for (wi, vi) in w.iter_mut().zip(v) {
                *wi -= proj * *vi;
            }
        }
    };

    let mut basis: Vec<Vec<F>> = Vec::with_capacity(m);
    let mut alpha: Vec<F> = Vec::with_capacity(m);
    let mut beta: Vec<F> = Vec::with_capacity(m);
    let breakdown = F::epsilon().sqrt() * F::c(n as f64);

    let mut v = match fresh_direction(&mut rng, &basis, deflate, n) {
        Some(v) => v,
        None => return Ok(Vec::new()),
    };
    let mut w = vec![F::zero(); n];

    while alpha.len() < m {
        basis.push(v.clone());
        let j = basis.len() - 1;

        lap.matvec(&v, &mut w);
        if j > 0 && beta[j - 1] > F::zero() {
            let b = beta[j - 1];
            for (wi, pi) in w.iter_mut().zip(&basis[j - 1]) {
                *wi -= b * *pi;
            }
        }
        let a = dot(&w, &v);
        alpha.push(a);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= a * *vi;
        }
        for _ in 0..2 {
            orth_deflate(&mut w);
            for prev in &basis {
                let proj = dot(&w, prev);
                for (wi, pi) in w.iter_mut().zip(prev) {
                    *wi -= proj * *pi;
                }
            }
        }
        if alpha.len() == m {
            break;
        }
        let b = dot(&w, &w).sqrt();
        if b < breakdown {
            beta.push(F::zero());
            match fresh_direction(&mut rng, &basis, deflate, n) {
                Some(fresh) => v = fresh,
                None => break,
            }
        } else {
            beta.push(b);
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = *wi / b;
            }
        }
    }

    let mdim = alpha.len();
    if mdim == 0 {
        return Ok(Vec::new());
    }
    let mut t = Tensor::<F>::zeros(&[mdim, mdim]);
    for (i, &a) in alpha.iter().enumerate() {
        t.set2(i, i, a);
    }
    for (i, &b) in beta.iter().enumerate().take(mdim.saturating_sub(1)) {
        t.set2(i, i + 1, b);
        t.set2(i + 1, i, b);
    }
    let (tvals, tvecs) = dense::eigh(&t)?;

    let mut out = Vec::new();
    let mut lv = vec![F::zero(); n];
    for col in 0..mdim {
        // Assemble the Ritz vector.
        let mut u = vec![F::zero(); n];
        for (j, base) in basis.iter().enumerate() {
            let s = tvecs.get2(j, col);
            if s == F::zero() {
                continue;
            }
            for i in 0..n {
                u[i] += s * base[i];
            }
        }
        let norm = dot(&u, &u).sqrt();
        if norm <= F::zero() {
            continue;
        }
        for x in &mut u {
            *x /= norm;
        }
        lap.matvec(&u, &mut lv);
        let mut acc = F::zero();
        for i in 0..n {
            let r = lv[i] - tvals[col] * u[i];
            acc += r * r;
        }
        let resid = acc.sqrt();
        if resid <= tol {
            out.push((tvals[col], u, resid));
        }
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(out)
}

/// Random unit vector orthogonal to both the deflation set and the
/// current basis; `None` when the remaining space is exhausted.
fn fresh_direction<F: Scalar>(
    rng: &mut ChaCha8Rng,
    basis: &[Vec<F>],
    deflate: &[(F, Vec<F>)],
    n: usize,
) -> Option<Vec<F>> {
    for _ in 0..16 {
        let mut v: Vec<F> = (0..n).map(|_| F::c(rng.random::<f64>() - 0.5)).collect();
        for (_, d) in deflate {
            let proj = dot(&v, d);
            for (vi, di) in v.iter_mut().zip(d) {
                *vi -= proj * *di;
            }
        }
        for prev in basis {
            let proj = dot(&v, prev);
            for (vi, pi) in v.iter_mut().zip(prev) {
                *vi -= proj * *pi;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > F::c(1e-6) {
            for vi in &mut v {
                *vi /= norm;
            }
            return Some(v);
        }
    }
    None
}

fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(super) fn worst_residual<F: Scalar>(lap: &LaplacianView<F>, vals: &[F], vecs: &Tensor<F>) -> F {
    let n = lap.n();
    let mut worst = F::zero();
    let mut col = vec![F::zero(); n];
    let mut lv = vec![F::zero(); n];
    for (kk, &lambda) in vals.iter().enumerate() {
        for i in 0..n {
            col[i] = vecs.get2(i, kk);
        }
        lap.matvec(&col, &mut lv);
        let mut acc = F::zero();
        for i in 0..n {
            let r = lv[i] - lambda * col[i];
            acc += r * r;
        }
        worst = worst.max(acc.sqrt());
    }
    worst
}
