//! On-disk cache for a computed spectral bundle (`spectral.bin`).
//!
//! Layout (integers and floats little-endian):
//!   magic `FCGSPC01`
//!   sha-256 of the edge list (32 bytes)
//!   u64 n, u64 k, u64 k_e
//!   f64 eigenvalues[k]
//!   f64 eigenvectors[n*k] (row-major)
//!
//! A cache is valid only for an exact match of edge hash, n, k and k_e;
//! anything else reads as a miss so the caller recomputes.

use super::SpectralBundle;
use crate::error::{Error, Result};
use crate::graph::Graph;
use fcg_tensor::{Scalar, Tensor};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"FCGSPC01";

/// Content hash of the canonical edge list (plus node count), used to
/// invalidate caches when the graph changes.
pub fn edge_list_hash<F: Scalar>(g: &Graph<F>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update((g.num_nodes() as u64).to_le_bytes());
    for &(i, j) in g.edges() {
        hasher.update((i as u64).to_le_bytes());
        hasher.update((j as u64).to_le_bytes());
    }
    hasher.finalize().into()
}

pub fn save_bundle<F: Scalar>(
    bundle: &SpectralBundle<F>,
    hash: &[u8; 32],
    path: &Path,
) -> Result<()> {
    let n = bundle.eigenvectors.shape()[0];
    let mut buf = Vec::with_capacity(8 + 32 + 24 + 8 * (bundle.k + n * bundle.k));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(hash);
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(bundle.k as u64).to_le_bytes());
    buf.extend_from_slice(&(bundle.k_e as u64).to_le_bytes());
    for v in &bundle.eigenvalues {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    for v in bundle.eigenvectors.to_f64_vec() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// `Ok(Some(bundle))` on a hit; `Ok(None)` when the file is absent,
/// stale, or malformed (callers recompute).
pub fn load_bundle<F: Scalar>(
    path: &Path,
    hash: &[u8; 32],
    n: usize,
    k: usize,
    k_e: usize,
) -> Result<Option<SpectralBundle<F>>> {
    if !path.exists() {
        return Ok(None);
    }
    let mut bytes = Vec::new();
    match std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)) {
        Ok(_) => {}
        Err(e) => return Err(Error::io(path, e)),
    }
    match parse(&bytes, hash, n, k, k_e) {
        Some(bundle) => Ok(Some(bundle)),
        None => {
            log::warn!(
                "spectral cache at {} is stale or malformed; recomputing",
                path.display()
            );
            Ok(None)
        }
    }
}

fn parse<F: Scalar>(
    bytes: &[u8],
    hash: &[u8; 32],
    n: usize,
    k: usize,
    k_e: usize,
) -> Option<SpectralBundle<F>> {
    let header = 8 + 32 + 24;
    if bytes.len() != header + 8 * (k + n * k) {
        return None;
    }
    if &bytes[..8] != MAGIC || &bytes[8..40] != hash {
        return None;
    }
    let u = |off: usize| u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
    if u(40) != n || u(48) != k || u(56) != k_e {
        return None;
    }
    let mut off = header;
    let mut f = || {
        let v = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        off += 8;
        v
    };
    let eigenvalues: Vec<F> = (0..k).map(|_| F::c(f())).collect();
    let data: Vec<f64> = (0..n * k).map(|_| f()).collect();
    let eigenvectors = Tensor::from_f64_slice(&[n, k], &data).ok()?;
    Some(SpectralBundle {
        eigenvalues,
        eigenvectors,
        k,
        k_e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_laplacian, EdgePolicy};
    use crate::spectral::{eigensolve_smallest, EigensolveOptions};

    fn small_graph() -> Graph<f64> {
        Graph::new(
            &[(0, 1), (1, 2), (2, 3), (0, 3)],
            Tensor::zeros(&[4, 1]),
            None,
            EdgePolicy::Strict,
        )
        .unwrap()
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let g = small_graph();
        let lap = build_laplacian(&g);
        let bundle = eigensolve_smallest(&lap, 3, 2, &EigensolveOptions::default()).unwrap();
        let hash = edge_list_hash(&g);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spectral.bin");
        save_bundle(&bundle, &hash, &path).unwrap();

        let loaded = load_bundle::<f64>(&path, &hash, 4, 3, 2).unwrap().unwrap();
        assert_eq!(loaded.eigenvalues, bundle.eigenvalues);
        for (a, b) in loaded
            .eigenvectors
            .data()
            .iter()
            .zip(bundle.eigenvectors.data())
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn changed_edges_invalidate_cache() {
        let g = small_graph();
        let lap = build_laplacian(&g);
        let bundle = eigensolve_smallest(&lap, 3, 2, &EigensolveOptions::default()).unwrap();
        let hash = edge_list_hash(&g);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spectral.bin");
        save_bundle(&bundle, &hash, &path).unwrap();

        let g2 = Graph::<f64>::new(
            &[(0, 1), (1, 2)],
            Tensor::zeros(&[4, 1]),
            None,
            EdgePolicy::Strict,
        )
        .unwrap();
        let other = edge_list_hash(&g2);
        assert!(load_bundle::<f64>(&path, &other, 4, 3, 2)
            .unwrap()
            .is_none());
        // Different K also misses.
        assert!(load_bundle::<f64>(&path, &hash, 4, 2, 2).unwrap().is_none());
    }
}
