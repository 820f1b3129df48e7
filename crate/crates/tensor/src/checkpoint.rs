//! Versioned binary checkpoint of a parameter store.
//!
//! Layout (all integers little-endian):
//!   magic `FCGCKPT1`
//!   u32 meta length, meta bytes (UTF-8, free-form run description)
//!   u32 parameter count, then per parameter:
//!     u32 name length, name bytes
//!     u8 rank, u64 dims[rank]
//!     f64 data (row-major)
//!
//! Values are stored as 64-bit floats regardless of the in-memory
//! scalar type, so an f64 store round-trips bit-for-bit.

use crate::error::{Result, TensorError};
use crate::optim::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"FCGCKPT1";

pub fn save<F: Scalar>(store: &ParamStore<F>, meta: &str, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    let meta_bytes = meta.as_bytes();
    buf.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta_bytes);
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.entries() {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.to_f64_vec() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load<F: Scalar>(path: &Path) -> Result<(ParamStore<F>, String)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cur.take(8)?;
    if magic != MAGIC {
        return Err(TensorError::Checkpoint(format!(
            "bad magic in {}",
            path.display()
        )));
    }
    let meta_len = cur.u32()? as usize;
    let meta = String::from_utf8(cur.take(meta_len)?.to_vec())
        .map_err(|e| TensorError::Checkpoint(format!("meta not UTF-8: {e}")))?;
    let count = cur.u32()? as usize;

    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|e| TensorError::Checkpoint(format!("name not UTF-8: {e}")))?;
        let rank = cur.u8()? as usize;
        if rank == 0 || rank > 3 {
            return Err(TensorError::Checkpoint(format!(
                "bad rank {rank} for `{name}`"
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(cur.f64()?);
        }
        store.add(name, Tensor::<F>::from_f64_slice(&shape, &data)?)?;
    }
    if cur.pos != bytes.len() {
        return Err(TensorError::Checkpoint("trailing bytes".into()));
    }
    Ok((store, meta))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorError::Checkpoint("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");

        let mut store = ParamStore::<f64>::new();
        store
            .add(
                "layer0.w",
                Tensor::new(&[2, 3], vec![0.1, -0.2, 0.3, 1e-300, 2.5, -7.0]).unwrap(),
            )
            .unwrap();
        store
            .add("token", Tensor::new(&[3], vec![0.0, -0.0, 42.0]).unwrap())
            .unwrap();

        save(&store, "cfg: test", &path).unwrap();
        let (loaded, meta) = load::<f64>(&path).unwrap();
        assert_eq!(meta, "cfg: test");
        assert_eq!(loaded.len(), 2);
        for ((_, a), (_, b)) in store.entries().zip(loaded.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            for (x, y) in a.value.data().iter().zip(b.value.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTMAGIC rest").unwrap();
        assert!(matches!(
            load::<f64>(&path),
            Err(TensorError::Checkpoint(_))
        ));
    }
}
