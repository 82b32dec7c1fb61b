//! Binary parameter checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        8 bytes  "RFCKPT01"
//! count        u32      number of tensors
//! index        count entries, in store order:
//!   name_len   u16
//!   name       name_len bytes, UTF-8
//!   ndim       u8
//!   dims       ndim x u64
//!   offset     u64      first element, counted in f64 values from the payload start
//! payload_len  u64      number of f64 values
//! payload      payload_len x f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::{AdError, ParamStore, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RFCKPT01";

fn bad(msg: impl Into<String>) -> AdError {
    AdError::Checkpoint(msg.into())
}

/// Serializes every entry of the store (trainable or not) by name.
pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<(), AdError> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&(store.len() as u32).to_le_bytes())?;
    let mut offset = 0u64;
    for (_, p) in store.iter() {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len()).map_err(|_| bad("parameter name too long"))?;
        out.write_all(&name_len.to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&[p.value.shape().len() as u8])?;
        for &d in p.value.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        out.write_all(&offset.to_le_bytes())?;
        offset += p.value.len() as u64;
    }
    out.write_all(&offset.to_le_bytes())?;
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<(), AdError> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AdError> {
        if self.0.len() < n {
            return Err(bad("truncated file"));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64, AdError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>, AdError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor(&bytes);
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let count = u32::from_le_bytes(c.take(4)?.try_into().expect("4 bytes")) as usize;
    let mut index = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
        let ndim = c.take(1)?[0] as usize;
        let dims = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let offset = c.u64()? as usize;
        index.push((name, dims, offset));
    }
    let total = c.u64()? as usize;
    let payload = c.take(total.checked_mul(8).ok_or_else(|| bad("payload too large"))?)?;
    if !c.0.is_empty() {
        return Err(bad("trailing bytes"));
    }
    let values: Vec<f64> = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    index
        .into_iter()
        .map(|(name, dims, offset)| {
            let n: usize = dims.iter().product();
            let data = values.get(offset..offset + n).ok_or_else(|| bad(format!("`{name}` exceeds payload")))?;
            Ok((name, Tensor::new(dims, data.to_vec())?))
        })
        .collect()
}

/// Loads a checkpoint into an existing store. Every store entry must be
/// present with a matching shape; extra entries in the file are an error.
pub fn load_checkpoint(store: &mut ParamStore, path: &Path) -> Result<(), AdError> {
    let entries = read_checkpoint(std::fs::File::open(path)?)?;
    if entries.len() != store.len() {
        return Err(bad(format!("file has {} tensors, model has {}", entries.len(), store.len())));
    }
    for (name, t) in entries {
        let id = store.id(&name)?;
        store.set_value(id, t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let mut store = ParamStore::new();
        store.add("a.w", Tensor::new(vec![2, 3], (0..6).map(|i| i as f64 * 0.5 - 1.0).collect()).unwrap(), true).unwrap();
        store.add("bn.mean", Tensor::vector(vec![f64::MIN_POSITIVE, 1e300]), false).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a.w");
        assert_eq!(&back[0].1, store.value(store.id("a.w").unwrap()));
        assert_eq!(back[1].1.data(), &[f64::MIN_POSITIVE, 1e300]);
        assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(read_checkpoint(&wrong[..]).is_err());
    }

    #[test]
    fn load_checks_names_and_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut a = ParamStore::new();
        a.add("w", Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        save_checkpoint(&a, &path).unwrap();
        let mut b = ParamStore::new();
        let id = b.add("w", Tensor::zeros(&[2]), true).unwrap();
        load_checkpoint(&mut b, &path).unwrap();
        assert_eq!(b.value(id).data(), &[1.0, 2.0]);
        let mut c = ParamStore::new();
        c.add("w", Tensor::zeros(&[3]), true).unwrap();
        assert!(load_checkpoint(&mut c, &path).is_err());
        let mut d = ParamStore::new();
        d.add("v", Tensor::zeros(&[2]), true).unwrap();
        assert!(load_checkpoint(&mut d, &path).is_err());
    }
}
