//! Checkpoint file: `LSLMCKPT` magic, a little-endian `u64` header length,
//! a JSON header, then raw little-endian `f32` payloads in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{numel, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LSLMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the payload section.
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// Free-form metadata (model config echo, parameter groups, ...).
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    params: &ParamStore,
    metadata: serde_json::Value,
) -> Result<()> {
    let mut offset = 0u64;
    let tensors = params
        .iter()
        .map(|(name, t)| {
            let nbytes = (t.len() * 4) as u64;
            let e = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset, nbytes };
            offset += nbytes;
            e
        })
        .collect();
    let header = CheckpointHeader { format_version: FORMAT_VERSION, metadata, tensors };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in params.iter() {
        let mut buf = Vec::with_capacity(t.len() * 4);
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(CheckpointHeader, ParamStore)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let mut store = ParamStore::new();
    for e in &header.tensors {
        let n = numel(&e.shape);
        if e.nbytes != (n * 4) as u64 {
            return Err(Error::Checkpoint(format!("{}: size does not match shape", e.name)));
        }
        let start = e.offset as usize;
        let bytes = payload
            .get(start..start + n * 4)
            .ok_or_else(|| Error::Checkpoint(format!("{}: payload truncated", e.name)))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(e.name.clone(), Tensor::new(e.shape.clone(), data)?)?;
    }
    Ok((header, store))
}

pub fn save(path: impl AsRef<Path>, params: &ParamStore, metadata: serde_json::Value) -> Result<()> {
    let f = File::create(path.as_ref())?;
    write_checkpoint(BufWriter::new(f), params, metadata)
}

pub fn load(path: impl AsRef<Path>) -> Result<(CheckpointHeader, ParamStore)> {
    let f = File::open(path.as_ref())?;
    read_checkpoint(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        store.insert("b.weight", Tensor::randn(vec![3, 4], 1.0, &mut rng)).unwrap();
        store.insert("a.bias", Tensor::randn(vec![5], 1.0, &mut rng)).unwrap();
        store.insert("c", Tensor::new(vec![2], vec![-0.0, f32::MIN_POSITIVE]).unwrap()).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &store, serde_json::json!({"k": 1})).unwrap();
        let (header, back) = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(header.metadata["k"], 1);
        for ((n1, t1), (n2, t2)) in store.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back, header.metadata).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn header_offsets_follow_order() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::zeros(vec![2, 2])).unwrap();
        store.insert("y", Tensor::zeros(vec![3])).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &store, serde_json::Value::Null).unwrap();
        let (h, _) = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(h.tensors[0].offset, 0);
        assert_eq!(h.tensors[1].offset, 16);
        assert_eq!(h.tensors[1].nbytes, 12);
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::zeros(vec![4])).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &store, serde_json::Value::Null).unwrap();
        bytes.truncate(bytes.len() - 2);
        assert!(read_checkpoint(&bytes[..]).is_err());
    }
}
