use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Magic bytes opening every parameter checkpoint.
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KBIETNS1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter {name}")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Serialize values (not gradients) in the checkpoint layout: magic,
    /// `u64` count, then per tensor `u64` name length, name bytes, `u64` rank,
    /// `u64` extents and little-endian `f64` payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in self.iter() {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Inverse of [`ParamSet::to_bytes`]. Loaded tensors have
    /// `requires_grad = false`; callers re-mark trainable ones.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8)? != CHECKPOINT_MAGIC {
            return Err(TensorError::Format("bad magic header".into()));
        }
        let count = cur.u64()? as usize;
        let mut set = ParamSet::new();
        for _ in 0..count {
            let name_len = cur.u64()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|e| TensorError::Format(format!("parameter name: {e}")))?
                .to_string();
            let rank = cur.u64()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let payload = cur.take(numel.checked_mul(8).ok_or_else(|| {
                TensorError::Format(format!("oversized tensor {name}"))
            })?)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            set.add(name, Tensor::new(shape, data)?)?;
        }
        if cur.pos != bytes.len() {
            return Err(TensorError::Format("trailing bytes after last tensor".into()));
        }
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TensorError::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::zeros(vec![2])).unwrap();
        assert!(p.add("w", Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn truncated_and_corrupt_inputs() {
        let mut p = ParamSet::new();
        p.add("w", Tensor::row(vec![1.0, 2.0]).unwrap()).unwrap();
        let bytes = p.to_bytes();
        assert!(ParamSet::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ParamSet::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(ParamSet::from_bytes(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let mut p = ParamSet::new();
        p.add("a/b", Tensor::matrix(2, 2, vec![0.1, -0.0, 1e-300, 3.5]).unwrap())
            .unwrap();
        p.save(&path).unwrap();
        let q = ParamSet::load(&path).unwrap();
        assert_eq!(p.to_bytes(), q.to_bytes());
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exact(
            vals in proptest::collection::vec(-1e6f64..1e6, 1..40),
            name in "[a-z./_]{1,12}",
        ) {
            let mut p = ParamSet::new();
            let n = vals.len();
            p.add(name.clone(), Tensor::row(vals.clone()).unwrap()).unwrap();
            p.add(format!("{name}#col"), Tensor::column(vals).unwrap()).unwrap();
            let bytes = p.to_bytes();
            let q = ParamSet::from_bytes(&bytes).unwrap();
            prop_assert_eq!(q.to_bytes(), bytes);
            let a = p.by_name(&name).unwrap().data();
            let b = q.by_name(&name).unwrap().data();
            prop_assert_eq!(a.len(), n);
            for (x, y) in a.iter().zip(b) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
