//! Named parameter sets and the on-disk checkpoint container.
//!
//! A checkpoint is the ASCII magic `STFGCRN1` followed by records until end
//! of file. Each record is a little-endian `u32` name length, the UTF-8
//! name, a `u32` rank, `rank` `u32` dimensions, and the values as `f32` LE.

use super::{Gradients, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STFGCRN1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Parameters placed on a tape, by name.
#[derive(Debug, Clone, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    /// Panics on an unknown name: parameter names are fixed at construction.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Rebinds `name` to another tape variable, e.g. to differentiate with
    /// respect to a single tensor while the rest stay frozen.
    pub fn insert(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }

    /// Moves gradients out of a backward pass, keyed by parameter name.
    /// Parameters that did not influence the loss get zeros.
    pub fn collect<T: Scalar>(&self, tape: &Tape<T>, grads: &mut Gradients<T>) -> BTreeMap<String, Vec<T>> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| vec![T::zero(); tape.value(v).numel()]);
                (name.clone(), g)
            })
            .collect()
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.param(v.clone())))
                .collect(),
        }
    }

    /// Registers every tensor as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), tape.constant(v.clone())))
                .collect(),
        }
    }
}

/// Writes `params` plus scalar metadata (stored as rank-0 records under
/// `meta/<key>`).
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    params: &ModelParams<T>,
    meta: &BTreeMap<String, f64>,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let mut record = |name: &str, shape: &[usize], values: &mut dyn Iterator<Item = f32>| {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, value) in meta {
        record(&format!("meta/{name}"), &[], &mut std::iter::once(*value as f32));
    }
    for (name, t) in params.iter() {
        record(name, t.shape(), &mut t.data().iter().map(|v| v.as_f64() as f32));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams<f32>, BTreeMap<String, f64>)> {
    let fail = |msg: String| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic".into()));
    }
    let mut cur = Cursor { bytes: &bytes, pos: 8 };
    let truncated = || fail("truncated record".into());
    let mut params = ModelParams::new();
    let mut meta = BTreeMap::new();
    while cur.remaining() > 0 {
        let name_len = cur.u32().ok_or_else(truncated)?;
        let name = cur.take(name_len).ok_or_else(truncated)?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| fail("non-UTF-8 name".into()))?;
        let rank = cur.u32().ok_or_else(truncated)?;
        if rank > 8 {
            return Err(fail(format!("implausible rank {rank} for {name}")));
        }
        let shape = (0..rank)
            .map(|_| cur.u32().ok_or_else(truncated))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.saturating_mul(4) <= cur.remaining())
            .ok_or_else(truncated)?;
        let values: Vec<f32> = cur
            .take(numel * 4)
            .ok_or_else(truncated)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(key) = name.strip_prefix("meta/") {
            let v = values.first().ok_or_else(|| fail(format!("empty metadata {key}")))?;
            meta.insert(key.to_string(), *v as f64);
        } else {
            params.insert(name, Tensor::new(&shape, values)?);
        }
    }
    Ok((params, meta))
}
