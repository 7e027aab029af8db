//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout: the 8-byte magic `WSRCKPT1`, then one record per tensor
//! until end of file. A record is a little-endian `u32` name length, the UTF-8
//! name, four little-endian `u32` dims and the little-endian `f64` payload.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WSRCKPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub(crate) fn new(len: usize) -> Self {
        Gradients {
            grads: vec![None; len],
        }
    }

    pub(crate) fn set(&mut self, id: ParamId, grad: Tensor<T>) {
        match &mut self.grads[id.0] {
            Some(existing) => {
                for (a, b) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(grad),
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::usage(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            value,
            grad: None,
        });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].grad.as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds a backward pass's gradients onto the stored ones.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            let Some(g) = g else { continue };
            match &mut p.grad {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += *b;
                    }
                }
                slot @ None => *slot = Some(g.clone()),
            }
        }
    }

    /// Name of the first parameter holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.params
            .iter()
            .find(|p| !p.value.all_finite())
            .map(|p| p.name.as_str())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.num_scalars() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        for p in &self.params {
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name);
            for d in p.value.shape().0 {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_checkpoint_bytes())?;
        Ok(())
    }

    /// Overwrites every parameter from checkpoint records, matching by name.
    ///
    /// The checkpoint must contain exactly this store's names and shapes.
    pub fn load_checkpoint_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let records = read_records(bytes)?;
        if records.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, model expects {}",
                records.len(),
                self.params.len()
            )));
        }
        for (name, shape, payload) in records {
            let id = self
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
            let have = self.params[id.0].value.shape();
            if have != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {shape}, model expects {have}"
                )));
            }
            let data = payload.into_iter().map(T::from_f64_lossy).collect();
            self.params[id.0].value = Tensor::from_vec(shape, data)?;
        }
        Ok(())
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = fs::read(path)?;
        self.load_checkpoint_bytes(&bytes)
    }
}

/// Parses raw checkpoint records without a model to match against.
pub fn read_records(bytes: &[u8]) -> Result<Vec<(String, Shape, Vec<f64>)>> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("missing WSRCKPT1 magic".into()));
    }
    let mut pos = 8;
    let take = |n: usize, pos: &mut usize| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated record at byte {pos}")))?;
        let s = &bytes[*pos..end];
        *pos = end;
        Ok(s)
    };
    let mut records = Vec::new();
    while pos < bytes.len() {
        let len = u32::from_le_bytes(take(4, &mut pos)?.try_into().unwrap()) as usize;
        let start = pos;
        let name = std::str::from_utf8(take(len, &mut pos)?)
            .map_err(|_| Error::Checkpoint(format!("name at byte {start} is not UTF-8")))?
            .to_string();
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = u32::from_le_bytes(take(4, &mut pos)?.try_into().unwrap()) as usize;
        }
        let shape = Shape(dims);
        let payload = take(shape.numel() * 8, &mut pos)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, shape, payload));
    }
    Ok(records)
}
