//! Named parameter storage with per-parameter gradient buffers, plus the
//! binary tensor-payload codec shared with checkpoints.
//!
//! Payload layout, all integers 64-bit little-endian:
//! entry count, then per entry: name length + UTF-8 name, rank, dims,
//! values as IEEE-754 f64 bits.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;

use crate::error::{RecallError, Result};
use crate::numcore::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    tensor: Tensor,
    grad: Vec<f64>,
}

/// Ordered collection of named parameter tensors. Gradients accumulate into
/// the paired buffers and are only cleared by an explicit `zero_grads`.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(RecallError::Config(format!("duplicate parameter '{name}'")));
        }
        let id = self.entries.len();
        let grad = vec![0.0; tensor.numel()];
        self.entries.push(Entry {
            name: name.to_string(),
            tensor,
            grad,
        });
        self.by_name.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    /// Parameters whose name starts with `prefix`, in insertion order.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| self.name(id).starts_with(prefix))
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.fill(0.0);
        }
    }

    pub fn total_values(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    // ── initializers ────────────────────────────────────────────────

    /// Uniform(-scale, scale) tensor, for embedding tables.
    pub fn init_uniform<R: Rng>(rng: &mut R, shape: Vec<usize>, scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        Tensor::new(shape, data).expect("shape/data mismatch in init")
    }

    /// Scaled-uniform fan-in init for weight matrices: U(-s, s), s = 1/sqrt(fan_in).
    pub fn init_fan_in<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
        let s = 1.0 / (cols as f64).sqrt();
        Self::init_uniform(rng, vec![rows, cols], s)
    }

    /// Overwrites every parameter with U(-scale, scale) draws. Gradient
    /// checks use this to move off the training init, whose tiny magnitudes
    /// and zero biases put ReLU pre-activations inside the step width.
    pub fn randomize_uniform<R: Rng>(&mut self, rng: &mut R, scale: f64) {
        for e in &mut self.entries {
            for v in e.tensor.data_mut() {
                *v = rng.gen_range(-scale..scale);
            }
        }
    }

    // ── payload codec ───────────────────────────────────────────────

    /// Writes tensors whose name starts with `prefix` (their full names kept).
    pub fn write_payload<W: Write>(&self, w: &mut W, prefix: &str) -> Result<()> {
        let selected: Vec<&Entry> = self
            .entries
            .iter()
            .filter(|e| e.name.starts_with(prefix))
            .collect();
        w.write_all(&(selected.len() as u64).to_le_bytes())?;
        for e in selected {
            write_str(w, &e.name)?;
            let shape = e.tensor.shape();
            w.write_all(&(shape.len() as u64).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in e.tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads a payload and overwrites matching parameters in place. Every
    /// entry in the payload must already exist here with an identical shape.
    pub fn read_payload<R: Read>(&mut self, r: &mut R) -> Result<()> {
        let count = read_u64(r)?;
        for _ in 0..count {
            let name = read_str(r)?;
            let rank = read_u64(r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = vec![0.0; numel];
            for v in &mut data {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            let id = self
                .id(&name)
                .ok_or_else(|| RecallError::Format(format!("payload names unknown parameter '{name}'")))?;
            if self.tensor(id).shape() != shape.as_slice() {
                return Err(RecallError::Format(format!(
                    "parameter '{name}' shape {:?} does not match payload {:?}",
                    self.tensor(id).shape(),
                    shape
                )));
            }
            *self.tensor_mut(id) = Tensor::new(shape, data)?;
        }
        Ok(())
    }
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u64).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > (1 << 24) {
        return Err(RecallError::Format(format!("string length {len} out of range")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| RecallError::Format("invalid UTF-8 in payload".into()))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
