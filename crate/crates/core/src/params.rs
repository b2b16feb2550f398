//! Named parameter storage, tape binding and the checkpoint file.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "HOICKPT1"
//! count    u32      number of tensors
//! per tensor, in declaration order:
//!   name_len u32, name (UTF-8), rank u32, dims u64 × rank
//! then per tensor, same order: numel × f64 LE
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use hoi_tensor::init::uniform_fan_in;
use hoi_tensor::{Tape, Tensor, Var};
use rand::Rng;

use crate::error::{HoiError, Result};

const MAGIC: &[u8; 8] = b"HOICKPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
    by_name: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            trainable,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, true)
    }

    /// Adds a value that is stored and checkpointed but never updated.
    pub fn add_frozen(&mut self, name: &str, value: Tensor) -> ParamId {
        self.insert(name, value, false)
    }

    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        name: &str,
        shape: &[usize],
        fan_in: usize,
    ) -> ParamId {
        self.add(name, uniform_fan_in(rng, shape, fan_in))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Records every parameter on `tape`. With `trainable` false all of them
    /// are constants; otherwise trainable entries become gradient leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                if trainable && e.trainable {
                    tape.param(e.value.clone())
                } else {
                    tape.constant(e.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Replaces every value with the one stored under the same name in
    /// `other`; names and shapes must match exactly.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(HoiError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(HoiError::Checkpoint(format!(
                    "expected {} {:?}, found {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.num_scalars() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.value.rank() as u32).to_le_bytes());
            for &d in e.value.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for e in &self.entries {
            for v in e.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a checkpoint. Every entry is marked trainable; use
    /// [`ParamStore::copy_from`] to load values into a model's store.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(HoiError::Checkpoint("bad magic".into()));
        }
        let count = r.u32()? as usize;
        let mut headers = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| HoiError::Checkpoint("name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            headers.push((name, shape));
        }
        let mut store = ParamStore::new();
        for (name, shape) in headers {
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let value = Tensor::new(shape, data)
                .map_err(|e| HoiError::Checkpoint(format!("{name}: {e}")))?;
            if store.by_name.contains_key(&name) {
                return Err(HoiError::Checkpoint(format!("duplicate tensor {name}")));
            }
            store.add(&name, value);
        }
        if r.pos != bytes.len() {
            return Err(HoiError::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| HoiError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HoiError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| HoiError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Tape handles for every parameter of a store, indexed by [`ParamId`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Rebinds one parameter to another tape value, e.g. a probe variable
    /// for finite differences.
    pub fn with_var(mut self, id: ParamId, var: Var) -> Bound {
        self.vars[id.0] = var;
        self
    }
}
