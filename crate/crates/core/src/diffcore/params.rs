//! Named trainable parameters and the checkpoint format.
//!
//! Checkpoint layout (little-endian, stable across runs and precisions):
//!
//! ```text
//! magic   b"MNCKPT01"
//! count   u32
//! repeat count times:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, dims u64 x rank
//!   values   f64 x product(dims), row-major
//! ```

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MNCKPT01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Ordered collection of named parameter tensors.
///
/// Tensors live behind `Arc` so a tape can hold them without copying; the
/// optimizer takes unique ownership again once no tape is alive.
#[derive(Clone, Debug)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<F>>>,
    index: HashMap<String, ParamId>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        let id = ParamId(self.tensors.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(Arc::new(value));
        id
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn shared(&self, id: ParamId) -> Arc<Tensor<F>> {
        Arc::clone(&self.tensors[id.0])
    }

    /// Mutable access; clones the tensor if a tape still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Copy of the whole store in another precision.
    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.tensors) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Reads a checkpoint into a fresh store, preserving stored order.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let count = read_u32(&mut r)?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                data.push(F::lit(f64::from_le_bytes(b)));
            }
            if store.id(&name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
            store.add(name, Tensor::new(shape, data)?);
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }

    /// Overwrites values from `other`, matching by name and shape.
    pub fn assign_from(&mut self, other: &ParamStore<F>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, checkpoint has {}",
                self.len(),
                other.len()
            )));
        }
        for id in other.ids() {
            let name = other.name(id);
            let mine = self
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if self.get(mine).shape() != other.get(id).shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
            }
            self.tensors[mine.0] = other.shared(id);
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_preserves_names_shapes_and_values() {
        let mut store = ParamStore::<f32>::new();
        store.add("enc.w", Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -4.5]]).unwrap());
        store.add("enc.b", Tensor::vector(&[0.25, -0.125]));
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        let back = ParamStore::<f32>::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.name(ParamId(0)), "enc.w");
        assert_eq!(back.get(ParamId(0)), store.get(ParamId(0)));
        assert_eq!(back.get(ParamId(1)).shape(), &[2]);
    }

    #[test]
    fn truncated_checkpoint_is_an_error() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::vector(&[1.0, 2.0, 3.0]));
        let mut buf = Vec::new();
        store.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(ParamStore::<f64>::read_from(buf.as_slice()).is_err());
        assert!(ParamStore::<f64>::read_from(&b"NOTACKPT"[..]).is_err());
    }

    #[test]
    fn count_is_total_scalars() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::zeros(&[20, 10]));
        store.add("b", Tensor::zeros(&[20]));
        assert_eq!(store.count(), 220);
    }
}
