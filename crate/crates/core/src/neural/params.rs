use std::collections::HashMap;

use rand::Rng;

use super::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T> Tensor<T> {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Named parameter tensors. Shapes are fixed once a tensor is added.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: Vec::new(), index: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter '{name}'")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch { expected: n, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter '{name}'")));
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.tensors.push(Tensor { name, shape, data });
        Ok(ParamId(id))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> Result<ParamId> {
        let n = shape.iter().product();
        self.add(name, shape, vec![T::zero(); n])
    }

    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::of(bound * (2.0 * rng.random::<f64>() - 1.0))).collect();
        self.add(name, shape, data)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn require(&self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let id = self.id(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
        let t = self.get(id);
        if t.shape != shape {
            return Err(Error::Checkpoint(format!("tensor '{name}' has shape {:?}, expected {:?}", t.shape, shape)));
        }
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn flat(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::DimensionMismatch { expected: self.num_values(), got: values.len() });
        }
        let mut off = 0;
        for t in &mut self.tensors {
            let n = t.data.len();
            t.data.copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor { name: t.name.clone(), shape: t.shape.clone(), data: t.data.iter().map(|v| U::of(v.as_f64())).collect() })
                .collect(),
            index: self.index.clone(),
        }
    }

    /// Append every tensor of `other`, prefixing names.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &ParamStore<T>) -> Result<()> {
        for t in &other.tensors {
            self.add(format!("{prefix}{}", t.name), t.shape.clone(), t.data.clone())?;
        }
        Ok(())
    }

    /// Tensors whose name starts with `prefix`, with the prefix stripped.
    pub fn extract_prefixed(&self, prefix: &str) -> Result<ParamStore<T>> {
        let mut out = ParamStore::new();
        for t in &self.tensors {
            if let Some(rest) = t.name.strip_prefix(prefix) {
                out.add(rest, t.shape.clone(), t.data.clone())?;
            }
        }
        Ok(out)
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads { values: self.tensors.iter().map(|t| vec![T::zero(); t.len()]).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub(crate) values: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.values.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values.iter().flatten().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn flat(&self) -> Vec<T> {
        self.values.iter().flatten().copied().collect()
    }
}
